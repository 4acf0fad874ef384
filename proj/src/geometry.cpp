#include "foveacast/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace foveacast {

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

double Quaternion::dot(const Quaternion& o) const {
    return w * o.w + x * o.x + y * o.y + z * o.z;
}

std::array<double, 3> Quaternion::rotate(const std::array<double, 3>& v) const {
    // v' = q v q^-1 expanded via the cross-product form.
    const double tx = 2.0 * (y * v[2] - z * v[1]);
    const double ty = 2.0 * (z * v[0] - x * v[2]);
    const double tz = 2.0 * (x * v[1] - y * v[0]);
    return {v[0] + w * tx + (y * tz - z * ty), v[1] + w * ty + (z * tx - x * tz),
            v[2] + w * tz + (x * ty - y * tx)};
}

Quaternion quat_normalize(const Quaternion& q) {
    const double n = q.norm();
    if (n <= 1e-12) throw ZeroNorm("quat_normalize");
    return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Quaternion slerp(const Quaternion& q0, const Quaternion& q1_in, double t) {
    Quaternion q1 = q1_in;
    double d = q0.dot(q1);
    // Shorter great-circle arc: flip the far endpoint.
    if (d < 0.0) {
        q1 = q1.negated();
        d = -d;
    }
    d = std::min(d, 1.0);
    const double theta = std::acos(d);
    const double s = std::sin(theta);
    double a, b;
    if (s < 1e-6) {
        // Near-identical endpoints: nlerp avoids the 1/sin blowup.
        a = 1.0 - t;
        b = t;
    } else {
        a = std::sin((1.0 - t) * theta) / s;
        b = std::sin(t * theta) / s;
    }
    Quaternion out{a * q0.w + b * q1.w, a * q0.x + b * q1.x, a * q0.y + b * q1.y,
                   a * q0.z + b * q1.z};
    return quat_normalize(out);
}

bool same_rotation(const Quaternion& qa, const Quaternion& qb, double tol) {
    const Quaternion qc = qa.dot(qb) < 0.0 ? qb.negated() : qb;
    return std::abs(qa.w - qc.w) <= tol && std::abs(qa.x - qc.x) <= tol &&
           std::abs(qa.y - qc.y) <= tol && std::abs(qa.z - qc.z) <= tol;
}

GazePoint normalize_gaze(double raw_x, double raw_y, const GazeBounds& b) {
    if (!(b.xmax > b.xmin) || !(b.ymax > b.ymin)) throw DegenerateBounds("normalize_gaze");
    GazePoint g;
    g.x = (raw_x - b.xmin) / (b.xmax - b.xmin);
    g.y = (raw_y - b.ymin) / (b.ymax - b.ymin);
    if (g.x < 0.0 || g.x > 1.0 || g.y < 0.0 || g.y > 1.0) {
        g.x = std::clamp(g.x, 0.0, 1.0);
        g.y = std::clamp(g.y, 0.0, 1.0);
        g.clamped = true;
    }
    return g;
}

void denormalize_gaze(const GazePoint& g, const GazeBounds& b, double& raw_x, double& raw_y) {
    raw_x = b.xmin + g.x * (b.xmax - b.xmin);
    raw_y = b.ymin + g.y * (b.ymax - b.ymin);
}

Quaternion quat_axis_angle(double ax, double ay, double az, double angle) {
    const double n = std::sqrt(ax * ax + ay * ay + az * az);
    if (n <= 1e-12) throw ZeroNorm("quat_axis_angle");
    const double h = 0.5 * angle;
    const double s = std::sin(h) / n;
    return {std::cos(h), ax * s, ay * s, az * s};
}

Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

}  // namespace foveacast
