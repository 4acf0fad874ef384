#pragma once

#include <array>

#include "foveacast/error.hpp"

namespace foveacast {

// Unit head-orientation rotation. q and -q describe the same rotation; all
// comparison helpers treat them as equal.
struct Quaternion {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const;
    double dot(const Quaternion& o) const;
    Quaternion negated() const { return {-w, -x, -y, -z}; }

    // Apply the rotation to a 3-vector (assumes *this is unit).
    std::array<double, 3> rotate(const std::array<double, 3>& v) const;
};

// Normalized screen coordinates in [0,1]^2.
struct GazePoint {
    double x = 0.0;
    double y = 0.0;
    // Set when the raw sample fell outside the calibration bounds and was clamped.
    bool clamped = false;
};

struct GazeBounds {
    double xmin, xmax, ymin, ymax;
};

// Scale q to unit length, preserving direction. Throws ZeroNorm for ||q|| <= 1e-12.
Quaternion quat_normalize(const Quaternion& q);

// Shorter-arc spherical interpolation between unit quaternions. If
// dot(q0,q1) < 0, q1 is sign-flipped first; near-parallel inputs
// (sin(theta) < 1e-6) fall back to normalized linear interpolation.
Quaternion slerp(const Quaternion& q0, const Quaternion& q1, double t);

// True when qa and qb are the same rotation (sign-insensitive) within tol on
// each component.
bool same_rotation(const Quaternion& qa, const Quaternion& qb, double tol);

// Affine map of raw device coordinates into [0,1]^2. Out-of-bounds values are
// clamped and flagged, not dropped.
GazePoint normalize_gaze(double raw_x, double raw_y, const GazeBounds& bounds);

// Inverse of normalize_gaze for in-bounds points.
void denormalize_gaze(const GazePoint& g, const GazeBounds& bounds, double& raw_x,
                      double& raw_y);

// Rotation about +z by angle (radians); used by tests and the synthetic generator.
Quaternion quat_axis_angle(double ax, double ay, double az, double angle);

// Hamilton product a*b.
Quaternion quat_mul(const Quaternion& a, const Quaternion& b);

}  // namespace foveacast
