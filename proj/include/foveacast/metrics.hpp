#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "foveacast/mat.hpp"

namespace foveacast {

struct MetricsReport {
    std::vector<double> mse;                // per step, unweighted
    std::vector<double> hit_rate;           // fraction within radius r (inclusive)
    std::vector<double> mean_euclidean;     // normalized units
    std::vector<double> mean_angular_deg;   // euclidean * fov (flat viewport map)
    std::vector<double> direction_error_deg;  // steps 2..k
    std::vector<int64_t> direction_excluded;  // degenerate pairs skipped per step
    double gate_mean[3] = {0.0, 0.0, 0.0};    // gaze, head, scene
    double gate_std[3] = {0.0, 0.0, 0.0};
    int64_t samples = 0;
    double hit_radius = 0.1;
    double fov_deg = 100.0;
};

// Per-step error metrics over stacked predictions. preds/targets: k matrices
// of N x 2 in normalized gaze coordinates. Angular error uses the small-angle
// map (error scaled by the FOV width), adequate at desk scale.
template <typename T>
void compute_step_metrics(const std::vector<Mat<T>>& preds, const std::vector<Mat<T>>& targets,
                          double r, double fov_deg, MetricsReport& report) {
    if (preds.empty() || preds[0].rows == 0) throw EmptyInput("compute_step_metrics");
    if (preds.size() != targets.size())
        throw ShapeMismatch("compute_step_metrics: " + std::to_string(preds.size()) + " vs " +
                            std::to_string(targets.size()) + " steps");
    const size_t k = preds.size();
    report.mse.assign(k, 0.0);
    report.hit_rate.assign(k, 0.0);
    report.mean_euclidean.assign(k, 0.0);
    report.mean_angular_deg.assign(k, 0.0);
    report.hit_radius = r;
    report.fov_deg = fov_deg;
    const int n = preds[0].rows;
    report.samples = n;
    for (size_t s = 0; s < k; ++s) {
        preds[s].require_same_shape(targets[s], "compute_step_metrics");
        double se = 0.0, dist_sum = 0.0;
        int64_t hits = 0;
        for (int i = 0; i < n; ++i) {
            const double dx = static_cast<double>(preds[s](i, 0)) - static_cast<double>(targets[s](i, 0));
            const double dy = static_cast<double>(preds[s](i, 1)) - static_cast<double>(targets[s](i, 1));
            const double d2 = dx * dx + dy * dy;
            const double d = std::sqrt(d2);
            se += d2;
            dist_sum += d;
            if (d <= r) ++hits;
        }
        report.mse[s] = se / n;
        report.hit_rate[s] = static_cast<double>(hits) / n;
        report.mean_euclidean[s] = dist_sum / n;
        report.mean_angular_deg[s] = report.mean_euclidean[s] * fov_deg;
    }
}

// Mean angle between predicted and true inter-step displacement, for each
// consecutive step pair (2..k). Pairs whose true displacement norm is
// <= 1e-6 — or whose predicted displacement is numerically zero, where the
// angle is undefined — are excluded and counted.
template <typename T>
void direction_error(const std::vector<Mat<T>>& preds, const std::vector<Mat<T>>& targets,
                     MetricsReport& report) {
    const size_t k = preds.size();
    report.direction_error_deg.assign(k >= 1 ? k - 1 : 0, 0.0);
    report.direction_excluded.assign(k >= 1 ? k - 1 : 0, 0);
    constexpr double rad2deg = 180.0 / 3.14159265358979323846;
    for (size_t s = 1; s < k; ++s) {
        const int n = preds[s].rows;
        double sum = 0.0;
        int64_t used = 0, excluded = 0;
        for (int i = 0; i < n; ++i) {
            const double tx = static_cast<double>(targets[s](i, 0)) - static_cast<double>(targets[s - 1](i, 0));
            const double ty = static_cast<double>(targets[s](i, 1)) - static_cast<double>(targets[s - 1](i, 1));
            const double px = static_cast<double>(preds[s](i, 0)) - static_cast<double>(preds[s - 1](i, 0));
            const double py = static_cast<double>(preds[s](i, 1)) - static_cast<double>(preds[s - 1](i, 1));
            const double tn = std::sqrt(tx * tx + ty * ty);
            const double pn = std::sqrt(px * px + py * py);
            if (tn <= 1e-6 || pn <= 1e-12) {
                ++excluded;
                continue;
            }
            const double c = std::clamp((tx * px + ty * py) / (tn * pn), -1.0, 1.0);
            sum += std::acos(c) * rad2deg;
            ++used;
        }
        report.direction_error_deg[s - 1] = used > 0 ? sum / static_cast<double>(used) : 0.0;
        report.direction_excluded[s - 1] = excluded;
    }
}

// Mean and standard deviation per gate column over an N x 3 stack
// (gaze, head, scene).
void gate_summary(const Mat<double>& gates, MetricsReport& report);

std::string report_to_json(const MetricsReport& report);
std::string report_to_csv(const MetricsReport& report);

}  // namespace foveacast
