#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <random>

#include "foveacast/nn.hpp"

namespace foveacast {

// Central-difference gradient verification. Meant for 64-bit mode; float
// round-off drowns the comparison.
//
// loss_fn   computes the scalar objective (forward only).
// grad_fn   zeroes grads, then runs forward + backward once.
// For params larger than max_coords, a seeded random subset of coordinates is
// checked (>= 200 by default).
template <typename T>
double grad_check(const std::function<double()>& loss_fn, const std::function<void()>& grad_fn,
                  const ParamRegistry<T>& params, double eps = 1e-5, int max_coords = 200,
                  uint64_t seed = 12345) {
    grad_fn();
    // Snapshot analytic gradients before the probing passes disturb caches.
    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (const auto& np : params) analytic.push_back(np.param->grad.data);

    std::mt19937_64 rng(seed);
    double max_rel = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Param<T>& p = *params[pi].param;
        const size_t n = p.value.data.size();
        std::vector<size_t> coords;
        if (n <= static_cast<size_t>(max_coords)) {
            coords.resize(n);
            for (size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            std::uniform_int_distribution<size_t> dist(0, n - 1);
            coords.resize(static_cast<size_t>(max_coords));
            for (auto& c : coords) c = dist(rng);
        }
        for (size_t c : coords) {
            const T saved = p.value.data[c];
            p.value.data[c] = saved + static_cast<T>(eps);
            const double lp = loss_fn();
            p.value.data[c] = saved - static_cast<T>(eps);
            const double lm = loss_fn();
            p.value.data[c] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double a = static_cast<double>(analytic[pi][c]);
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace foveacast
