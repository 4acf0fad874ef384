#include "foveacast/metrics.hpp"

#include <cstdio>

#include <json.hpp>

using nlohmann::json;

namespace foveacast {

void gate_summary(const Mat<double>& gates, MetricsReport& report) {
    if (gates.rows == 0) throw EmptyInput("gate_summary");
    if (gates.cols != 3) throw ShapeMismatch("gate_summary expects N x 3, got " + gates.shape_str());
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int r = 0; r < gates.rows; ++r) sum += gates(r, c);
        const double mean = sum / gates.rows;
        double sq = 0.0;
        for (int r = 0; r < gates.rows; ++r) {
            const double d = gates(r, c) - mean;
            sq += d * d;
        }
        report.gate_mean[c] = mean;
        report.gate_std[c] = std::sqrt(sq / gates.rows);
    }
}

std::string report_to_json(const MetricsReport& r) {
    json j;
    j["samples"] = r.samples;
    j["hit_radius"] = r.hit_radius;
    j["fov_deg"] = r.fov_deg;
    json steps = json::array();
    for (size_t s = 0; s < r.mse.size(); ++s) {
        json e;
        e["step"] = s + 1;
        e["mse"] = r.mse[s];
        e["hit_rate"] = r.hit_rate[s];
        e["mean_euclidean"] = r.mean_euclidean[s];
        e["mean_angular_deg"] = r.mean_angular_deg[s];
        if (s >= 1 && s - 1 < r.direction_error_deg.size()) {
            e["direction_error_deg"] = r.direction_error_deg[s - 1];
            e["direction_excluded"] = r.direction_excluded[s - 1];
        }
        steps.push_back(e);
    }
    j["steps"] = steps;
    j["gates"] = {{"gaze", {{"mean", r.gate_mean[0]}, {"std", r.gate_std[0]}}},
                  {"head", {{"mean", r.gate_mean[1]}, {"std", r.gate_std[1]}}},
                  {"scene", {{"mean", r.gate_mean[2]}, {"std", r.gate_std[2]}}}};
    return j.dump(2) + "\n";
}

std::string report_to_csv(const MetricsReport& r) {
    std::string out =
        "step,mse,hit_rate,mean_euclidean,mean_angular_deg,direction_error_deg,direction_"
        "excluded\n";
    char buf[256];
    for (size_t s = 0; s < r.mse.size(); ++s) {
        if (s >= 1 && s - 1 < r.direction_error_deg.size())
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%lld\n", s + 1,
                          r.mse[s], r.hit_rate[s], r.mean_euclidean[s], r.mean_angular_deg[s],
                          r.direction_error_deg[s - 1],
                          static_cast<long long>(r.direction_excluded[s - 1]));
        else
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,,\n", s + 1, r.mse[s],
                          r.hit_rate[s], r.mean_euclidean[s], r.mean_angular_deg[s]);
        out += buf;
    }
    return out;
}

}  // namespace foveacast
