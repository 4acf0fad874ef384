#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "foveacast/metrics.hpp"
#include "foveacast/model.hpp"
#include "foveacast/rng.hpp"

using namespace foveacast;

namespace {

std::vector<Mat<double>> random_stack(int k, int n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Mat<double>> v;
    for (int s = 0; s < k; ++s) {
        Mat<double> m(n, 2);
        for (auto& x : m.data) x = uniform_double(rng);
        v.push_back(m);
    }
    return v;
}

}  // namespace

TEST_CASE("perfect predictions score zero error and full hits") {
    auto targets = random_stack(3, 50, 1);
    MetricsReport r;
    compute_step_metrics(targets, targets, 0.1, 100.0, r);
    REQUIRE(r.mse.size() == 3);
    for (int s = 0; s < 3; ++s) {
        CHECK(r.mse[static_cast<size_t>(s)] == 0.0);
        CHECK(r.hit_rate[static_cast<size_t>(s)] == 1.0);
        CHECK(r.mean_euclidean[static_cast<size_t>(s)] == 0.0);
        CHECK(r.mean_angular_deg[static_cast<size_t>(s)] == 0.0);
    }
    CHECK(r.samples == 50);
}

TEST_CASE("a miss of exactly the radius still counts as a hit") {
    Mat<double> pred(1, 2, {0.5, 0.5});
    Mat<double> target(1, 2, {0.5 + 0.1, 0.5});
    MetricsReport r;
    compute_step_metrics<double>({pred}, {target}, 0.1, 100.0, r);
    CHECK(r.hit_rate[0] == 1.0);  // inclusive boundary
    CHECK(r.mse[0] == doctest::Approx(0.01));
    CHECK(r.mean_euclidean[0] == doctest::Approx(0.1));
    CHECK(r.mean_angular_deg[0] == doctest::Approx(10.0));

    // A hair past the radius is a miss.
    Mat<double> past(1, 2, {0.5 + 0.1 + 1e-9, 0.5});
    compute_step_metrics<double>({pred}, {past}, 0.1, 100.0, r);
    CHECK(r.hit_rate[0] == 0.0);
}

TEST_CASE("step metrics agree with a plain-loop oracle") {
    auto preds = random_stack(3, 200, 2);
    auto targets = random_stack(3, 200, 3);
    MetricsReport r;
    compute_step_metrics(preds, targets, 0.15, 90.0, r);
    for (size_t s = 0; s < 3; ++s) {
        double se = 0.0, dist = 0.0;
        int hits = 0;
        for (int i = 0; i < 200; ++i) {
            const double dx = preds[s](i, 0) - targets[s](i, 0);
            const double dy = preds[s](i, 1) - targets[s](i, 1);
            se += dx * dx + dy * dy;
            dist += std::hypot(dx, dy);
            if (std::hypot(dx, dy) <= 0.15) ++hits;
        }
        CHECK(std::abs(r.mse[s] - se / 200.0) <= 1e-7);
        CHECK(std::abs(r.mean_euclidean[s] - dist / 200.0) <= 1e-7);
        CHECK(std::abs(r.hit_rate[s] - hits / 200.0) <= 1e-12);
        CHECK(std::abs(r.mean_angular_deg[s] - r.mean_euclidean[s] * 90.0) <= 1e-12);
    }
}

TEST_CASE("hit rate grows with the radius") {
    auto preds = random_stack(1, 500, 4);
    auto targets = random_stack(1, 500, 5);
    double prev = -1.0;
    for (double radius : {0.01, 0.05, 0.1, 0.2, 0.5, 1.5}) {
        MetricsReport r;
        compute_step_metrics(preds, targets, radius, 100.0, r);
        CHECK(r.hit_rate[0] >= prev);
        prev = r.hit_rate[0];
    }
    CHECK(prev == 1.0);  // radius covers the whole unit square
}

TEST_CASE("per-step mse matches the training loss under a one-hot weight") {
    auto preds = random_stack(3, 64, 6);
    auto targets = random_stack(3, 64, 7);
    MetricsReport r;
    compute_step_metrics(preds, targets, 0.1, 100.0, r);
    CHECK(r.mse[1] == doctest::Approx(spatial_loss(preds, targets, {0.0, 1.0, 0.0})));
    CHECK(r.mse[2] == doctest::Approx(mse_loss(preds[2], targets[2])));
}

TEST_CASE("direction error hits the textbook angles") {
    // True displacement +x; predictions parallel, orthogonal, anti-parallel.
    Mat<double> t1(3, 2, {0.2, 0.5, 0.2, 0.5, 0.2, 0.5});
    Mat<double> t2(3, 2, {0.4, 0.5, 0.4, 0.5, 0.4, 0.5});
    Mat<double> p1(3, 2, {0.3, 0.3, 0.3, 0.3, 0.3, 0.3});
    Mat<double> p2(3, 2, {0.5, 0.3, 0.3, 0.5, 0.1, 0.3});
    MetricsReport r;
    direction_error<double>({p1, p2}, {t1, t2}, r);
    REQUIRE(r.direction_error_deg.size() == 1);
    CHECK(r.direction_excluded[0] == 0);
    CHECK(r.direction_error_deg[0] == doctest::Approx((0.0 + 90.0 + 180.0) / 3.0));

    // The angle ignores displacement magnitude.
    Mat<double> p2_scaled(3, 2, {2.3, 0.3, 0.3, 2.5, -1.7, 0.3});
    MetricsReport r2;
    direction_error<double>({p1, p2_scaled}, {t1, t2}, r2);
    CHECK(r2.direction_error_deg[0] == doctest::Approx(r.direction_error_deg[0]));
}

TEST_CASE("degenerate displacements are excluded and counted per branch") {
    // Row 0: true displacement is zero -> excluded. Row 1: prediction does
    // not move -> excluded. Row 2: usable, 0 degrees.
    Mat<double> t1(3, 2, {0.5, 0.5, 0.2, 0.2, 0.1, 0.1});
    Mat<double> t2(3, 2, {0.5, 0.5, 0.5, 0.2, 0.3, 0.1});
    Mat<double> p1(3, 2, {0.4, 0.4, 0.3, 0.3, 0.6, 0.6});
    Mat<double> p2(3, 2, {0.7, 0.4, 0.3, 0.3, 0.8, 0.6});
    MetricsReport r;
    direction_error<double>({p1, p2}, {t1, t2}, r);
    CHECK(r.direction_excluded[0] == 2);
    CHECK(r.direction_error_deg[0] == doctest::Approx(0.0));

    // All rows degenerate: the mean reports 0 rather than 0/0.
    MetricsReport all;
    direction_error<double>({p1, p1}, {t1, t1}, all);
    CHECK(all.direction_excluded[0] == 3);
    CHECK(all.direction_error_deg[0] == 0.0);
}

TEST_CASE("gate summaries expose the mixing statistics") {
    Mat<double> onehot(4, 3, {1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0});
    MetricsReport r;
    gate_summary(onehot, r);
    CHECK(r.gate_mean[0] == doctest::Approx(1.0));
    CHECK(r.gate_mean[1] == doctest::Approx(0.0));
    CHECK(r.gate_std[0] == doctest::Approx(0.0));

    Mat<double> two(2, 3, {1, 0, 0, 0, 1, 0});
    gate_summary(two, r);
    CHECK(r.gate_mean[0] == doctest::Approx(0.5));
    CHECK(r.gate_mean[1] == doctest::Approx(0.5));
    CHECK(r.gate_mean[2] == doctest::Approx(0.0));
    // Population std of {1, 0} is 0.5.
    CHECK(r.gate_std[0] == doctest::Approx(0.5));
    CHECK(r.gate_std[2] == doctest::Approx(0.0));

    // Random simplex rows: means stay on the simplex; std matches a manual
    // pass.
    std::mt19937_64 rng(8);
    Mat<double> gates(100, 3);
    for (int i = 0; i < 100; ++i) {
        Mat<double> a(1, 1, {uniform_double(rng)});
        Mat<double> b(1, 1, {uniform_double(rng)});
        FusionGates<double> g = combine_gate_sigmoids(a, b);
        gates(i, 0) = g.gaze(0, 0);
        gates(i, 1) = g.head(0, 0);
        gates(i, 2) = g.scene(0, 0);
    }
    gate_summary(gates, r);
    CHECK(std::abs(r.gate_mean[0] + r.gate_mean[1] + r.gate_mean[2] - 1.0) <= 1e-6);
    double mean1 = 0.0;
    for (int i = 0; i < 100; ++i) mean1 += gates(i, 1);
    mean1 /= 100.0;
    double var1 = 0.0;
    for (int i = 0; i < 100; ++i) var1 += (gates(i, 1) - mean1) * (gates(i, 1) - mean1);
    CHECK(r.gate_std[1] == doctest::Approx(std::sqrt(var1 / 100.0)));

    CHECK_THROWS_AS(gate_summary(Mat<double>(0, 3), r), EmptyInput);
    CHECK_THROWS_AS(gate_summary(Mat<double>(2, 2), r), ShapeMismatch);
}

TEST_CASE("metric input contracts hold") {
    MetricsReport r;
    CHECK_THROWS_AS(compute_step_metrics<double>({}, {}, 0.1, 100.0, r), EmptyInput);
    auto preds = random_stack(2, 4, 9);
    auto targets = random_stack(3, 4, 9);
    CHECK_THROWS_AS(compute_step_metrics(preds, targets, 0.1, 100.0, r), ShapeMismatch);
}

TEST_CASE("the JSON report parses back with every field") {
    auto preds = random_stack(3, 32, 10);
    auto targets = random_stack(3, 32, 11);
    MetricsReport r;
    compute_step_metrics(preds, targets, 0.1, 100.0, r);
    direction_error(preds, targets, r);
    Mat<double> gates(2, 3, {0.2, 0.5, 0.3, 0.4, 0.4, 0.2});
    gate_summary(gates, r);

    nlohmann::json j = nlohmann::json::parse(report_to_json(r));
    CHECK(j.at("samples").get<int64_t>() == 32);
    CHECK(j.at("hit_radius").get<double>() == doctest::Approx(0.1));
    REQUIRE(j.at("steps").size() == 3);
    CHECK(j["steps"][0].at("mse").get<double>() == doctest::Approx(r.mse[0]));
    CHECK_FALSE(j["steps"][0].contains("direction_error_deg"));  // undefined at step 1
    CHECK(j["steps"][2].at("direction_error_deg").get<double>() ==
          doctest::Approx(r.direction_error_deg[1]));
    CHECK(j["steps"][2].at("direction_excluded").get<int64_t>() == r.direction_excluded[1]);
    CHECK(j["gates"]["head"]["mean"].get<double>() == doctest::Approx(r.gate_mean[1]));
    CHECK(j["gates"]["scene"]["std"].get<double>() == doctest::Approx(r.gate_std[2]));
}

TEST_CASE("the CSV report keeps its header and blanks step one's direction") {
    auto preds = random_stack(2, 8, 12);
    auto targets = random_stack(2, 8, 13);
    MetricsReport r;
    compute_step_metrics(preds, targets, 0.1, 100.0, r);
    direction_error(preds, targets, r);
    std::istringstream lines(report_to_csv(r));
    std::string line;
    REQUIRE(std::getline(lines, line));
    CHECK(line ==
          "step,mse,hit_rate,mean_euclidean,mean_angular_deg,direction_error_deg,direction_"
          "excluded");
    REQUIRE(std::getline(lines, line));
    CHECK(line.rfind("1,", 0) == 0);
    CHECK(line.substr(line.size() - 2) == ",,");  // trailing blank fields
    REQUIRE(std::getline(lines, line));
    CHECK(line.rfind("2,", 0) == 0);
    CHECK(line.substr(line.size() - 1) != ",");  // direction fields filled in
    CHECK_FALSE(std::getline(lines, line));
}
