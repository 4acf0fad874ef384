#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "foveacast/datapipe.hpp"
#include "foveacast/rng.hpp"
#include "foveacast/synthgen.hpp"

using namespace foveacast;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("foveacast_sg_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SynthConfig quiet_config() {
    SynthConfig cfg;
    cfg.duration_s = 10.0;
    cfg.n_scenes = 4;
    cfg.n_sessions_per_scene = 1;
    cfg.head_lead_min_ms = 0.0;
    cfg.head_lead_max_ms = 0.0;
    cfg.pursuit_gain = 1.0;
    cfg.saccade_rate_hz = 0.0;
    cfg.fixation_noise_std = 0.0;
    cfg.dropout_fraction = 0.0;
    return cfg;
}

// Solve the 3x3 normal equations for y ~ a + b*u + c*v by Gaussian
// elimination and return the residual sum of squares.
double ls_resid(const std::vector<double>& u, const std::vector<double>& v,
                const std::vector<double>& y) {
    const size_t n = y.size();
    double A[3][4] = {};
    for (size_t i = 0; i < n; ++i) {
        const double f[3] = {1.0, u[i], v[i]};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) A[r][c] += f[r] * f[c];
            A[r][3] += f[r] * y[i];
        }
    }
    for (int col = 0; col < 3; ++col) {
        int piv = col;
        for (int r = col + 1; r < 3; ++r)
            if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
        for (int c = 0; c < 4; ++c) std::swap(A[piv][c], A[col][c]);
        REQUIRE(std::abs(A[col][col]) > 1e-12);
        for (int r = 0; r < 3; ++r) {
            if (r == col) continue;
            const double m = A[r][col] / A[col][col];
            for (int c = 0; c < 4; ++c) A[r][c] -= m * A[col][c];
        }
    }
    const double coef[3] = {A[0][3] / A[0][0], A[1][3] / A[1][1], A[2][3] / A[2][2]};
    double rss = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double pred = coef[0] + coef[1] * u[i] + coef[2] * v[i];
        rss += (y[i] - pred) * (y[i] - pred);
    }
    return rss;
}

}  // namespace

TEST_CASE("scripted motion folds into the unit square") {
    SceneScript still;
    still.kind = ScenePreset::bounce;
    still.x0 = 0.3;
    still.y0 = 0.6;
    still.vx = 0.0;
    still.vy = 0.0;
    double x, y;
    for (double t : {0.0, 1.7, 42.0}) {
        ball_position(still, t, x, y);
        CHECK(x == doctest::Approx(0.3));
        CHECK(y == doctest::Approx(0.6));
    }

    SceneScript wall;
    wall.kind = ScenePreset::bounce;
    wall.x0 = 0.0;
    wall.y0 = 0.5;
    wall.vx = 1.0;
    wall.vy = 0.0;
    ball_position(wall, 0.5, x, y);
    CHECK(x == doctest::Approx(0.5));
    ball_position(wall, 1.5, x, y);  // reflected off the far wall
    CHECK(x == doctest::Approx(0.5));
    ball_position(wall, 2.0, x, y);  // back at the start
    CHECK(x == doctest::Approx(0.0));

    std::mt19937_64 rng(3);
    for (int i = 0; i < 100000; ++i) {
        const SceneScript script = make_scene_script(
            ScenePreset::mixed, static_cast<int>(i % 40), 17);
        const double t = uniform_double(rng) * 500.0;
        ball_position(script, t, x, y);
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
        CHECK(y >= 0.0);
        CHECK(y <= 1.0);
    }
}

TEST_CASE("scripted motion respects its own speed bound") {
    std::mt19937_64 rng(5);
    const double delta = 1e-3;
    for (int s = 0; s < 20; ++s) {
        const SceneScript script = make_scene_script(ScenePreset::mixed, s, 23);
        const double bound = script.speed_bound();
        for (int i = 0; i < 500; ++i) {
            const double t = uniform_double(rng) * 200.0;
            double x0, y0, x1, y1;
            ball_position(script, t, x0, y0);
            ball_position(script, t + delta, x1, y1);
            CHECK(std::hypot(x1 - x0, y1 - y0) <= bound * delta + 1e-9);
        }
    }
}

TEST_CASE("head orientation maps the screen center to identity and inverts cleanly") {
    Quaternion center = head_quat_for_gaze(0.5, 0.5, 100.0, 100.0);
    CHECK(same_rotation(center, Quaternion{1, 0, 0, 0}, 1e-12));

    std::mt19937_64 rng(7);
    for (int i = 0; i < 2000; ++i) {
        const double gx = uniform_double(rng), gy = uniform_double(rng);
        const Quaternion q = head_quat_for_gaze(gx, gy, 100.0, 90.0);
        CHECK(std::abs(q.norm() - 1.0) <= 1e-6);
        double bx, by;
        gaze_from_head_quat(q, 100.0, 90.0, bx, by);
        CHECK(std::abs(bx - gx) <= 1e-9);
        CHECK(std::abs(by - gy) <= 1e-9);
    }
}

TEST_CASE("a noiseless unit-gain session tracks the script exactly") {
    SynthConfig cfg = quiet_config();
    const SceneScript script = make_scene_script(ScenePreset::bounce, 0, cfg.seed);
    RawSession s = gen_session(script, cfg, "sess", 99);
    REQUIRE(s.records.size() == 100);
    for (size_t i = 0; i < s.records.size(); ++i) {
        double bx, by;
        ball_position(script, static_cast<double>(i) * 0.1, bx, by);
        CHECK(s.records[i].gaze_x == bx);  // bitwise: pure copy path
        CHECK(s.records[i].gaze_y == by);
        // Zero lead points the head at the current gaze.
        double hx, hy;
        gaze_from_head_quat(s.records[i].quat, cfg.fov_x_deg, cfg.fov_y_deg, hx, hy);
        CHECK(std::abs(hx - bx) <= 1e-9);
        CHECK(std::abs(hy - by) <= 1e-9);
        CHECK(s.records[i].confidence == 1.0);
        CHECK(s.records[i].timestamp_us == static_cast<int64_t>(i) * 100000);
    }
}

TEST_CASE("head orientation leads gaze by the configured offset") {
    SynthConfig cfg;
    cfg.duration_s = 20.0;
    cfg.head_lead_min_ms = 300.0;  // exactly 3 samples at 10 Hz
    cfg.head_lead_max_ms = 300.0;
    cfg.dropout_fraction = 0.0;
    const SceneScript script = make_scene_script(ScenePreset::mixed, 1, cfg.seed);
    SessionTruth truth;
    RawSession s = gen_session(script, cfg, "sess", 7, &truth);
    CHECK(truth.head_lead_ms == doctest::Approx(300.0));
    REQUIRE(truth.gaze_x.size() >= s.records.size() + 3);
    for (size_t i = 0; i < s.records.size(); ++i) {
        double hx, hy;
        gaze_from_head_quat(s.records[i].quat, cfg.fov_x_deg, cfg.fov_y_deg, hx, hy);
        CHECK(std::abs(hx - truth.gaze_x[i + 3]) <= 1e-9);
        CHECK(std::abs(hy - truth.gaze_y[i + 3]) <= 1e-9);
    }
}

TEST_CASE("sessions are seed-deterministic and seed-sensitive") {
    SynthConfig cfg;
    cfg.duration_s = 10.0;
    const SceneScript script = make_scene_script(ScenePreset::mixed, 2, cfg.seed);
    RawSession a = gen_session(script, cfg, "sess", 1234);
    RawSession b = gen_session(script, cfg, "sess", 1234);
    RawSession c = gen_session(script, cfg, "sess", 1235);
    REQUIRE(a.records.size() == b.records.size());
    bool differs = false;
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].gaze_x == b.records[i].gaze_x);
        CHECK(a.records[i].gaze_y == b.records[i].gaze_y);
        CHECK(a.records[i].quat.w == b.records[i].quat.w);
        CHECK(a.records[i].confidence == b.records[i].confidence);
        if (a.records[i].gaze_x != c.records[i].gaze_x) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("dropout marks close to the configured fraction of samples") {
    SynthConfig cfg;
    cfg.duration_s = 100.0;
    cfg.dropout_fraction = 0.1;
    const SceneScript script = make_scene_script(ScenePreset::mixed, 0, cfg.seed);
    RawSession s = gen_session(script, cfg, "sess", 31);
    int low = 0;
    for (const auto& r : s.records)
        if (r.confidence <= 0.8) ++low;
    // Binomial n=1000, p=0.1: keep within three standard deviations.
    const double sigma = std::sqrt(1000 * 0.1 * 0.9);
    CHECK(std::abs(low - 100.0) <= 3.0 * sigma);
}

TEST_CASE("the head stream is linearly informative about future gaze") {
    SynthConfig cfg;
    cfg.duration_s = 100.0;
    cfg.head_lead_min_ms = 300.0;
    cfg.head_lead_max_ms = 300.0;
    cfg.dropout_fraction = 0.0;
    const SceneScript script = make_scene_script(ScenePreset::mixed, 3, cfg.seed);
    RawSession s = gen_session(script, cfg, "sess", 11);

    std::vector<double> hx, hy, yx, yy;
    for (size_t i = 0; i + 1 < s.records.size(); ++i) {
        double ex, ey;
        gaze_from_head_quat(s.records[i].quat, cfg.fov_x_deg, cfg.fov_y_deg, ex, ey);
        hx.push_back(ex);
        hy.push_back(ey);
        yx.push_back(s.records[i + 1].gaze_x);
        yy.push_back(s.records[i + 1].gaze_y);
    }
    auto const_resid = [](const std::vector<double>& y) {
        double mean = 0.0;
        for (double v : y) mean += v;
        mean /= static_cast<double>(y.size());
        double rss = 0.0;
        for (double v : y) rss += (v - mean) * (v - mean);
        return rss;
    };
    CHECK(ls_resid(hx, hy, yx) < const_resid(yx));
    CHECK(ls_resid(hx, hy, yy) < const_resid(yy));
}

TEST_CASE("scene scripts are deterministic per index and distinct across indices") {
    const SceneScript a = make_scene_script(ScenePreset::mixed, 5, 77);
    const SceneScript b = make_scene_script(ScenePreset::mixed, 5, 77);
    CHECK(a.scene_id == b.scene_id);
    CHECK(a.x0 == b.x0);
    CHECK(a.vx == b.vx);
    std::set<std::string> ids;
    for (int i = 0; i < 30; ++i) ids.insert(make_scene_script(ScenePreset::mixed, i, 77).scene_id);
    CHECK(ids.size() == 30);
}

TEST_CASE("scene signatures are deterministic 512-float descriptors") {
    const SceneScript a = make_scene_script(ScenePreset::bounce, 0, 9);
    const SceneScript b = make_scene_script(ScenePreset::bounce, 1, 9);
    auto fa = scene_feature_signature(a, 30.0, 10.0);
    auto fa2 = scene_feature_signature(a, 30.0, 10.0);
    auto fb = scene_feature_signature(b, 30.0, 10.0);
    REQUIRE(fa.size() == 512);
    CHECK(fa == fa2);
    CHECK(fa != fb);
    for (float v : fa) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("occupancy images cover the scripted path") {
    const SceneScript script = make_scene_script(ScenePreset::bounce, 0, 9);
    auto img = scene_occupancy_image(script, 16, 30.0, 10.0);
    REQUIRE(img.size() == 256);
    int nonzero = 0;
    for (unsigned char v : img)
        if (v > 0) ++nonzero;
    CHECK(nonzero > 0);
    CHECK(scene_occupancy_image(script, 16, 30.0, 10.0) == img);
}

TEST_CASE("generated corpora re-ingest cleanly with the documented layout") {
    TempDir tmp;
    SynthConfig cfg;
    cfg.n_scenes = 22;
    cfg.n_sessions_per_scene = 3;
    cfg.duration_s = 5.0;
    CorpusPaths paths = gen_corpus(cfg, (tmp.path / "c").string());
    CHECK(paths.trace_files.size() == 66);

    SceneSplit split = split_from_json(slurp(paths.split_manifest));
    CHECK(split.train.size() == 18);
    CHECK(split.val.size() == 2);
    CHECK(split.test.size() == 2);

    SceneFeatureStore store = SceneFeatureStore::load(paths.feature_manifest);
    CHECK(store.size() == 22);
    CHECK(store.dim() == 512);

    for (size_t i = 0; i < paths.trace_files.size(); i += 13) {
        auto sessions = ingest_traces(paths.trace_files[i]);
        REQUIRE(sessions.size() == 1);
        CHECK(sessions[0].records.size() == 50);
        CHECK(store.index_of(sessions[0].scene_id) >= 0);
    }
}

TEST_CASE("an explicit split that contradicts the scene count is a count error") {
    TempDir tmp;
    SynthConfig cfg;
    cfg.n_scenes = 6;
    cfg.n_train_scenes = 18;
    cfg.n_val_scenes = 2;
    cfg.n_test_scenes = 2;
    CHECK_THROWS_AS(gen_corpus(cfg, (tmp.path / "c").string()), CountMismatch);
}

TEST_CASE("regeneration under one seed is byte-identical") {
    TempDir tmp;
    SynthConfig cfg;
    cfg.n_scenes = 4;
    cfg.n_sessions_per_scene = 2;
    cfg.duration_s = 5.0;
    cfg.seed = 404;
    CorpusPaths a = gen_corpus(cfg, (tmp.path / "a").string());
    CorpusPaths b = gen_corpus(cfg, (tmp.path / "b").string());

    CHECK(slurp(a.split_manifest) == slurp(b.split_manifest));
    CHECK(slurp(a.feature_manifest) == slurp(b.feature_manifest));
    CHECK(slurp(fs::path(a.root) / "corpus.json") == slurp(fs::path(b.root) / "corpus.json"));
    REQUIRE(a.trace_files.size() == b.trace_files.size());
    for (size_t i = 0; i < a.trace_files.size(); ++i)
        CHECK(slurp(a.trace_files[i]) == slurp(b.trace_files[i]));
}

TEST_CASE("image-mode corpora store square occupancy renders") {
    TempDir tmp;
    SynthConfig cfg;
    cfg.n_scenes = 4;
    cfg.n_sessions_per_scene = 1;
    cfg.duration_s = 5.0;
    CorpusPaths paths = gen_corpus(cfg, (tmp.path / "img").string(), true, 8);
    SceneFeatureStore store = SceneFeatureStore::load(paths.feature_manifest);
    CHECK(store.size() == 4);
    CHECK(store.dim() == 64);
    for (float v : store.features(0)) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}
