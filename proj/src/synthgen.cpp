#include "foveacast/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "foveacast/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace foveacast {

const char* scene_preset_name(ScenePreset p) {
    switch (p) {
        case ScenePreset::bounce: return "bounce";
        case ScenePreset::crossing: return "crossing";
        case ScenePreset::mixed: return "mixed";
    }
    return "?";
}

ScenePreset scene_preset_from_name(const std::string& name) {
    if (name == "bounce") return ScenePreset::bounce;
    if (name == "crossing") return ScenePreset::crossing;
    if (name == "mixed") return ScenePreset::mixed;
    throw Error("unknown scene preset: " + name);
}

void SynthConfig::validate() const {
    if (!(sample_rate_hz > 0.0)) throw Error("sample_rate_hz must be > 0");
    if (!(duration_s > 0.0)) throw Error("duration_s must be > 0");
    if (head_lead_min_ms < 0.0 || head_lead_max_ms > 1000.0 ||
        head_lead_min_ms > head_lead_max_ms)
        throw Error("head lead range must satisfy 0 <= min <= max <= 1000 ms");
    if (pursuit_gain < 0.0 || pursuit_gain > 1.0) throw Error("pursuit_gain must be in [0,1]");
    if (saccade_rate_hz < 0.0) throw Error("saccade_rate_hz must be >= 0");
    if (fixation_noise_std < 0.0) throw Error("fixation_noise_std must be >= 0");
    if (dropout_fraction < 0.0 || dropout_fraction > 1.0)
        throw Error("dropout_fraction must be in [0,1]");
    if (n_scenes < 4) throw CountMismatch("n_scenes must be >= 4 for a proportional split");
    if (n_sessions_per_scene < 1) throw Error("n_sessions_per_scene must be >= 1");
    if (!(fov_x_deg > 0.0) || !(fov_y_deg > 0.0)) throw Error("fov must be positive");
}

void SynthConfig::resolve_split_counts(int& train, int& val, int& test) const {
    if (n_train_scenes >= 0 || n_val_scenes >= 0 || n_test_scenes >= 0) {
        train = n_train_scenes;
        val = n_val_scenes;
        test = n_test_scenes;
        if (train < 1 || val < 1 || test < 1 || train + val + test != n_scenes)
            throw CountMismatch("explicit split counts must be positive and sum to n_scenes");
        return;
    }
    // Proportional to the reference 18/2/2 layout over 22 scenes.
    val = std::max(1, static_cast<int>(std::lround(n_scenes * 2.0 / 22.0)));
    test = val;
    train = n_scenes - val - test;
    if (train < 1) throw CountMismatch("n_scenes too small for a proportional split");
}

namespace {

// Fold an unbounded coordinate into [0,1] as an elastic reflection.
double fold_unit(double u) {
    double m = std::fmod(u, 2.0);
    if (m < 0.0) m += 2.0;
    return m <= 1.0 ? m : 2.0 - m;
}

double waypoint_y(const std::vector<double>& wp, double x) {
    const int segs = static_cast<int>(wp.size()) - 1;
    const double pos = std::clamp(x, 0.0, 1.0) * segs;
    int i = std::min(static_cast<int>(pos), segs - 1);
    const double frac = pos - i;
    return wp[static_cast<size_t>(i)] +
           frac * (wp[static_cast<size_t>(i + 1)] - wp[static_cast<size_t>(i)]);
}

}  // namespace

double SceneScript::speed_bound() const {
    if (kind == ScenePreset::crossing) {
        double max_slope = 0.0;
        const int segs = static_cast<int>(waypoints_y.size()) - 1;
        for (int i = 0; i < segs; ++i)
            max_slope = std::max(max_slope, std::abs(waypoints_y[static_cast<size_t>(i + 1)] -
                                                     waypoints_y[static_cast<size_t>(i)]) *
                                                segs);
        return std::sqrt(vx * vx * (1.0 + max_slope * max_slope));
    }
    return std::sqrt(vx * vx + vy * vy);
}

void ball_position(const SceneScript& script, double t, double& x, double& y) {
    if (t < 0.0) throw Error("ball_position: t must be >= 0");
    x = fold_unit(script.x0 + script.vx * t);
    if (script.kind == ScenePreset::crossing)
        y = waypoint_y(script.waypoints_y, x);
    else
        y = fold_unit(script.y0 + script.vy * t);
}

SceneScript make_scene_script(ScenePreset preset, int scene_index, uint64_t corpus_seed) {
    std::mt19937_64 rng(derive_seed(corpus_seed, "scene", static_cast<uint64_t>(scene_index)));
    SceneScript s;
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%02d", scene_index);
    s.scene_id = buf;
    s.kind = preset == ScenePreset::mixed
                 ? (scene_index % 2 == 0 ? ScenePreset::bounce : ScenePreset::crossing)
                 : preset;
    s.x0 = uniform_range(rng, 0.15, 0.85);
    s.y0 = uniform_range(rng, 0.15, 0.85);
    const double sx = bernoulli(rng, 0.5) ? 1.0 : -1.0;
    const double sy = bernoulli(rng, 0.5) ? 1.0 : -1.0;
    if (s.kind == ScenePreset::crossing) {
        s.vx = sx * uniform_range(rng, 0.25, 0.5);
        s.vy = 0.0;
        s.waypoints_y.resize(5);
        for (double& w : s.waypoints_y) w = uniform_range(rng, 0.2, 0.8);
    } else {
        s.vx = sx * uniform_range(rng, 0.2, 0.45);
        s.vy = sy * uniform_range(rng, 0.2, 0.45);
    }
    return s;
}

Quaternion head_quat_for_gaze(double gx, double gy, double fov_x_deg, double fov_y_deg) {
    constexpr double deg = 3.14159265358979323846 / 180.0;
    const double yaw = (gx - 0.5) * fov_x_deg * deg;
    const double pitch = (gy - 0.5) * fov_y_deg * deg;
    const double cy = std::cos(yaw * 0.5), sy = std::sin(yaw * 0.5);
    const double cp = std::cos(pitch * 0.5), sp = std::sin(pitch * 0.5);
    // R_y(yaw) * R_x(pitch), Hamilton order.
    return Quaternion{cy * cp, cy * sp, sy * cp, -sy * sp};
}

void gaze_from_head_quat(const Quaternion& q_in, double fov_x_deg, double fov_y_deg, double& gx,
                         double& gy) {
    constexpr double deg = 3.14159265358979323846 / 180.0;
    Quaternion q = q_in.w < 0.0 ? q_in.negated() : q_in;
    const double yaw = 2.0 * std::atan2(q.y, q.w);
    const double pitch = 2.0 * std::atan2(q.x, q.w);
    gx = yaw / (fov_x_deg * deg) + 0.5;
    gy = pitch / (fov_y_deg * deg) + 0.5;
}

RawSession gen_session(const SceneScript& script, const SynthConfig& cfg,
                       const std::string& session_id, uint64_t session_seed,
                       SessionTruth* truth) {
    cfg.validate();
    // Independent sub-streams so one knob's draw count never shifts another's.
    std::mt19937_64 lead_rng(derive_seed(session_seed, "lead"));
    std::mt19937_64 saccade_rng(derive_seed(session_seed, "saccade"));
    std::mt19937_64 noise_rng(derive_seed(session_seed, "noise"));
    std::mt19937_64 dropout_rng(derive_seed(session_seed, "dropout"));

    const double dt = 1.0 / cfg.sample_rate_hz;
    const int n = static_cast<int>(std::lround(cfg.duration_s * cfg.sample_rate_hz));
    const double lead_ms = uniform_range(lead_rng, cfg.head_lead_min_ms, cfg.head_lead_max_ms);
    const double lead_s = lead_ms / 1000.0;
    // Gaze extends past the session end so head targets stay in range.
    const int n_ext = n + static_cast<int>(std::ceil(lead_s / dt)) + 2;

    std::vector<double> sac_times;
    if (cfg.saccade_rate_hz > 0.0) {
        double t = exponential(saccade_rng, cfg.saccade_rate_hz);
        while (t < n_ext * dt) {
            sac_times.push_back(t);
            t += exponential(saccade_rng, cfg.saccade_rate_hz);
        }
    }

    std::vector<double> gx(static_cast<size_t>(n_ext)), gy(static_cast<size_t>(n_ext));
    size_t sac_i = 0;
    for (int i = 0; i < n_ext; ++i) {
        const double t = i * dt;
        double bx, by;
        ball_position(script, t, bx, by);
        if (i == 0) {
            gx[0] = bx;
            gy[0] = by;
        } else {
            gx[static_cast<size_t>(i)] =
                cfg.pursuit_gain * bx + (1.0 - cfg.pursuit_gain) * gx[static_cast<size_t>(i - 1)];
            gy[static_cast<size_t>(i)] =
                cfg.pursuit_gain * by + (1.0 - cfg.pursuit_gain) * gy[static_cast<size_t>(i - 1)];
        }
        if (sac_i < sac_times.size() && t >= sac_times[sac_i]) {
            // Saccade lands on the target; consume every arrival in this step.
            gx[static_cast<size_t>(i)] = bx;
            gy[static_cast<size_t>(i)] = by;
            while (sac_i < sac_times.size() && t >= sac_times[sac_i]) ++sac_i;
        }
        if (cfg.fixation_noise_std > 0.0) {
            gx[static_cast<size_t>(i)] += cfg.fixation_noise_std * gaussian(noise_rng);
            gy[static_cast<size_t>(i)] += cfg.fixation_noise_std * gaussian(noise_rng);
        }
    }

    auto gaze_at = [&](double t) {  // linear interpolation on the sample grid
        const double pos = t / dt;
        const int i0 = std::min(static_cast<int>(pos), n_ext - 2);
        const double frac = pos - i0;
        return std::pair<double, double>{
            gx[static_cast<size_t>(i0)] + frac * (gx[static_cast<size_t>(i0 + 1)] - gx[static_cast<size_t>(i0)]),
            gy[static_cast<size_t>(i0)] + frac * (gy[static_cast<size_t>(i0 + 1)] - gy[static_cast<size_t>(i0)])};
    };

    RawSession session{script.scene_id, session_id, {}};
    session.records.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        RawTraceRecord r;
        r.timestamp_us = static_cast<int64_t>(std::llround(i * dt * 1e6));
        r.gaze_x = gx[static_cast<size_t>(i)];
        r.gaze_y = gy[static_cast<size_t>(i)];
        auto [fx, fy] = gaze_at(i * dt + lead_s);
        r.quat = head_quat_for_gaze(fx, fy, cfg.fov_x_deg, cfg.fov_y_deg);
        r.confidence = bernoulli(dropout_rng, cfg.dropout_fraction) ? 0.5 : 1.0;
        r.scene_id = script.scene_id;
        r.session_id = session_id;
        session.records.push_back(std::move(r));
    }
    if (truth) {
        truth->head_lead_ms = lead_ms;
        truth->gaze_x = gx;
        truth->gaze_y = gy;
    }
    return session;
}

std::vector<float> scene_feature_signature(const SceneScript& script, double duration_s,
                                           double sample_rate_hz) {
    std::vector<float> feat(512, 0.0f);
    // 8x8 occupancy histogram of the scripted path over the session span.
    const double dt = 1.0 / sample_rate_hz;
    const int n = std::max(1, static_cast<int>(std::lround(duration_s * sample_rate_hz)));
    for (int i = 0; i < n; ++i) {
        double x, y;
        ball_position(script, i * dt, x, y);
        const int cx = std::min(7, static_cast<int>(x * 8.0));
        const int cy = std::min(7, static_cast<int>(y * 8.0));
        feat[static_cast<size_t>(cy * 8 + cx)] += 1.0f;
    }
    for (int i = 0; i < 64; ++i) feat[static_cast<size_t>(i)] /= static_cast<float>(n);

    // Hash expansion of the script parameters fills the remaining 448 slots
    // with a scene-unique but deterministic pattern.
    char desc[256];
    std::snprintf(desc, sizeof desc, "%s|%d|%.17g|%.17g|%.17g|%.17g|%zu", script.scene_id.c_str(),
                  static_cast<int>(script.kind), script.x0, script.y0, script.vx, script.vy,
                  script.waypoints_y.size());
    uint64_t state = derive_seed(0x5ce9e5f3ULL, desc);
    for (double w : script.waypoints_y)
        state ^= splitmix64(state) ^ static_cast<uint64_t>(std::llround(w * 1e9));
    for (int i = 64; i < 512; ++i)
        feat[static_cast<size_t>(i)] =
            static_cast<float>(static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53);
    return feat;
}

std::vector<unsigned char> scene_occupancy_image(const SceneScript& script, int resolution,
                                                 double duration_s, double sample_rate_hz) {
    std::vector<double> hist(static_cast<size_t>(resolution) * static_cast<size_t>(resolution), 0.0);
    const double dt = 1.0 / sample_rate_hz;
    const int n = std::max(1, static_cast<int>(std::lround(duration_s * sample_rate_hz)));
    for (int i = 0; i < n; ++i) {
        double x, y;
        ball_position(script, i * dt, x, y);
        const int cx = std::min(resolution - 1, static_cast<int>(x * resolution));
        const int cy = std::min(resolution - 1, static_cast<int>(y * resolution));
        hist[static_cast<size_t>(cy * resolution + cx)] += 1.0;
    }
    const double peak = *std::max_element(hist.begin(), hist.end());
    std::vector<unsigned char> img(hist.size(), 0);
    if (peak > 0.0)
        for (size_t i = 0; i < hist.size(); ++i)
            img[i] = static_cast<unsigned char>(std::lround(hist[i] / peak * 255.0));
    return img;
}

namespace {

void write_trace_csv(const fs::path& path, const RawSession& session) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "timestamp_us,gaze_x,gaze_y,confidence,qw,qx,qy,qz,scene_id,session_id\n";
    char buf[512];
    for (const RawTraceRecord& r : session.records) {
        std::snprintf(buf, sizeof buf,
                      "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s,%s\n",
                      static_cast<long long>(r.timestamp_us), r.gaze_x, r.gaze_y, r.confidence,
                      r.quat.w, r.quat.x, r.quat.y, r.quat.z, r.scene_id.c_str(),
                      r.session_id.c_str());
        out << buf;
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

CorpusPaths gen_corpus(const SynthConfig& cfg, const std::string& out_dir, bool image_features,
                       int image_resolution) {
    // Resolve split counts before the general parameter checks: an explicit
    // split that contradicts --scenes is a count error regardless of whether
    // the scene count itself is otherwise usable.
    int n_train = 0, n_val = 0, n_test = 0;
    cfg.resolve_split_counts(n_train, n_val, n_test);
    cfg.validate();

    const fs::path root(out_dir);
    const fs::path trace_dir = root / "traces";
    const fs::path feature_dir = root / "features";
    std::error_code ec;
    fs::create_directories(trace_dir, ec);
    fs::create_directories(feature_dir, ec);
    if (!fs::is_directory(trace_dir) || !fs::is_directory(feature_dir))
        throw IoError("cannot create corpus directories under " + out_dir);

    CorpusPaths paths;
    paths.root = root.string();
    paths.trace_dir = trace_dir.string();

    std::vector<std::string> scene_ids;
    json manifest;
    manifest["mode"] = image_features ? "images" : "features";
    manifest["scenes"] = json::array();

    for (int s = 0; s < cfg.n_scenes; ++s) {
        const SceneScript script = make_scene_script(cfg.preset, s, cfg.seed);
        scene_ids.push_back(script.scene_id);

        json entry;
        entry["scene_id"] = script.scene_id;
        entry["preset"] = scene_preset_name(script.kind);
        if (image_features) {
            const std::string fname = script.scene_id + ".pgm";
            entry["path"] = fname;
            entry["resolution"] = image_resolution;
            std::vector<unsigned char> img = scene_occupancy_image(
                script, image_resolution, cfg.duration_s, cfg.sample_rate_hz);
            std::ofstream out(feature_dir / fname, std::ios::binary);
            if (!out) throw IoError("cannot write " + (feature_dir / fname).string());
            out << "P5\n" << image_resolution << " " << image_resolution << "\n255\n";
            out.write(reinterpret_cast<const char*>(img.data()),
                      static_cast<std::streamsize>(img.size()));
            if (!out) throw IoError("write failed: " + (feature_dir / fname).string());
        } else {
            const std::string fname = script.scene_id + ".f32";
            entry["path"] = fname;
            entry["dim"] = 512;
            std::vector<float> feat =
                scene_feature_signature(script, cfg.duration_s, cfg.sample_rate_hz);
            std::ofstream out(feature_dir / fname, std::ios::binary);
            if (!out) throw IoError("cannot write " + (feature_dir / fname).string());
            out.write(reinterpret_cast<const char*>(feat.data()),
                      static_cast<std::streamsize>(feat.size() * sizeof(float)));
            if (!out) throw IoError("write failed: " + (feature_dir / fname).string());
        }
        manifest["scenes"].push_back(entry);

        for (int j = 0; j < cfg.n_sessions_per_scene; ++j) {
            char sess[64];
            std::snprintf(sess, sizeof sess, "%s_sess%02d", script.scene_id.c_str(), j);
            const uint64_t session_seed =
                derive_seed(cfg.seed, "session",
                            static_cast<uint64_t>(s) * 1000003ULL + static_cast<uint64_t>(j));
            const RawSession session = gen_session(script, cfg, sess, session_seed);
            const fs::path file = trace_dir / (std::string(sess) + ".csv");
            write_trace_csv(file, session);
            paths.trace_files.push_back(file.string());
        }
    }

    const fs::path manifest_path = feature_dir / "manifest.json";
    {
        std::ofstream out(manifest_path);
        if (!out) throw IoError("cannot write " + manifest_path.string());
        out << manifest.dump(2) << "\n";
    }
    paths.feature_manifest = manifest_path.string();

    const SceneSplit split =
        split_scenes(scene_ids, n_train, n_val, n_test, derive_seed(cfg.seed, "split"));
    const fs::path split_path = root / "split.json";
    {
        std::ofstream out(split_path);
        if (!out) throw IoError("cannot write " + split_path.string());
        out << split_to_json(split);
    }
    paths.split_manifest = split_path.string();

    // Corpus-level echo of the generator settings, for tooling defaults.
    json meta;
    meta["sample_rate_hz"] = cfg.sample_rate_hz;
    meta["duration_s"] = cfg.duration_s;
    meta["n_scenes"] = cfg.n_scenes;
    meta["n_sessions_per_scene"] = cfg.n_sessions_per_scene;
    meta["head_lead_min_ms"] = cfg.head_lead_min_ms;
    meta["head_lead_max_ms"] = cfg.head_lead_max_ms;
    meta["pursuit_gain"] = cfg.pursuit_gain;
    meta["saccade_rate_hz"] = cfg.saccade_rate_hz;
    meta["fixation_noise_std"] = cfg.fixation_noise_std;
    meta["dropout_fraction"] = cfg.dropout_fraction;
    meta["fov_x_deg"] = cfg.fov_x_deg;
    meta["fov_y_deg"] = cfg.fov_y_deg;
    meta["seed"] = cfg.seed;
    meta["preset"] = scene_preset_name(cfg.preset);
    {
        std::ofstream out(root / "corpus.json");
        if (!out) throw IoError("cannot write " + (root / "corpus.json").string());
        out << meta.dump(2) << "\n";
    }
    return paths;
}

}  // namespace foveacast
