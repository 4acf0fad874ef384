#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foveacast/datapipe.hpp"
#include "foveacast/geometry.hpp"

namespace foveacast {

enum class ScenePreset { bounce, crossing, mixed };

const char* scene_preset_name(ScenePreset p);
ScenePreset scene_preset_from_name(const std::string& name);

struct SynthConfig {
    double sample_rate_hz = 10.0;
    double duration_s = 100.0;
    int n_scenes = 22;
    int n_sessions_per_scene = 3;
    double head_lead_min_ms = 200.0;  // per-session lead drawn uniformly from this range
    double head_lead_max_ms = 400.0;
    double pursuit_gain = 0.6;
    double saccade_rate_hz = 0.4;
    double fixation_noise_std = 0.02;  // normalized units
    double dropout_fraction = 0.08;    // samples stamped confidence 0.5
    double fov_x_deg = 100.0;
    double fov_y_deg = 100.0;
    uint64_t seed = 1;
    ScenePreset preset = ScenePreset::mixed;
    int n_train_scenes = -1;  // -1: proportional 18/2/2-style split
    int n_val_scenes = -1;
    int n_test_scenes = -1;

    void validate() const;
    void resolve_split_counts(int& train, int& val, int& test) const;
};

// Closed-form scripted target motion. `bounce` folds both coordinates of a
// constant-velocity path back into [0,1] (elastic walls); `crossing` folds x
// the same way and reads y off a piecewise-linear waypoint profile in x.
struct SceneScript {
    std::string scene_id;
    ScenePreset kind = ScenePreset::bounce;
    double x0 = 0.5, y0 = 0.5;
    double vx = 0.3, vy = 0.2;
    std::vector<double> waypoints_y;  // crossing only: y at x = i/(W-1)

    // Upper bound on |d pos/dt|, used by the continuity property check.
    double speed_bound() const;
};

// Position at time t (t >= 0), always inside [0,1]^2.
void ball_position(const SceneScript& script, double t, double& x, double& y);

// Deterministic per-scene script under the corpus seed.
SceneScript make_scene_script(ScenePreset preset, int scene_index, uint64_t corpus_seed);

// Normalized gaze <-> head orientation under a centered rectangular FOV:
// yaw = (x - 0.5) * fov_x, pitch = (y - 0.5) * fov_y, q = R_y(yaw) * R_x(pitch).
Quaternion head_quat_for_gaze(double gx, double gy, double fov_x_deg, double fov_y_deg);
void gaze_from_head_quat(const Quaternion& q, double fov_x_deg, double fov_y_deg, double& gx,
                         double& gy);

struct SessionTruth {
    double head_lead_ms = 0.0;
    std::vector<double> gaze_x, gaze_y;  // pre-clamp gaze series at sample times
};

// One synthetic session: smooth-pursuit gaze with fixation jitter and
// Poisson-timed saccades onto the target, head orientation pointing at the
// gaze position head_lead_ms into the future. Fully determined by
// (script, config, session_seed).
RawSession gen_session(const SceneScript& script, const SynthConfig& cfg,
                       const std::string& session_id, uint64_t session_seed,
                       SessionTruth* truth = nullptr);

// Per-scene 512-float signature: coarse 8x8 occupancy histogram of the
// scripted path (64) plus a hash expansion of the script parameters (448).
std::vector<float> scene_feature_signature(const SceneScript& script, double duration_s,
                                           double sample_rate_hz);

// Occupancy render of the scripted path as a grayscale image, for the conv
// scene mode.
std::vector<unsigned char> scene_occupancy_image(const SceneScript& script, int resolution,
                                                 double duration_s, double sample_rate_hz);

struct CorpusPaths {
    std::string root;
    std::string trace_dir;
    std::string feature_manifest;
    std::string split_manifest;
    std::vector<std::string> trace_files;
};

// Write a full corpus under out_dir: traces/<scene>__<session>.csv, per-scene
// feature files + manifest under features/, and split.json. image_features
// switches the store to PGM occupancy images at the given resolution.
CorpusPaths gen_corpus(const SynthConfig& cfg, const std::string& out_dir,
                       bool image_features = false, int image_resolution = 64);

}  // namespace foveacast
