#include "foveacast/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "foveacast/datapipe.hpp"
#include "foveacast/metrics.hpp"
#include "foveacast/model.hpp"
#include "foveacast/rng.hpp"
#include "foveacast/synthgen.hpp"
#include "foveacast/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace foveacast {

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const CountMismatch*>(&e)) return kExitUsage;
    if (dynamic_cast<const NonFiniteLoss*>(&e) || dynamic_cast<const NonFinite*>(&e))
        return kExitNumeric;
    if (dynamic_cast<const VersionMismatch*>(&e) || dynamic_cast<const CorruptManifest*>(&e) ||
        dynamic_cast<const ShapeMismatch*>(&e) || dynamic_cast<const ModeMismatch*>(&e))
        return kExitArtifact;
    if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const MissingColumn*>(&e) ||
        dynamic_cast<const NonMonotonicTimestamp*>(&e) || dynamic_cast<const NoOverlap*>(&e) ||
        dynamic_cast<const IoError*>(&e) || dynamic_cast<const EmptyInput*>(&e) ||
        dynamic_cast<const EmptySequence*>(&e) || dynamic_cast<const ZeroNorm*>(&e) ||
        dynamic_cast<const DegenerateBounds*>(&e))
        return kExitIo;
    return kExitFailure;
}

std::string file_fnv1a_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot hash missing file: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

int env_thread_cap(int fallback) {
    const char* v = std::getenv("FOVEACAST_THREADS");
    if (!v || !*v) return fallback;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end == v || *end != '\0' || n < 1) return fallback;
    return static_cast<int>(n);
}

namespace {

std::string utc_now_iso() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Reproducibility record for a command run: flags, config snapshot, and
// FNV-1a hashes of every input and output artifact. Timestamps make the file
// non-comparable byte-for-byte across runs; determinism checks skip it.
class ManifestWriter {
  public:
    ManifestWriter(const std::string& command, int argc, const char* const* argv) {
        j_["command"] = command;
        json args = json::array();
        for (int i = 0; i < argc; ++i) args.push_back(argv[i]);
        j_["argv"] = args;
        j_["started_utc"] = utc_now_iso();
    }

    json& config() { return j_["config"]; }
    void set_seed(uint64_t seed) { j_["seed"] = seed; }

    void add_input(const std::string& path) { add(path, "inputs"); }
    void add_output(const std::string& path) { add(path, "outputs"); }

    void write(const fs::path& dir) {
        j_["finished_utc"] = utc_now_iso();
        std::ofstream out(dir / "manifest.json");
        if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
        out << j_.dump(2) << "\n";
    }

  private:
    json j_;

    void add(const std::string& path, const char* key) {
        json e;
        e["path"] = path;
        e["fnv1a"] = file_fnv1a_hex(path);
        if (!j_.contains(key)) j_[key] = json::array();
        j_[key].push_back(e);
    }
};

struct AppConfig {
    SynthConfig synth;
    PipelineConfig pipe;
    ModelConfig model;
    TrainConfig train;
};

void apply_config_json(AppConfig& cfg, const json& j) {
    if (j.contains("synth")) {
        const json& s = j["synth"];
        SynthConfig& c = cfg.synth;
        c.sample_rate_hz = s.value("sample_rate_hz", c.sample_rate_hz);
        c.duration_s = s.value("duration_s", c.duration_s);
        c.n_scenes = s.value("n_scenes", c.n_scenes);
        c.n_sessions_per_scene = s.value("n_sessions_per_scene", c.n_sessions_per_scene);
        c.head_lead_min_ms = s.value("head_lead_min_ms", c.head_lead_min_ms);
        c.head_lead_max_ms = s.value("head_lead_max_ms", c.head_lead_max_ms);
        c.pursuit_gain = s.value("pursuit_gain", c.pursuit_gain);
        c.saccade_rate_hz = s.value("saccade_rate_hz", c.saccade_rate_hz);
        c.fixation_noise_std = s.value("fixation_noise_std", c.fixation_noise_std);
        c.dropout_fraction = s.value("dropout_fraction", c.dropout_fraction);
        c.fov_x_deg = s.value("fov_x_deg", c.fov_x_deg);
        c.fov_y_deg = s.value("fov_y_deg", c.fov_y_deg);
        c.seed = s.value("seed", c.seed);
        if (s.contains("preset")) c.preset = scene_preset_from_name(s["preset"].get<std::string>());
        c.n_train_scenes = s.value("n_train_scenes", c.n_train_scenes);
        c.n_val_scenes = s.value("n_val_scenes", c.n_val_scenes);
        c.n_test_scenes = s.value("n_test_scenes", c.n_test_scenes);
    }
    if (j.contains("pipeline")) {
        const json& p = j["pipeline"];
        PipelineConfig& c = cfg.pipe;
        c.confidence_threshold = p.value("confidence_threshold", c.confidence_threshold);
        c.gap_factor = p.value("gap_factor", c.gap_factor);
        c.n_in = p.value("n_in", c.n_in);
        c.k_steps = p.value("k_steps", c.k_steps);
        c.stride = p.value("stride", c.stride);
    }
    if (j.contains("model")) {
        ModelConfig& c = cfg.model;
        const json& m = j["model"];
        c.hidden = m.value("hidden", c.hidden);
        c.fused_proj = m.value("fused_proj", c.fused_proj);
        c.gate_hidden = m.value("gate_hidden", c.gate_hidden);
        c.head_hidden = m.value("head_hidden", c.head_hidden);
        c.scene_feature_dim = m.value("scene_feature_dim", c.scene_feature_dim);
        c.lambda_aux = m.value("lambda_aux", c.lambda_aux);
        if (m.contains("spatial_weights"))
            c.spatial_weights = m["spatial_weights"].get<std::vector<double>>();
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        TrainConfig& c = cfg.train;
        c.lr = t.value("lr", c.lr);
        c.weight_decay = t.value("weight_decay", c.weight_decay);
        c.batch_size = t.value("batch_size", c.batch_size);
        c.sched_patience = t.value("sched_patience", c.sched_patience);
        c.sched_factor = t.value("sched_factor", c.sched_factor);
        c.min_lr = t.value("min_lr", c.min_lr);
        c.early_stop_patience = t.value("early_stop_patience", c.early_stop_patience);
        c.max_epochs = t.value("max_epochs", c.max_epochs);
        c.seed = t.value("seed", c.seed);
        c.lambda_aux = t.value("lambda_aux", c.lambda_aux);
        c.prefetch_depth = t.value("prefetch_depth", c.prefetch_depth);
    }
}

// --config is applied before flag defaults are bound, so explicit flags win.
AppConfig preparse_config(int argc, const char* const* argv) {
    AppConfig cfg;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream in(argv[i + 1]);
            if (!in) throw IoError(std::string("cannot open config: ") + argv[i + 1]);
            json j;
            try {
                in >> j;
            } catch (const json::exception& e) {
                throw ParseError(0, std::string("config json: ") + e.what());
            }
            apply_config_json(cfg, j);
        }
    }
    return cfg;
}

json synth_config_to_json(const SynthConfig& c) {
    json s;
    s["sample_rate_hz"] = c.sample_rate_hz;
    s["duration_s"] = c.duration_s;
    s["n_scenes"] = c.n_scenes;
    s["n_sessions_per_scene"] = c.n_sessions_per_scene;
    s["head_lead_min_ms"] = c.head_lead_min_ms;
    s["head_lead_max_ms"] = c.head_lead_max_ms;
    s["pursuit_gain"] = c.pursuit_gain;
    s["saccade_rate_hz"] = c.saccade_rate_hz;
    s["fixation_noise_std"] = c.fixation_noise_std;
    s["dropout_fraction"] = c.dropout_fraction;
    s["fov_x_deg"] = c.fov_x_deg;
    s["fov_y_deg"] = c.fov_y_deg;
    s["seed"] = c.seed;
    s["preset"] = scene_preset_name(c.preset);
    return s;
}

json train_config_to_json(const TrainConfig& c) {
    json t;
    t["lr"] = c.lr;
    t["weight_decay"] = c.weight_decay;
    t["batch_size"] = c.batch_size;
    t["sched_patience"] = c.sched_patience;
    t["sched_factor"] = c.sched_factor;
    t["min_lr"] = c.min_lr;
    t["early_stop_patience"] = c.early_stop_patience;
    t["max_epochs"] = c.max_epochs;
    t["seed"] = c.seed;
    t["lambda_aux"] = c.lambda_aux;
    t["prefetch_depth"] = c.prefetch_depth;
    return t;
}

json pipeline_config_to_json(const PipelineConfig& c) {
    json p;
    p["confidence_threshold"] = c.confidence_threshold;
    p["gap_factor"] = c.gap_factor;
    p["n_in"] = c.n_in;
    p["k_steps"] = c.k_steps;
    p["stride"] = c.stride;
    return p;
}

// Reads the feature-store mode ("features" or "images") and image resolution
// from a corpus feature manifest.
void peek_feature_mode(const std::string& manifest_path, std::string& mode, int& resolution) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open feature manifest: " + manifest_path);
    json j;
    try {
        in >> j;
        mode = j.value("mode", std::string("features"));
        resolution = 0;
        if (mode == "images" && j.contains("scenes") && !j["scenes"].empty())
            resolution = j["scenes"][0].value("resolution", 64);
    } catch (const json::exception& e) {
        throw ParseError(0, std::string("feature manifest: ") + e.what());
    }
}

const std::vector<WindowSample>& pick_split(const DatasetBundle& bundle,
                                            const std::string& name) {
    if (name == "train") return bundle.train;
    if (name == "val") return bundle.val;
    if (name == "test") return bundle.test;
    throw Error("unknown split: " + name);
}

double corpus_fov_deg(const fs::path& corpus_dir) {
    std::ifstream in(corpus_dir / "corpus.json");
    if (!in) return 100.0;
    try {
        json j;
        in >> j;
        return j.value("fov_x_deg", 100.0);
    } catch (const json::exception&) {
        return 100.0;
    }
}

// Forward pass over an entire split in deterministic order; collects stacked
// predictions, targets, and gates for metrics.
struct SplitForward {
    std::vector<Mat<double>> preds, targets;  // k of N x 2
    Mat<double> gates;                        // N x 3
    std::vector<int> window_of_row;
};

SplitForward run_split_forward(Model<float>& model, const std::vector<WindowSample>& windows,
                               const SceneFeatureStore& store, int batch_size, bool zero_head) {
    if (windows.empty()) throw EmptyInput("run_split_forward: empty split");
    const int N = static_cast<int>(windows.size());
    const int K = model.cfg.k_steps;
    SplitForward sf;
    sf.preds.assign(static_cast<size_t>(K), Mat<double>(N, 2));
    sf.targets.assign(static_cast<size_t>(K), Mat<double>(N, 2));
    sf.gates = Mat<double>(N, 3);
    sf.window_of_row.reserve(static_cast<size_t>(N));

    std::vector<int> order(windows.size());
    for (size_t i = 0; i < windows.size(); ++i) order[i] = static_cast<int>(i);
    BatchIterator<float> it(windows, store, order, batch_size);
    int row = 0;
    while (auto b = it.next()) {
        if (zero_head)
            for (Mat<float>& m : b->head_seq) m.zero();
        ModelInput<float> in{std::move(b->gaze_seq), std::move(b->head_seq), std::move(b->scene)};
        ModelOutput<float> out = model.forward(in);
        const int B = in.scene.rows;
        for (int r = 0; r < B; ++r) {
            for (int s = 0; s < K; ++s) {
                for (int c = 0; c < 2; ++c) {
                    sf.preds[static_cast<size_t>(s)](row + r, c) = out.preds[static_cast<size_t>(s)](r, c);
                    sf.targets[static_cast<size_t>(s)](row + r, c) =
                        b->targets[static_cast<size_t>(s)](r, c);
                }
            }
            sf.gates(row + r, 0) = out.gates.gaze(r, 0);
            sf.gates(row + r, 1) = out.gates.head(r, 0);
            sf.gates(row + r, 2) = out.gates.scene(r, 0);
            sf.window_of_row.push_back(b->window_indices[static_cast<size_t>(r)]);
        }
        row += B;
    }
    return sf;
}

ModelInput<float> input_from_window(const WindowSample& w, const SceneFeatureStore& store,
                                    int n_in) {
    ModelInput<float> in;
    in.gaze_seq.assign(static_cast<size_t>(n_in), Mat<float>(1, 2));
    in.head_seq.assign(static_cast<size_t>(n_in), Mat<float>(1, 4));
    for (int t = 0; t < n_in; ++t) {
        in.gaze_seq[static_cast<size_t>(t)](0, 0) = static_cast<float>(w.gaze_in[static_cast<size_t>(2 * t)]);
        in.gaze_seq[static_cast<size_t>(t)](0, 1) = static_cast<float>(w.gaze_in[static_cast<size_t>(2 * t + 1)]);
        for (int c = 0; c < 4; ++c)
            in.head_seq[static_cast<size_t>(t)](0, c) =
                static_cast<float>(w.head_in[static_cast<size_t>(4 * t + c)]);
    }
    const std::vector<float>& feat = store.features(w.scene_feature_ref);
    in.scene = Mat<float>(1, static_cast<int>(feat.size()));
    for (size_t c = 0; c < feat.size(); ++c) in.scene(0, static_cast<int>(c)) = feat[c];
    return in;
}

// --- subcommand bodies -------------------------------------------------------

struct GenArgs {
    std::string out;
    bool image_features = false;
    int image_resolution = 64;
};

int cmd_gen(const GenArgs& a, const AppConfig& cfg, int argc, const char* const* argv,
            std::ostream& out) {
    ManifestWriter manifest("gen", argc, argv);
    manifest.config()["synth"] = synth_config_to_json(cfg.synth);
    manifest.set_seed(cfg.synth.seed);
    const CorpusPaths paths = gen_corpus(cfg.synth, a.out, a.image_features, a.image_resolution);
    manifest.add_output(paths.split_manifest);
    manifest.add_output(paths.feature_manifest);
    for (const std::string& f : paths.trace_files) manifest.add_output(f);
    manifest.write(paths.root);
    int tr = 0, va = 0, te = 0;
    cfg.synth.resolve_split_counts(tr, va, te);
    out << "generated " << paths.trace_files.size() << " session traces across "
        << cfg.synth.n_scenes << " scenes (split " << tr << "/" << va << "/" << te << ") under "
        << paths.root << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string corpus;
    std::string out;
    std::string resume;
};

int cmd_train(const TrainArgs& a, AppConfig cfg, int argc, const char* const* argv,
              std::ostream& out) {
    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);

    ManifestWriter manifest("train", argc, argv);
    manifest.set_seed(cfg.train.seed);
    manifest.add_input((fs::path(a.corpus) / "split.json").string());

    SceneFeatureStore store =
        SceneFeatureStore::load((fs::path(a.corpus) / "features" / "manifest.json").string());
    std::string feature_mode;
    int image_res = 0;
    peek_feature_mode((fs::path(a.corpus) / "features" / "manifest.json").string(), feature_mode,
                      image_res);
    if (feature_mode == "images") {
        cfg.model.scene_mode = SceneMode::conv;
        cfg.model.conv_resolution = image_res;
    } else {
        cfg.model.scene_feature_dim = store.dim();
    }
    cfg.model.n_in = cfg.pipe.n_in;
    cfg.model.k_steps = cfg.pipe.k_steps;
    cfg.model.lambda_aux = cfg.train.lambda_aux;

    const DatasetBundle bundle = load_corpus(a.corpus, cfg.pipe, store);
    out << "windows: train " << bundle.train.size() << ", val " << bundle.val.size() << ", test "
        << bundle.test.size() << " (dropped " << bundle.dropped_low_confidence
        << " low-confidence samples)\n";

    std::unique_ptr<Model<float>> model;
    TrainerState state;
    bool resumed = false;
    if (!a.resume.empty()) {
        CheckpointData<float> data = load_checkpoint<float>(a.resume);
        model = std::move(data.model);
        state = data.state;
        resumed = true;
        manifest.add_input(a.resume);
        out << "resumed from " << a.resume << " at epoch " << state.epoch << "\n";
    } else {
        cfg.model.validate();
        model = std::make_unique<Model<float>>(cfg.model, derive_seed(cfg.train.seed, "init"));
        state = TrainerState::fresh(cfg.train);
    }
    manifest.config()["model"] = model_config_to_json(model->cfg);
    manifest.config()["train"] = train_config_to_json(cfg.train);
    manifest.config()["pipeline"] = pipeline_config_to_json(cfg.pipe);

    const fs::path history_path = out_dir / "history.csv";
    const bool append = resumed && fs::exists(history_path);
    std::ofstream history(history_path, append ? std::ios::app : std::ios::trunc);
    if (!history) throw IoError("cannot write " + history_path.string());
    if (!append) history << history_csv_header();

    TrainResult result =
        train(*model, bundle.train, bundle.val, store, cfg.train, state, out_dir.string(),
              [&](const EpochStats& s) {
                  history << history_csv_row(s);
                  history.flush();
                  char line[256];
                  std::snprintf(line, sizeof line,
                                "epoch %3d  train %.6g  val %.6g  gates %.3f/%.3f/%.3f  lr %.2g  "
                                "%.1fs\n",
                                s.epoch, s.train_loss, s.val_loss, s.gate_mean[0], s.gate_mean[1],
                                s.gate_mean[2], s.lr, s.seconds);
                  out << line;
                  return true;
              });

    json summary;
    summary["baseline_val_loss"] = result.baseline.val_loss;
    summary["baseline_val_steps"] = {result.baseline.val_step[0], result.baseline.val_step[1],
                                     result.baseline.val_step[2]};
    summary["best_val_loss"] = state.best_val;
    summary["best_epoch"] = state.best_epoch;
    summary["epochs_completed"] = state.epoch;
    summary["stop_reason"] = result.stop_reason;
    {
        std::ofstream s(out_dir / "summary.json");
        if (!s) throw IoError("cannot write " + (out_dir / "summary.json").string());
        s << summary.dump(2) << "\n";
    }

    if (fs::exists(out_dir / "best.ckpt")) manifest.add_output((out_dir / "best.ckpt").string());
    if (fs::exists(out_dir / "last.ckpt")) manifest.add_output((out_dir / "last.ckpt").string());
    manifest.add_output(history_path.string());
    manifest.add_output((out_dir / "summary.json").string());
    manifest.write(out_dir);
    out << "done: " << result.stop_reason << " after epoch " << state.epoch << ", best val "
        << state.best_val << " at epoch " << state.best_epoch << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string corpus;
    std::string ckpt;
    std::string out;
    std::string split = "test";
    double radius = 0.1;
    double fov = -1.0;  // <0: take from corpus metadata
    bool zero_head = false;
    bool dump_windows = false;
    int batch_size = 32;
};

int cmd_eval(const EvalArgs& a, const AppConfig& cfg, int argc, const char* const* argv,
             std::ostream& out) {
    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);
    ManifestWriter manifest("eval", argc, argv);
    manifest.add_input(a.ckpt);
    manifest.add_input((fs::path(a.corpus) / "split.json").string());

    CheckpointData<float> data = load_checkpoint<float>(a.ckpt);
    Model<float>& model = *data.model;

    SceneFeatureStore store =
        SceneFeatureStore::load((fs::path(a.corpus) / "features" / "manifest.json").string());
    PipelineConfig pipe = cfg.pipe;
    pipe.n_in = model.cfg.n_in;
    pipe.k_steps = model.cfg.k_steps;
    const DatasetBundle bundle = load_corpus(a.corpus, pipe, store);
    const std::vector<WindowSample>& windows = pick_split(bundle, a.split);

    const double fov = a.fov > 0.0 ? a.fov : corpus_fov_deg(a.corpus);
    SplitForward sf = run_split_forward(model, windows, store, a.batch_size, a.zero_head);

    MetricsReport report;
    compute_step_metrics(sf.preds, sf.targets, a.radius, fov, report);
    direction_error(sf.preds, sf.targets, report);
    gate_summary(sf.gates, report);

    manifest.config()["split"] = a.split;
    manifest.config()["radius"] = a.radius;
    manifest.config()["fov_deg"] = fov;
    manifest.config()["zero_head"] = a.zero_head;

    {
        std::ofstream f(out_dir / "metrics.json");
        if (!f) throw IoError("cannot write " + (out_dir / "metrics.json").string());
        f << report_to_json(report);
    }
    {
        std::ofstream f(out_dir / "metrics.csv");
        if (!f) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
        f << report_to_csv(report);
    }
    manifest.add_output((out_dir / "metrics.json").string());
    manifest.add_output((out_dir / "metrics.csv").string());

    if (a.dump_windows) {
        std::ofstream f(out_dir / "windows.csv");
        if (!f) throw IoError("cannot write " + (out_dir / "windows.csv").string());
        f << "window,scene_id,session_id,preset,gate_gaze,gate_head,gate_scene";
        for (int s = 1; s <= model.cfg.k_steps; ++s) {
            f << ",pred" << s << "_x,pred" << s << "_y,tgt" << s << "_x,tgt" << s << "_y";
        }
        f << "\n";
        char buf[128];
        for (int r = 0; r < sf.gates.rows; ++r) {
            const WindowSample& w = windows[static_cast<size_t>(sf.window_of_row[static_cast<size_t>(r)])];
            f << sf.window_of_row[static_cast<size_t>(r)] << "," << w.scene_id << ","
              << w.session_id << "," << store.preset(w.scene_feature_ref);
            std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g", sf.gates(r, 0), sf.gates(r, 1),
                          sf.gates(r, 2));
            f << buf;
            for (int s = 0; s < model.cfg.k_steps; ++s) {
                std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,%.17g",
                              sf.preds[static_cast<size_t>(s)](r, 0),
                              sf.preds[static_cast<size_t>(s)](r, 1),
                              sf.targets[static_cast<size_t>(s)](r, 0),
                              sf.targets[static_cast<size_t>(s)](r, 1));
                f << buf;
            }
            f << "\n";
        }
        manifest.add_output((out_dir / "windows.csv").string());
    }
    manifest.write(out_dir);

    out << "split " << a.split << ": " << report.samples << " windows"
        << (a.zero_head ? " (head inputs zeroed)" : "") << "\n";
    char line[160];
    for (size_t s = 0; s < report.mse.size(); ++s) {
        std::snprintf(line, sizeof line,
                      "step %zu: mse %.6g  hit@%.2g %.3f  euclid %.4g  angular %.3g deg\n", s + 1,
                      report.mse[s], a.radius, report.hit_rate[s], report.mean_euclidean[s],
                      report.mean_angular_deg[s]);
        out << line;
    }
    for (size_t s = 0; s < report.direction_error_deg.size(); ++s) {
        std::snprintf(line, sizeof line, "direction error step %zu: %.4g deg (%lld excluded)\n",
                      s + 2, report.direction_error_deg[s],
                      static_cast<long long>(report.direction_excluded[s]));
        out << line;
    }
    std::snprintf(line, sizeof line, "gates gaze/head/scene: %.4f/%.4f/%.4f\n",
                  report.gate_mean[0], report.gate_mean[1], report.gate_mean[2]);
    out << line;
    return kExitOk;
}

struct BenchArgs {
    std::string ckpt;
    std::string corpus;
    std::string out;
    int iters = 1000;
    int warmup = 50;
    int threads = 0;  // 0: FOVEACAST_THREADS or 1
};

int cmd_bench(const BenchArgs& a, int argc, const char* const* argv, std::ostream& out) {
    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);
    ManifestWriter manifest("bench", argc, argv);
    manifest.add_input(a.ckpt);

    CheckpointData<float> data = load_checkpoint<float>(a.ckpt);
    Model<float>& model = *data.model;
    const int threads = a.threads > 0 ? a.threads : env_thread_cap(1);

    // Input: a real window when a corpus is supplied, synthetic otherwise.
    ModelInput<float> input;
    std::unique_ptr<SceneFeatureStore> store;
    if (!a.corpus.empty()) {
        store = std::make_unique<SceneFeatureStore>(SceneFeatureStore::load(
            (fs::path(a.corpus) / "features" / "manifest.json").string()));
        PipelineConfig pipe;
        pipe.n_in = model.cfg.n_in;
        pipe.k_steps = model.cfg.k_steps;
        const DatasetBundle bundle = load_corpus(a.corpus, pipe, *store);
        const std::vector<WindowSample>& windows =
            !bundle.test.empty() ? bundle.test : (!bundle.val.empty() ? bundle.val : bundle.train);
        if (windows.empty()) throw EmptyInput("bench: corpus has no windows");
        input = input_from_window(windows.front(), *store, model.cfg.n_in);
    } else {
        std::mt19937_64 rng(7);
        input.gaze_seq.assign(static_cast<size_t>(model.cfg.n_in), Mat<float>(1, 2));
        input.head_seq.assign(static_cast<size_t>(model.cfg.n_in), Mat<float>(1, 4));
        for (int t = 0; t < model.cfg.n_in; ++t) {
            input.gaze_seq[static_cast<size_t>(t)](0, 0) = static_cast<float>(uniform_double(rng));
            input.gaze_seq[static_cast<size_t>(t)](0, 1) = static_cast<float>(uniform_double(rng));
            Quaternion q{uniform_range(rng, -1, 1), uniform_range(rng, -1, 1),
                         uniform_range(rng, -1, 1), uniform_range(rng, -1, 1)};
            q = quat_normalize(q);
            input.head_seq[static_cast<size_t>(t)](0, 0) = static_cast<float>(q.w);
            input.head_seq[static_cast<size_t>(t)](0, 1) = static_cast<float>(q.x);
            input.head_seq[static_cast<size_t>(t)](0, 2) = static_cast<float>(q.y);
            input.head_seq[static_cast<size_t>(t)](0, 3) = static_cast<float>(q.z);
        }
        input.scene = Mat<float>(1, model.cfg.scene_input_dim());
        for (int c = 0; c < input.scene.cols; ++c)
            input.scene(0, c) = static_cast<float>(uniform_double(rng));
    }

    // Per-thread model copies isolate parameter caches; thread 0's timings
    // feed the latency report, matching the single-threaded hot-path design.
    std::vector<std::vector<double>> lat_us(static_cast<size_t>(threads));
    auto run_thread = [&](int tid, Model<float>& m) {
        std::vector<double>& lats = lat_us[static_cast<size_t>(tid)];
        lats.reserve(static_cast<size_t>(a.iters));
        volatile float sink = 0.0f;
        for (int i = 0; i < a.warmup; ++i) {
            ModelOutput<float> o = m.forward(input);
            sink = sink + o.preds[0](0, 0);
        }
        for (int i = 0; i < a.iters; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            ModelOutput<float> o = m.forward(input);
            const auto t1 = std::chrono::steady_clock::now();
            sink = sink + o.preds[0](0, 0);
            lats.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
        }
        (void)sink;
    };

    if (threads == 1) {
        run_thread(0, model);
    } else {
        std::vector<std::unique_ptr<Model<float>>> copies;
        for (int t = 1; t < threads; ++t) copies.push_back(std::make_unique<Model<float>>(model));
        std::vector<std::thread> pool;
        for (int t = 1; t < threads; ++t)
            pool.emplace_back(run_thread, t, std::ref(*copies[static_cast<size_t>(t - 1)]));
        run_thread(0, model);
        for (std::thread& t : pool) t.join();
    }

    std::vector<double> sorted = lat_us[0];
    std::sort(sorted.begin(), sorted.end());
    auto pct = [&](double q) {
        const size_t idx = static_cast<size_t>(std::ceil(q * static_cast<double>(sorted.size()))) - 1;
        return sorted[std::min(idx, sorted.size() - 1)];
    };
    double sum = 0.0;
    for (double v : sorted) sum += v;
    const double mean_us = sum / static_cast<double>(sorted.size());

    json rep;
    rep["iters"] = a.iters;
    rep["warmup"] = a.warmup;
    rep["threads"] = threads;
    rep["mean_ms"] = mean_us / 1000.0;
    rep["p50_ms"] = pct(0.50) / 1000.0;
    rep["p95_ms"] = pct(0.95) / 1000.0;
    rep["p99_ms"] = pct(0.99) / 1000.0;
    rep["max_ms"] = sorted.back() / 1000.0;
    rep["fps"] = 1e6 / mean_us;
    if (threads > 1) {
        double all = 0.0;
        int64_t n = 0;
        for (const std::vector<double>& lats : lat_us)
            for (double v : lats) {
                all += v;
                ++n;
            }
        rep["aggregate_mean_ms"] = all / static_cast<double>(n) / 1000.0;
        rep["aggregate_throughput_fps"] =
            static_cast<double>(threads) * 1e6 / (all / static_cast<double>(n));
    }
    {
        std::ofstream f(out_dir / "bench.json");
        if (!f) throw IoError("cannot write " + (out_dir / "bench.json").string());
        f << rep.dump(2) << "\n";
    }
    {
        std::ofstream f(out_dir / "latencies.csv");
        if (!f) throw IoError("cannot write " + (out_dir / "latencies.csv").string());
        f << "thread,iteration,latency_us\n";
        char buf[96];
        for (size_t t = 0; t < lat_us.size(); ++t)
            for (size_t i = 0; i < lat_us[t].size(); ++i) {
                std::snprintf(buf, sizeof buf, "%zu,%zu,%.3f\n", t, i, lat_us[t][i]);
                f << buf;
            }
    }
    manifest.add_output((out_dir / "bench.json").string());
    manifest.add_output((out_dir / "latencies.csv").string());
    manifest.write(out_dir);

    char line[200];
    std::snprintf(line, sizeof line,
                  "latency over %d iters (batch 1, %d thread%s): mean %.3f ms  p50 %.3f  p95 %.3f"
                  "  p99 %.3f  max %.3f  -> %.1f FPS\n",
                  a.iters, threads, threads == 1 ? "" : "s", mean_us / 1000.0, pct(0.5) / 1000.0,
                  pct(0.95) / 1000.0, pct(0.99) / 1000.0, sorted.back() / 1000.0, 1e6 / mean_us);
    out << line;
    return kExitOk;
}

struct InspectArgs {
    std::string corpus;
    std::string ckpt;
    std::string out;
    std::string split = "test";
    int batch_size = 32;
};

int cmd_inspect_gates(const InspectArgs& a, const AppConfig& cfg, int argc,
                      const char* const* argv, std::ostream& out) {
    const fs::path out_dir(a.out);
    fs::create_directories(out_dir);
    ManifestWriter manifest("inspect-gates", argc, argv);
    manifest.add_input(a.ckpt);

    CheckpointData<float> data = load_checkpoint<float>(a.ckpt);
    Model<float>& model = *data.model;
    SceneFeatureStore store =
        SceneFeatureStore::load((fs::path(a.corpus) / "features" / "manifest.json").string());
    PipelineConfig pipe = cfg.pipe;
    pipe.n_in = model.cfg.n_in;
    pipe.k_steps = model.cfg.k_steps;
    const DatasetBundle bundle = load_corpus(a.corpus, pipe, store);
    const std::vector<WindowSample>& windows = pick_split(bundle, a.split);

    SplitForward sf = run_split_forward(model, windows, store, a.batch_size, false);

    {
        std::ofstream f(out_dir / "gates.csv");
        if (!f) throw IoError("cannot write " + (out_dir / "gates.csv").string());
        f << "window,scene_id,session_id,preset,gate_gaze,gate_head,gate_scene\n";
        char buf[128];
        for (int r = 0; r < sf.gates.rows; ++r) {
            const WindowSample& w = windows[static_cast<size_t>(sf.window_of_row[static_cast<size_t>(r)])];
            std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", sf.gates(r, 0), sf.gates(r, 1),
                          sf.gates(r, 2));
            f << sf.window_of_row[static_cast<size_t>(r)] << "," << w.scene_id << ","
              << w.session_id << "," << store.preset(w.scene_feature_ref) << buf;
        }
    }

    // Summaries: one row for everything, one per scene preset.
    std::map<std::string, std::vector<int>> groups;
    groups["all"] = {};
    for (int r = 0; r < sf.gates.rows; ++r) {
        const WindowSample& w = windows[static_cast<size_t>(sf.window_of_row[static_cast<size_t>(r)])];
        groups["all"].push_back(r);
        groups["preset:" + store.preset(w.scene_feature_ref)].push_back(r);
    }
    {
        std::ofstream f(out_dir / "gate_summary.csv");
        if (!f) throw IoError("cannot write " + (out_dir / "gate_summary.csv").string());
        f << "group,samples,gaze_mean,gaze_std,head_mean,head_std,scene_mean,scene_std\n";
        char buf[256];
        for (const auto& [name, rows] : groups) {
            Mat<double> sub(static_cast<int>(rows.size()), 3);
            for (size_t i = 0; i < rows.size(); ++i)
                for (int c = 0; c < 3; ++c) sub(static_cast<int>(i), c) = sf.gates(rows[i], c);
            MetricsReport rep;
            gate_summary(sub, rep);
            std::snprintf(buf, sizeof buf, "%s,%zu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", name.c_str(),
                          rows.size(), rep.gate_mean[0], rep.gate_std[0], rep.gate_mean[1],
                          rep.gate_std[1], rep.gate_mean[2], rep.gate_std[2]);
            f << buf;
            if (name == "all") {
                std::snprintf(buf, sizeof buf,
                              "gates over %zu windows: gaze %.4f  head %.4f  scene %.4f\n",
                              rows.size(), rep.gate_mean[0], rep.gate_mean[1], rep.gate_mean[2]);
                out << buf;
            }
        }
    }
    manifest.add_output((out_dir / "gates.csv").string());
    manifest.add_output((out_dir / "gate_summary.csv").string());
    manifest.write(out_dir);
    return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out) {
    try {
        AppConfig cfg = preparse_config(argc, argv);
        std::string config_path;  // consumed by preparse; declared so CLI11 accepts it

        CLI::App app{"gaze forecasting toolkit: synthetic corpora, training, evaluation,"
                     " gate inspection, latency benchmarks"};
        app.require_subcommand(1);
        app.add_option("--config", config_path, "JSON config file (defaults for all flag groups)")
            ->expected(1);

        GenArgs gen_args;
        CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
        gen->add_option("--out", gen_args.out, "output corpus directory")->required();
        gen->add_option("--scenes", cfg.synth.n_scenes, "number of scenes");
        gen->add_option("--sessions", cfg.synth.n_sessions_per_scene, "sessions per scene");
        gen->add_option("--seconds", cfg.synth.duration_s, "session duration (s)");
        gen->add_option("--rate", cfg.synth.sample_rate_hz, "sample rate (Hz)");
        gen->add_option("--seed", cfg.synth.seed, "corpus seed");
        gen->add_option("--pursuit-gain", cfg.synth.pursuit_gain, "gaze pursuit gain [0,1]");
        gen->add_option("--saccade-rate", cfg.synth.saccade_rate_hz, "saccades per second");
        gen->add_option("--noise-std", cfg.synth.fixation_noise_std, "fixation jitter std");
        gen->add_option("--dropout", cfg.synth.dropout_fraction, "low-confidence fraction");
        gen->add_option("--lead-min", cfg.synth.head_lead_min_ms, "min head lead (ms)");
        gen->add_option("--lead-max", cfg.synth.head_lead_max_ms, "max head lead (ms)");
        gen->add_option("--fov-x", cfg.synth.fov_x_deg, "horizontal FOV (deg)");
        gen->add_option("--fov-y", cfg.synth.fov_y_deg, "vertical FOV (deg)");
        gen->add_option("--train-scenes", cfg.synth.n_train_scenes, "explicit train scene count");
        gen->add_option("--val-scenes", cfg.synth.n_val_scenes, "explicit val scene count");
        gen->add_option("--test-scenes", cfg.synth.n_test_scenes, "explicit test scene count");
        std::string preset_name;
        gen->add_option("--preset", preset_name, "scene preset: bounce|crossing|mixed");
        gen->add_flag("--image-features", gen_args.image_features,
                      "emit grayscale occupancy images instead of feature vectors");
        gen->add_option("--image-resolution", gen_args.image_resolution, "image edge (pixels)");

        TrainArgs train_args;
        CLI::App* tr = app.add_subcommand("train", "train a model on a corpus");
        tr->add_option("--corpus", train_args.corpus, "corpus directory")->required();
        tr->add_option("--out", train_args.out, "output directory")->required();
        tr->add_option("--resume", train_args.resume, "checkpoint to continue from");
        tr->add_option("--seed", cfg.train.seed, "training seed");
        tr->add_option("--epochs", cfg.train.max_epochs, "maximum epochs");
        tr->add_option("--lr", cfg.train.lr, "learning rate");
        tr->add_option("--weight-decay", cfg.train.weight_decay, "L2 weight decay");
        tr->add_option("--batch", cfg.train.batch_size, "batch size");
        tr->add_option("--lambda-aux", cfg.train.lambda_aux, "auxiliary loss weight");
        tr->add_option("--sched-patience", cfg.train.sched_patience, "plateau patience");
        tr->add_option("--sched-factor", cfg.train.sched_factor, "plateau lr factor");
        tr->add_option("--min-lr", cfg.train.min_lr, "lr floor");
        tr->add_option("--stop-patience", cfg.train.early_stop_patience, "early-stop patience");
        tr->add_option("--hidden", cfg.model.hidden, "encoder hidden size");
        tr->add_option("--fused-proj", cfg.model.fused_proj, "fused projection size");
        tr->add_option("--gate-hidden", cfg.model.gate_hidden, "gate MLP hidden size");
        tr->add_option("--head-hidden", cfg.model.head_hidden, "prediction head hidden size");
        tr->add_option("--n-in", cfg.pipe.n_in, "input window length");
        tr->add_option("--k-steps", cfg.pipe.k_steps, "prediction steps");
        tr->add_option("--stride", cfg.pipe.stride, "window stride");
        tr->add_option("--threshold", cfg.pipe.confidence_threshold, "confidence threshold");

        EvalArgs eval_args;
        CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
        ev->add_option("--corpus", eval_args.corpus, "corpus directory")->required();
        ev->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
        ev->add_option("--out", eval_args.out, "output directory")->required();
        ev->add_option("--split", eval_args.split, "train|val|test");
        ev->add_option("--radius", eval_args.radius, "hit radius (normalized units)");
        ev->add_option("--fov", eval_args.fov, "FOV (deg) for angular errors");
        ev->add_option("--batch", eval_args.batch_size, "evaluation batch size");
        ev->add_flag("--zero-head", eval_args.zero_head, "zero head inputs (ablation)");
        ev->add_flag("--dump-windows", eval_args.dump_windows, "write per-window CSV");

        BenchArgs bench_args;
        CLI::App* be = app.add_subcommand("bench", "measure single-window forward latency");
        be->add_option("--ckpt", bench_args.ckpt, "checkpoint path")->required();
        be->add_option("--out", bench_args.out, "output directory")->required();
        be->add_option("--corpus", bench_args.corpus, "corpus for a representative window");
        be->add_option("--iters", bench_args.iters, "timed iterations")
            ->check(CLI::PositiveNumber);
        be->add_option("--warmup", bench_args.warmup, "warmup iterations");
        be->add_option("--threads", bench_args.threads,
                       "worker threads (default FOVEACAST_THREADS or 1)");

        InspectArgs inspect_args;
        CLI::App* ig = app.add_subcommand("inspect-gates", "dump fusion gates per window");
        ig->add_option("--corpus", inspect_args.corpus, "corpus directory")->required();
        ig->add_option("--ckpt", inspect_args.ckpt, "checkpoint path")->required();
        ig->add_option("--out", inspect_args.out, "output directory")->required();
        ig->add_option("--split", inspect_args.split, "train|val|test");
        ig->add_option("--batch", inspect_args.batch_size, "batch size");

        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            out << app.help();
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            out << "error: " << e.what() << "\n";
            return kExitUsage;
        }

        if (!preset_name.empty()) cfg.synth.preset = scene_preset_from_name(preset_name);

        if (gen->parsed()) return cmd_gen(gen_args, cfg, argc, argv, out);
        if (tr->parsed()) return cmd_train(train_args, cfg, argc, argv, out);
        if (ev->parsed()) return cmd_eval(eval_args, cfg, argc, argv, out);
        if (be->parsed()) return cmd_bench(bench_args, argc, argv, out);
        if (ig->parsed()) return cmd_inspect_gates(inspect_args, cfg, argc, argv, out);
        out << "error: no subcommand\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        out << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout); }

}  // namespace foveacast
