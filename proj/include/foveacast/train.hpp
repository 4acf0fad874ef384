#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "foveacast/datapipe.hpp"
#include "foveacast/model.hpp"

namespace foveacast {

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-5;
    int batch_size = 32;
    int sched_patience = 3;
    double sched_factor = 0.5;
    double min_lr = 1e-6;
    int early_stop_patience = 5;
    int max_epochs = 50;
    uint64_t seed = 1;
    double lambda_aux = 0.5;
    // Relative improvement below this is treated as a plateau, for both the
    // scheduler and early stopping; guards against float-noise resets.
    double improve_rel_eps = 1e-8;
    int prefetch_depth = 4;

    void validate() const;
};

// Validation-plateau learning-rate schedule: halve (factor) after `patience`
// consecutive epochs without relative improvement, floored at min_lr.
struct PlateauScheduler {
    double lr = 1e-3;
    double factor = 0.5;
    double min_lr = 1e-6;
    double rel_eps = 1e-8;
    int patience = 3;
    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;

    double step(double val_loss) {
        if (val_loss < best * (1.0 - rel_eps)) {
            best = val_loss;
            bad_epochs = 0;
        } else if (++bad_epochs >= patience) {
            lr = std::max(lr * factor, min_lr);
            bad_epochs = 0;
        }
        return lr;
    }
};

struct EarlyStopper {
    double rel_eps = 1e-8;
    int patience = 5;
    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;

    // True when training should stop.
    bool step(double val_loss) {
        if (val_loss < best * (1.0 - rel_eps)) {
            best = val_loss;
            bad_epochs = 0;
            return false;
        }
        return ++bad_epochs >= patience;
    }
};

struct EpochStats {
    int epoch = 0;  // 1-based; 0 is the untrained baseline
    double train_loss = 0.0;
    double val_loss = 0.0;                      // total objective
    double val_step[3] = {0.0, 0.0, 0.0};       // unweighted per-step mse
    double gate_mean[3] = {0.0, 0.0, 0.0};      // gaze, head, scene
    double lr = 0.0;
    double seconds = 0.0;

    double val_spatial(const std::vector<double>& weights) const {
        double s = 0.0;
        for (size_t i = 0; i < weights.size() && i < 3; ++i) s += weights[i] * val_step[i];
        return s;
    }
};

std::string history_csv_header();
std::string history_csv_row(const EpochStats& s);

// Everything beyond parameters needed to continue a run exactly: epoch
// counter, shuffle rng, scheduler and stopper counters, best-so-far tracking.
struct TrainerState {
    int epoch = 0;  // completed epochs
    std::mt19937_64 rng;
    PlateauScheduler sched;
    EarlyStopper stop;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    static TrainerState fresh(const TrainConfig& cfg) {
        TrainerState st;
        st.rng.seed(cfg.seed);
        st.sched = PlateauScheduler{cfg.lr, cfg.sched_factor, cfg.min_lr, cfg.improve_rel_eps,
                                    cfg.sched_patience};
        st.stop = EarlyStopper{cfg.improve_rel_eps, cfg.early_stop_patience};
        return st;
    }
};

struct TrainResult {
    std::vector<EpochStats> history;  // trained epochs only
    EpochStats baseline;              // untrained validation pass (epoch 0)
    std::string stop_reason;          // "max_epochs" | "early_stop" | "callback"
};

// --- checkpoint format -------------------------------------------------------
//
// A checkpoint is a JSON manifest plus a sibling raw blob ("<path>.bin") of
// little-endian float32 values: for each manifest entry, the parameter values
// followed by the Adam first and second moments, at `offset` (in floats).

constexpr int kCheckpointFormatVersion = 1;

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json trainer_state_to_json(const TrainerState& st);
TrainerState trainer_state_from_json(const nlohmann::json& j);

template <typename T>
void save_checkpoint(const Model<T>& model_const, const TrainerState& state,
                     const std::string& path) {
    // Registry access requires a mutable reference; nothing is modified.
    Model<T>& model = const_cast<Model<T>&>(model_const);
    nlohmann::json j;
    j["format_version"] = kCheckpointFormatVersion;
    j["model_config"] = model_config_to_json(model.cfg);
    j["trainer"] = trainer_state_to_json(state);
    const std::string blob_name = std::filesystem::path(path).filename().string() + ".bin";
    j["blob"] = blob_name;

    std::vector<float> blob;
    nlohmann::json entries = nlohmann::json::array();
    for (const NamedParam<T>& np : model.registry()) {
        const Param<T>& p = *np.param;
        nlohmann::json e;
        e["name"] = np.name;
        e["rows"] = p.value.rows;
        e["cols"] = p.value.cols;
        e["offset"] = blob.size();
        e["step_count"] = p.step_count;
        entries.push_back(e);
        for (T v : p.value.data) blob.push_back(static_cast<float>(v));
        for (T v : p.m.data) blob.push_back(static_cast<float>(v));
        for (T v : p.v.data) blob.push_back(static_cast<float>(v));
    }
    j["entries"] = entries;
    j["blob_floats"] = blob.size();

    const std::string blob_path =
        (std::filesystem::path(path).parent_path() / blob_name).string();
    {
        std::ofstream out(blob_path, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint blob: " + blob_path);
        out.write(reinterpret_cast<const char*>(blob.data()),
                  static_cast<std::streamsize>(blob.size() * sizeof(float)));
        if (!out) throw IoError("checkpoint blob write failed: " + blob_path);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("checkpoint write failed: " + path);
}

template <typename T>
struct CheckpointData {
    std::unique_ptr<Model<T>> model;
    TrainerState state;
};

template <typename T>
CheckpointData<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptManifest(std::string("checkpoint json: ") + e.what());
    }
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion)
            throw VersionMismatch("checkpoint format " + std::to_string(version) + ", expected " +
                                  std::to_string(kCheckpointFormatVersion));
        CheckpointData<T> out;
        out.model = std::make_unique<Model<T>>(model_config_from_json(j.at("model_config")), 0);
        out.state = trainer_state_from_json(j.at("trainer"));

        const std::string blob_name = j.at("blob").get<std::string>();
        const std::string blob_path =
            (std::filesystem::path(path).parent_path() / blob_name).string();
        const size_t blob_floats = j.at("blob_floats").get<size_t>();
        std::vector<float> blob(blob_floats);
        {
            std::ifstream bin(blob_path, std::ios::binary);
            if (!bin) throw CorruptManifest("missing checkpoint blob: " + blob_path);
            bin.read(reinterpret_cast<char*>(blob.data()),
                     static_cast<std::streamsize>(blob.size() * sizeof(float)));
            if (bin.gcount() != static_cast<std::streamsize>(blob.size() * sizeof(float)))
                throw CorruptManifest("checkpoint blob truncated: " + blob_path);
            char extra;
            if (bin.read(&extra, 1))
                throw CorruptManifest("checkpoint blob longer than declared: " + blob_path);
        }

        std::map<std::string, const nlohmann::json*> by_name;
        for (const nlohmann::json& e : j.at("entries"))
            by_name[e.at("name").get<std::string>()] = &e;
        for (NamedParam<T>& np : out.model->registry()) {
            auto it = by_name.find(np.name);
            if (it == by_name.end()) throw CorruptManifest("checkpoint missing entry " + np.name);
            const nlohmann::json& e = *it->second;
            Param<T>& p = *np.param;
            const int rows = e.at("rows").get<int>();
            const int cols = e.at("cols").get<int>();
            if (rows != p.value.rows || cols != p.value.cols)
                throw ShapeMismatch("checkpoint entry " + np.name + " is " + std::to_string(rows) +
                                    "x" + std::to_string(cols) + ", model has " +
                                    p.value.shape_str());
            const size_t offset = e.at("offset").get<size_t>();
            const size_t count = p.value.data.size();
            if (offset + 3 * count > blob.size())
                throw CorruptManifest("checkpoint entry " + np.name + " overruns blob");
            p.step_count = e.at("step_count").get<int64_t>();
            for (size_t i = 0; i < count; ++i) {
                p.value.data[i] = static_cast<T>(blob[offset + i]);
                p.m.data[i] = static_cast<T>(blob[offset + count + i]);
                p.v.data[i] = static_cast<T>(blob[offset + 2 * count + i]);
            }
            by_name.erase(it);
        }
        if (!by_name.empty())
            throw CorruptManifest("checkpoint has unknown entry " + by_name.begin()->first);
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptManifest(std::string("checkpoint manifest: ") + e.what());
    }
}

// --- evaluation + training loop ----------------------------------------------

template <typename T>
EpochStats validate_pass(Model<T>& model, const std::vector<WindowSample>& windows,
                         const SceneFeatureStore& store, int batch_size) {
    if (windows.empty()) throw EmptyInput("validate_pass");
    EpochStats s;
    std::vector<int> order(windows.size());
    for (size_t i = 0; i < windows.size(); ++i) order[i] = static_cast<int>(i);
    BatchIterator<T> it(windows, store, order, batch_size);
    double total = 0.0, step_sum[3] = {0, 0, 0}, gate_sum[3] = {0, 0, 0};
    int64_t rows = 0;
    while (auto b = it.next()) {
        ModelInput<T> in{b->gaze_seq, b->head_seq, b->scene};
        ModelOutput<T> out = model.forward(in);
        LossBreakdown lb = model.compute_loss(out, b->targets);
        const int B = b->scene.rows;
        total += lb.total * B;
        for (int k = 0; k < model.cfg.k_steps && k < 3; ++k)
            step_sum[k] += mse_loss(out.preds[static_cast<size_t>(k)],
                                    b->targets[static_cast<size_t>(k)]) *
                           B;
        for (int r = 0; r < B; ++r) {
            gate_sum[0] += out.gates.gaze(r, 0);
            gate_sum[1] += out.gates.head(r, 0);
            gate_sum[2] += out.gates.scene(r, 0);
        }
        rows += B;
    }
    s.val_loss = total / static_cast<double>(rows);
    for (int k = 0; k < 3; ++k) s.val_step[k] = step_sum[k] / static_cast<double>(rows);
    for (int g = 0; g < 3; ++g) s.gate_mean[g] = gate_sum[g] / static_cast<double>(rows);
    return s;
}

// Runs epochs until a stop condition; state carries across calls, so a
// resumed run continues exactly where the interrupted one left off. When
// out_dir is nonempty, "last.ckpt" tracks every epoch and "best.ckpt" the
// best validation loss. on_epoch (optional) can stop training by returning
// false.
template <typename T>
TrainResult train(Model<T>& model, const std::vector<WindowSample>& train_windows,
                  const std::vector<WindowSample>& val_windows, const SceneFeatureStore& store,
                  const TrainConfig& cfg, TrainerState& state, const std::string& out_dir = "",
                  const std::function<bool(const EpochStats&)>& on_epoch = {}) {
    cfg.validate();
    if (train_windows.empty() || val_windows.empty()) throw EmptyInput("train datasets");
    model.cfg.lambda_aux = cfg.lambda_aux;

    TrainResult result;
    result.baseline = validate_pass(model, val_windows, store, cfg.batch_size);
    result.baseline.lr = state.sched.lr;
    result.stop_reason = "max_epochs";

    while (state.epoch < cfg.max_epochs) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr_used = state.sched.lr;
        AdamConfig adam{lr_used, 0.9, 0.999, 1e-8, cfg.weight_decay};

        std::vector<int> order =
            epoch_order(static_cast<int>(train_windows.size()), state.rng);
        PrefetchLoader<T> loader(train_windows, store, std::move(order), cfg.batch_size,
                                 static_cast<size_t>(cfg.prefetch_depth));
        double train_sum = 0.0;
        int64_t train_rows = 0;
        int batch_index = 0;
        while (auto b = loader.next()) {
            ModelInput<T> in{std::move(b->gaze_seq), std::move(b->head_seq), std::move(b->scene)};
            model.zero_grads();
            LossBreakdown lb;
            try {
                lb = model.train_step_loss(in, b->targets, true);
            } catch (const NonFinite&) {
                throw NonFiniteLoss("epoch " + std::to_string(state.epoch + 1) + " batch " +
                                    std::to_string(batch_index));
            }
            for (NamedParam<T>& np : model.registry()) adam_step(*np.param, adam);
            train_sum += lb.total * in.scene.rows;
            train_rows += in.scene.rows;
            ++batch_index;
        }

        EpochStats stats = validate_pass(model, val_windows, store, cfg.batch_size);
        ++state.epoch;
        stats.epoch = state.epoch;
        stats.train_loss = train_sum / static_cast<double>(train_rows);
        stats.lr = lr_used;
        stats.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        state.sched.step(stats.val_loss);
        const bool stop_now = state.stop.step(stats.val_loss);
        if (stats.val_loss < state.best_val) {
            state.best_val = stats.val_loss;
            state.best_epoch = state.epoch;
            if (!out_dir.empty())
                save_checkpoint(model, state, (std::filesystem::path(out_dir) / "best.ckpt").string());
        }
        if (!out_dir.empty())
            save_checkpoint(model, state, (std::filesystem::path(out_dir) / "last.ckpt").string());

        result.history.push_back(stats);
        if (on_epoch && !on_epoch(stats)) {
            result.stop_reason = "callback";
            break;
        }
        if (stop_now) {
            result.stop_reason = "early_stop";
            break;
        }
    }
    return result;
}

}  // namespace foveacast
