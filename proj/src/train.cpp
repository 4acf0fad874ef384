#include "foveacast/train.hpp"

#include <cstdio>

using nlohmann::json;

namespace foveacast {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw Error("lr must be > 0");
    if (weight_decay < 0.0) throw Error("weight_decay must be >= 0");
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (sched_patience < 1 || early_stop_patience < 1) throw Error("patience values must be >= 1");
    if (!(sched_factor > 0.0 && sched_factor < 1.0)) throw Error("sched_factor must be in (0,1)");
    if (!(min_lr > 0.0)) throw Error("min_lr must be > 0");
    if (max_epochs < 0) throw Error("max_epochs must be >= 0");
    if (lambda_aux < 0.0) throw Error("lambda_aux must be >= 0");
    if (prefetch_depth < 1) throw Error("prefetch_depth must be >= 1");
}

std::string history_csv_header() {
    return "epoch,train_loss,val_loss,val_s1,val_s2,val_s3,gate_gaze,gate_head,gate_scene,lr,"
           "seconds\n";
}

std::string history_csv_row(const EpochStats& s) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.6f\n", s.epoch,
                  s.train_loss, s.val_loss, s.val_step[0], s.val_step[1], s.val_step[2],
                  s.gate_mean[0], s.gate_mean[1], s.gate_mean[2], s.lr, s.seconds);
    return buf;
}

json model_config_to_json(const ModelConfig& cfg) {
    json j;
    j["hidden"] = cfg.hidden;
    j["fused_proj"] = cfg.fused_proj;
    j["n_in"] = cfg.n_in;
    j["k_steps"] = cfg.k_steps;
    j["gate_hidden"] = cfg.gate_hidden;
    j["head_hidden"] = cfg.head_hidden;
    j["scene_feature_dim"] = cfg.scene_feature_dim;
    j["spatial_weights"] = cfg.spatial_weights;
    j["lambda_aux"] = cfg.lambda_aux;
    j["scene_mode"] = scene_mode_name(cfg.scene_mode);
    j["conv_resolution"] = cfg.conv_resolution;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.hidden = j.at("hidden").get<int>();
    cfg.fused_proj = j.at("fused_proj").get<int>();
    cfg.n_in = j.at("n_in").get<int>();
    cfg.k_steps = j.at("k_steps").get<int>();
    cfg.gate_hidden = j.at("gate_hidden").get<int>();
    cfg.head_hidden = j.at("head_hidden").get<int>();
    cfg.scene_feature_dim = j.at("scene_feature_dim").get<int>();
    cfg.spatial_weights = j.at("spatial_weights").get<std::vector<double>>();
    cfg.lambda_aux = j.at("lambda_aux").get<double>();
    const std::string mode = j.at("scene_mode").get<std::string>();
    if (mode == "precomputed")
        cfg.scene_mode = SceneMode::precomputed;
    else if (mode == "conv")
        cfg.scene_mode = SceneMode::conv;
    else
        throw CorruptManifest("unknown scene_mode '" + mode + "'");
    cfg.conv_resolution = j.at("conv_resolution").get<int>();
    cfg.validate();
    return cfg;
}

json trainer_state_to_json(const TrainerState& st) {
    json j;
    j["epoch"] = st.epoch;
    j["best_val"] = st.best_val;
    j["best_epoch"] = st.best_epoch;
    std::ostringstream rng;
    rng << st.rng;
    j["rng"] = rng.str();
    j["sched"] = {{"lr", st.sched.lr},       {"factor", st.sched.factor},
                  {"min_lr", st.sched.min_lr}, {"rel_eps", st.sched.rel_eps},
                  {"patience", st.sched.patience}, {"best", st.sched.best},
                  {"bad_epochs", st.sched.bad_epochs}};
    j["stop"] = {{"rel_eps", st.stop.rel_eps},
                 {"patience", st.stop.patience},
                 {"best", st.stop.best},
                 {"bad_epochs", st.stop.bad_epochs}};
    return j;
}

namespace {

// Infinity does not survive a JSON round trip as a number; nlohmann emits
// null. Counters at their fresh values come back as infinity.
double json_double(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

TrainerState trainer_state_from_json(const json& j) {
    TrainerState st;
    st.epoch = j.at("epoch").get<int>();
    st.best_val = json_double(j.at("best_val"));
    st.best_epoch = j.at("best_epoch").get<int>();
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> st.rng;
    if (!rng) throw CorruptManifest("unreadable rng state");
    const json& s = j.at("sched");
    st.sched.lr = s.at("lr").get<double>();
    st.sched.factor = s.at("factor").get<double>();
    st.sched.min_lr = s.at("min_lr").get<double>();
    st.sched.rel_eps = s.at("rel_eps").get<double>();
    st.sched.patience = s.at("patience").get<int>();
    st.sched.best = json_double(s.at("best"));
    st.sched.bad_epochs = s.at("bad_epochs").get<int>();
    const json& e = j.at("stop");
    st.stop.rel_eps = e.at("rel_eps").get<double>();
    st.stop.patience = e.at("patience").get<int>();
    st.stop.best = json_double(e.at("best"));
    st.stop.bad_epochs = e.at("bad_epochs").get<int>();
    return st;
}

}  // namespace foveacast
