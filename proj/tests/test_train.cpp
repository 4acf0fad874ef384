#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "foveacast/geometry.hpp"
#include "foveacast/rng.hpp"
#include "foveacast/train.hpp"

using namespace foveacast;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("foveacast_tr_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden = 4;
    cfg.fused_proj = 6;
    cfg.n_in = 5;
    cfg.k_steps = 3;
    cfg.gate_hidden = 3;
    cfg.head_hidden = 4;
    cfg.scene_feature_dim = 4;
    return cfg;
}

std::vector<WindowSample> random_windows(int count, int n, int k, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<WindowSample> ws(static_cast<size_t>(count));
    for (auto& w : ws) {
        w.gaze_in.resize(static_cast<size_t>(n) * 2);
        for (auto& v : w.gaze_in) v = uniform_double(rng);
        w.head_in.resize(static_cast<size_t>(n) * 4);
        for (int t = 0; t < n; ++t) {
            Quaternion q = quat_normalize(
                {1.0 + gaussian(rng) * 0.1, gaussian(rng) * 0.1, gaussian(rng) * 0.1,
                 gaussian(rng) * 0.1});
            w.head_in[static_cast<size_t>(4 * t)] = q.w;
            w.head_in[static_cast<size_t>(4 * t + 1)] = q.x;
            w.head_in[static_cast<size_t>(4 * t + 2)] = q.y;
            w.head_in[static_cast<size_t>(4 * t + 3)] = q.z;
        }
        w.targets.resize(static_cast<size_t>(k) * 2);
        for (auto& v : w.targets) v = uniform_double(rng);
        w.scene_id = "sc";
        w.session_id = "se";
        w.scene_feature_ref = 0;
    }
    return ws;
}

SceneFeatureStore tiny_store() {
    SceneFeatureStore store;
    store.add("sc", {0.1f, 0.6f, 0.3f, 0.9f});
    return store;
}

TrainConfig quick_train_config(int epochs) {
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.max_epochs = epochs;
    cfg.seed = 5;
    cfg.prefetch_depth = 2;
    return cfg;
}

bool stats_equal(const EpochStats& a, const EpochStats& b) {
    bool eq = a.epoch == b.epoch && a.train_loss == b.train_loss && a.val_loss == b.val_loss &&
              a.lr == b.lr;
    for (int i = 0; i < 3; ++i)
        eq = eq && a.val_step[i] == b.val_step[i] && a.gate_mean[i] == b.gate_mean[i];
    return eq;  // seconds intentionally excluded
}

}  // namespace

TEST_CASE("plateau scheduler halves only after sustained stalls") {
    PlateauScheduler s{1e-3, 0.5, 1e-6, 1e-8, 3};
    CHECK(s.step(1.0) == doctest::Approx(1e-3));
    CHECK(s.step(0.9) == doctest::Approx(1e-3));
    CHECK(s.step(0.8) == doctest::Approx(1e-3));

    // Four flat epochs with patience 3: one halving after the third.
    CHECK(s.step(0.8) == doctest::Approx(1e-3));
    CHECK(s.step(0.8) == doctest::Approx(1e-3));
    CHECK(s.step(0.8) == doctest::Approx(5e-4));
    CHECK(s.step(0.8) == doctest::Approx(5e-4));

    // An improvement resets the stall counter.
    CHECK(s.step(0.5) == doctest::Approx(5e-4));
    CHECK(s.step(0.5) == doctest::Approx(5e-4));
    CHECK(s.step(0.5) == doctest::Approx(5e-4));
    CHECK(s.step(0.5) == doctest::Approx(2.5e-4));
}

TEST_CASE("plateau scheduler never drops below the floor") {
    PlateauScheduler s{1e-3, 0.5, 3e-4, 1e-8, 1};
    s.step(1.0);
    for (int i = 0; i < 10; ++i) s.step(1.0);
    CHECK(s.lr == doctest::Approx(3e-4));
}

TEST_CASE("early stopping waits out the full patience window") {
    EarlyStopper stop{1e-8, 5};
    for (double v : {1.0, 0.9, 0.8, 0.7, 0.6, 0.5}) CHECK_FALSE(stop.step(v));

    EarlyStopper flat{1e-8, 5};
    CHECK_FALSE(flat.step(1.0));
    for (int i = 0; i < 4; ++i) CHECK_FALSE(flat.step(1.0));
    CHECK(flat.step(1.0));  // fifth consecutive stall

    EarlyStopper reset{1e-8, 5};
    reset.step(1.0);
    reset.step(1.0);
    reset.step(1.0);
    reset.step(1.0);  // three stalls so far
    CHECK_FALSE(reset.step(0.5));  // improvement on the next epoch resets
    for (int i = 0; i < 4; ++i) CHECK_FALSE(reset.step(0.5));
    CHECK(reset.step(0.5));
}

TEST_CASE("history CSV format is stable") {
    CHECK(history_csv_header() ==
          "epoch,train_loss,val_loss,val_s1,val_s2,val_s3,gate_gaze,gate_head,gate_scene,lr,"
          "seconds\n");
    EpochStats s;
    // Values picked to be exact in binary so the %.17g rendering is short.
    s.epoch = 2;
    s.train_loss = 0.5;
    s.val_loss = 0.25;
    s.val_step[0] = 0.125;
    s.val_step[1] = 0.375;
    s.val_step[2] = 0.75;
    s.gate_mean[0] = 0.5;
    s.gate_mean[1] = 0.25;
    s.gate_mean[2] = 0.25;
    s.lr = 0.0009765625;  // 2^-10
    s.seconds = 1.5;
    CHECK(history_csv_row(s) ==
          "2,0.5,0.25,0.125,0.375,0.75,0.5,0.25,0.25,0.0009765625,1.500000\n");
}

TEST_CASE("zero max epochs still produces the untrained baseline") {
    Model<float> model(tiny_config(), 1);
    auto train_w = random_windows(40, 5, 3, 1);
    auto val_w = random_windows(20, 5, 3, 2);
    SceneFeatureStore store = tiny_store();
    TrainConfig cfg = quick_train_config(0);
    TrainerState st = TrainerState::fresh(cfg);
    TrainResult r = train(model, train_w, val_w, store, cfg, st);
    CHECK(r.history.empty());
    CHECK(r.stop_reason == "max_epochs");
    CHECK(r.baseline.val_loss > 0.0);
    CHECK(r.baseline.epoch == 0);
}

TEST_CASE("training is reproducible from the seed alone") {
    auto train_w = random_windows(60, 5, 3, 1);
    auto val_w = random_windows(24, 5, 3, 2);
    SceneFeatureStore store = tiny_store();
    TrainConfig cfg = quick_train_config(3);

    Model<float> m1(tiny_config(), 7);
    TrainerState s1 = TrainerState::fresh(cfg);
    TrainResult r1 = train(m1, train_w, val_w, store, cfg, s1);

    Model<float> m2(tiny_config(), 7);
    TrainerState s2 = TrainerState::fresh(cfg);
    TrainResult r2 = train(m2, train_w, val_w, store, cfg, s2);

    REQUIRE(r1.history.size() == 3);
    REQUIRE(r2.history.size() == 3);
    CHECK(stats_equal(r1.baseline, r2.baseline));
    for (size_t i = 0; i < 3; ++i) CHECK(stats_equal(r1.history[i], r2.history[i]));

    // Parameters end up bitwise identical too.
    for (size_t i = 0; i < m1.registry().size(); ++i)
        for (size_t d = 0; d < m1.registry()[i].param->value.data.size(); ++d)
            CHECK(m1.registry()[i].param->value.data[d] == m2.registry()[i].param->value.data[d]);
}

TEST_CASE("trainer bookkeeping tracks the best epoch and a sane lr path") {
    Model<float> model(tiny_config(), 3);
    auto train_w = random_windows(60, 5, 3, 3);
    auto val_w = random_windows(24, 5, 3, 4);
    SceneFeatureStore store = tiny_store();
    TrainConfig cfg = quick_train_config(4);
    TrainerState st = TrainerState::fresh(cfg);
    TrainResult r = train(model, train_w, val_w, store, cfg, st);
    REQUIRE_FALSE(r.history.empty());

    double min_val = std::numeric_limits<double>::infinity();
    int min_epoch = -1;
    double prev_lr = cfg.lr;
    for (const EpochStats& e : r.history) {
        if (e.val_loss < min_val) {
            min_val = e.val_loss;
            min_epoch = e.epoch;
        }
        CHECK(e.lr <= prev_lr);  // plateau schedule never raises the rate
        CHECK(e.lr >= cfg.min_lr);
        prev_lr = e.lr;
        CHECK(std::isfinite(e.train_loss));
        CHECK(e.val_spatial({0.5, 0.3, 0.2}) > 0.0);
    }
    CHECK(st.best_val == min_val);
    CHECK(st.best_epoch == min_epoch);
    for (size_t i = 0; i < r.history.size(); ++i)
        CHECK(r.history[i].epoch == static_cast<int>(i) + 1);
}

TEST_CASE("an on-epoch callback can stop the run") {
    Model<float> model(tiny_config(), 3);
    auto train_w = random_windows(40, 5, 3, 3);
    auto val_w = random_windows(20, 5, 3, 4);
    SceneFeatureStore store = tiny_store();
    TrainConfig cfg = quick_train_config(10);
    TrainerState st = TrainerState::fresh(cfg);
    TrainResult r = train(model, train_w, val_w, store, cfg, st, "",
                          [](const EpochStats& e) { return e.epoch < 2; });
    CHECK(r.history.size() == 2);
    CHECK(r.stop_reason == "callback");
}

TEST_CASE("trainer state JSON roundtrip preserves the rng stream and counters") {
    TrainConfig cfg = quick_train_config(4);
    TrainerState st = TrainerState::fresh(cfg);
    st.epoch = 7;
    st.best_val = 0.125;
    st.best_epoch = 6;
    st.sched.step(1.0);
    st.sched.step(1.0);
    st.stop.step(1.0);
    st.rng();  // advance the stream
    st.rng();

    TrainerState back = trainer_state_from_json(trainer_state_to_json(st));
    CHECK(back.epoch == st.epoch);
    CHECK(back.best_val == st.best_val);
    CHECK(back.best_epoch == st.best_epoch);
    CHECK(back.sched.lr == st.sched.lr);
    CHECK(back.sched.best == st.sched.best);
    CHECK(back.sched.bad_epochs == st.sched.bad_epochs);
    CHECK(back.stop.bad_epochs == st.stop.bad_epochs);
    for (int i = 0; i < 16; ++i) CHECK(back.rng() == st.rng());
}

TEST_CASE("checkpoints reload to a bitwise-identical forward pass") {
    TempDir tmp;
    Model<float> model(tiny_config(), 21);
    TrainConfig cfg = quick_train_config(1);
    TrainerState st = TrainerState::fresh(cfg);
    const std::string path = (tmp.path / "model.ckpt").string();
    save_checkpoint(model, st, path);

    CheckpointData<float> loaded = load_checkpoint<float>(path);
    auto windows = random_windows(8, 5, 3, 9);
    SceneFeatureStore store = tiny_store();
    std::vector<int> order = {0, 1, 2, 3, 4, 5, 6, 7};
    Batch<float> b = pack_batch<float>(windows, order, 0, 8, store);
    ModelInput<float> in{b.gaze_seq, b.head_seq, b.scene};
    ModelOutput<float> a = model.forward(in);
    ModelOutput<float> c = loaded.model->forward(in);
    for (size_t s = 0; s < a.preds.size(); ++s)
        for (size_t i = 0; i < a.preds[s].data.size(); ++i)
            CHECK(a.preds[s].data[i] == c.preds[s].data[i]);
    for (size_t i = 0; i < a.aux_head_pred.data.size(); ++i)
        CHECK(a.aux_head_pred.data[i] == c.aux_head_pred.data[i]);
}

TEST_CASE("a resumed run reproduces the uninterrupted one") {
    auto train_w = random_windows(60, 5, 3, 31);
    auto val_w = random_windows(24, 5, 3, 32);
    SceneFeatureStore store = tiny_store();

    // Uninterrupted: four epochs straight through.
    Model<float> solo(tiny_config(), 77);
    TrainConfig cfg4 = quick_train_config(4);
    TrainerState solo_st = TrainerState::fresh(cfg4);
    TrainResult solo_r = train(solo, train_w, val_w, store, cfg4, solo_st);
    REQUIRE(solo_r.history.size() == 4);

    // Interrupted: two epochs, checkpoint to disk, reload, two more.
    TempDir tmp;
    Model<float> part(tiny_config(), 77);
    TrainConfig cfg2 = quick_train_config(2);
    TrainerState part_st = TrainerState::fresh(cfg2);
    TrainResult first = train(part, train_w, val_w, store, cfg2, part_st, tmp.path.string());
    REQUIRE(first.history.size() == 2);

    CheckpointData<float> resumed = load_checkpoint<float>((tmp.path / "last.ckpt").string());
    TrainResult second =
        train(*resumed.model, train_w, val_w, store, cfg4, resumed.state);
    REQUIRE(second.history.size() == 2);

    CHECK(stats_equal(solo_r.history[0], first.history[0]));
    CHECK(stats_equal(solo_r.history[1], first.history[1]));
    CHECK(stats_equal(solo_r.history[2], second.history[0]));
    CHECK(stats_equal(solo_r.history[3], second.history[1]));

    for (size_t i = 0; i < solo.registry().size(); ++i)
        for (size_t d = 0; d < solo.registry()[i].param->value.data.size(); ++d)
            CHECK(solo.registry()[i].param->value.data[d] ==
                  resumed.model->registry()[i].param->value.data[d]);
}

TEST_CASE("best checkpoint tracks the minimum validation loss") {
    TempDir tmp;
    Model<float> model(tiny_config(), 55);
    auto train_w = random_windows(48, 5, 3, 41);
    auto val_w = random_windows(16, 5, 3, 42);
    SceneFeatureStore store = tiny_store();
    TrainConfig cfg = quick_train_config(3);
    TrainerState st = TrainerState::fresh(cfg);
    TrainResult r = train(model, train_w, val_w, store, cfg, st, tmp.path.string());

    CHECK(fs::exists(tmp.path / "best.ckpt"));
    CHECK(fs::exists(tmp.path / "best.ckpt.bin"));
    CHECK(fs::exists(tmp.path / "last.ckpt"));
    CheckpointData<float> best = load_checkpoint<float>((tmp.path / "best.ckpt").string());
    CHECK(best.state.best_epoch == st.best_epoch);

    double min_val = std::numeric_limits<double>::infinity();
    for (const auto& e : r.history) min_val = std::min(min_val, e.val_loss);
    CHECK(st.best_val == min_val);
}

TEST_CASE("corrupt checkpoints fail with the specific error class") {
    TempDir tmp;
    Model<float> model(tiny_config(), 5);
    TrainConfig cfg = quick_train_config(1);
    TrainerState st = TrainerState::fresh(cfg);
    const std::string path = (tmp.path / "m.ckpt").string();
    const std::string blob = path + ".bin";
    save_checkpoint(model, st, path);

    auto read_json = [&]() {
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        return j;
    };
    auto write_json = [&](const nlohmann::json& j) {
        std::ofstream out(path);
        out << j.dump(2) << "\n";
    };
    auto restore = [&]() { save_checkpoint(model, st, path); };

    CHECK_THROWS_AS(load_checkpoint<float>((tmp.path / "absent.ckpt").string()), IoError);

    // Truncated manifest text is not valid JSON.
    {
        std::ifstream in(path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::trunc);
        out << text.substr(0, text.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptManifest);
    restore();

    // Wrong format version.
    {
        nlohmann::json j = read_json();
        j["format_version"] = kCheckpointFormatVersion + 1;
        write_json(j);
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), VersionMismatch);
    restore();

    // Blob gone, short, and long.
    fs::remove(blob);
    CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptManifest);
    restore();
    fs::resize_file(blob, fs::file_size(blob) - 4);
    CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptManifest);
    restore();
    {
        std::ofstream out(blob, std::ios::binary | std::ios::app);
        const float pad = 0.0f;
        out.write(reinterpret_cast<const char*>(&pad), sizeof pad);
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptManifest);
    restore();

    // A reshaped entry no longer matches the model.
    {
        nlohmann::json j = read_json();
        j["entries"][0]["rows"] = j["entries"][0]["rows"].get<int>() + 1;
        write_json(j);
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), ShapeMismatch);
    restore();

    // A dropped entry and an unknown extra entry are both corruption.
    {
        nlohmann::json j = read_json();
        j["entries"].erase(0);
        write_json(j);
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptManifest);
    restore();
    {
        nlohmann::json j = read_json();
        nlohmann::json e;
        e["name"] = "bogus.w";
        e["rows"] = 1;
        e["cols"] = 1;
        e["offset"] = 0;
        e["step_count"] = 0;
        j["entries"].push_back(e);
        write_json(j);
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), CorruptManifest);
}

TEST_CASE("a poisoned optimizer moment surfaces as a located non-finite loss") {
    Model<float> model(tiny_config(), 5);
    // Moments do not touch the forward pass, so the baseline and the first
    // batch stay finite; the first optimizer step then drives the weight to
    // infinity and the second batch blows up inside the loop.
    for (auto& np : model.registry())
        if (np.name == "scene_head.w")
            np.param->m.data[0] = -std::numeric_limits<float>::infinity();
    auto train_w = random_windows(40, 5, 3, 51);
    auto val_w = random_windows(16, 5, 3, 52);
    SceneFeatureStore store = tiny_store();
    TrainConfig cfg = quick_train_config(1);
    TrainerState st = TrainerState::fresh(cfg);
    try {
        train(model, train_w, val_w, store, cfg, st);
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(std::string(e.what()).find("epoch 1 batch 1") != std::string::npos);
    }
}

TEST_CASE("training rejects empty datasets") {
    Model<float> model(tiny_config(), 5);
    auto w = random_windows(8, 5, 3, 61);
    SceneFeatureStore store = tiny_store();
    TrainConfig cfg = quick_train_config(1);
    TrainerState st = TrainerState::fresh(cfg);
    CHECK_THROWS_AS(train(model, {}, w, store, cfg, st), EmptyInput);
    CHECK_THROWS_AS(train(model, w, {}, store, cfg, st), EmptyInput);
    CHECK_THROWS_AS(validate_pass(model, {}, store, 8), EmptyInput);
}

TEST_CASE("train config validation rejects nonsense") {
    TrainConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.sched_factor = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.max_epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}
