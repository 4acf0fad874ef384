#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "foveacast/gradcheck.hpp"
#include "foveacast/nn.hpp"
#include "foveacast/scene_encoder.hpp"

namespace foveacast {

enum class SceneMode { precomputed, conv };

inline const char* scene_mode_name(SceneMode m) {
    return m == SceneMode::precomputed ? "precomputed" : "conv";
}

struct ModelConfig {
    int hidden = 128;
    int fused_proj = 256;
    int n_in = 15;
    int k_steps = 3;
    int gate_hidden = 64;
    int head_hidden = 128;
    int scene_feature_dim = 512;
    std::vector<double> spatial_weights = {0.5, 0.3, 0.2};
    double lambda_aux = 0.5;
    SceneMode scene_mode = SceneMode::precomputed;
    int conv_resolution = 64;  // square grayscale input edge, conv mode only

    void validate() const {
        if (static_cast<int>(spatial_weights.size()) != k_steps)
            throw CountMismatch("spatial_weights length " +
                                std::to_string(spatial_weights.size()) + " vs k_steps " +
                                std::to_string(k_steps));
        for (double w : spatial_weights)
            if (!(w > 0.0)) throw Error("spatial weights must be positive");
        if (lambda_aux < 0.0) throw Error("lambda_aux must be >= 0");
        if (hidden < 1 || fused_proj < 1 || n_in < 1 || k_steps < 1)
            throw Error("model dimensions must be positive");
    }

    int scene_input_dim() const {
        return scene_mode == SceneMode::precomputed ? scene_feature_dim
                                                    : conv_resolution * conv_resolution;
    }
};

// Normalized per-row fusion weights; each column vector is B x 1.
template <typename T>
struct FusionGates {
    Mat<T> gaze, head, scene;
};

template <typename T>
struct ModelOutput {
    std::vector<Mat<T>> preds;  // k entries of B x 2
    FusionGates<T> gates;
    Mat<T> aux_head_pred, aux_scene_pred;         // B x 2
    Mat<T> f_gaze, f_head, f_scene, f_fused;      // B x H diagnostics
};

// Per-batch input: sequences are time-major lists of B x D matrices.
template <typename T>
struct ModelInput {
    std::vector<Mat<T>> gaze_seq;  // n_in of B x 2
    std::vector<Mat<T>> head_seq;  // n_in of B x 4
    Mat<T> scene;                  // B x scene_input_dim
};

// Clamp-and-renormalize gate combination from the two sigmoid outputs
// (B x 1 each): raw gaze weight 1 - a - b clamps at zero, then all three are
// divided by their sum, landing on the probability simplex.
template <typename T>
FusionGates<T> combine_gate_sigmoids(const Mat<T>& a, const Mat<T>& b) {
    a.require_same_shape(b, "combine_gate_sigmoids");
    const int B = a.rows;
    FusionGates<T> g{Mat<T>(B, 1), Mat<T>(B, 1), Mat<T>(B, 1)};
    for (int r = 0; r < B; ++r) {
        const T ah = a(r, 0), bs = b(r, 0);
        const T raw = T(1) - ah - bs;
        const T c = raw > T(0) ? raw : T(0);
        const T sum = ah + bs + c;
        g.gaze(r, 0) = c / sum;
        g.head(r, 0) = ah / sum;
        g.scene(r, 0) = bs / sum;
    }
    return g;
}

// Convex combination of the three feature rows under the given gates.
template <typename T>
Mat<T> fuse(const Mat<T>& f_gaze, const Mat<T>& f_head, const Mat<T>& f_scene,
            const FusionGates<T>& gates) {
    f_gaze.require_same_shape(f_head, "fuse");
    f_gaze.require_same_shape(f_scene, "fuse");
    Mat<T> out(f_gaze.rows, f_gaze.cols);
    for (int r = 0; r < out.rows; ++r) {
        const T gg = gates.gaze(r, 0), gh = gates.head(r, 0), gs = gates.scene(r, 0);
        for (int c = 0; c < out.cols; ++c)
            out(r, c) = gg * f_gaze(r, c) + gh * f_head(r, c) + gs * f_scene(r, c);
    }
    return out;
}

// Weighted multi-step spatial objective: sum_i w_i * mean_batch ||pred_i - target_i||^2.
template <typename T>
double spatial_loss(const std::vector<Mat<T>>& preds, const std::vector<Mat<T>>& targets,
                    const std::vector<double>& weights) {
    if (preds.size() != targets.size() || preds.size() != weights.size())
        throw ShapeMismatch("spatial_loss: steps " + std::to_string(preds.size()) + "/" +
                            std::to_string(targets.size()) + "/" + std::to_string(weights.size()));
    double acc = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) acc += weights[i] * mse_loss(preds[i], targets[i]);
    return acc;
}

inline double total_loss(double spatial, double aux_head, double aux_scene, double lambda_aux) {
    const double t = spatial + lambda_aux * (aux_head + aux_scene);
    if (!std::isfinite(t)) throw NonFinite("total_loss");
    return t;
}

struct LossBreakdown {
    double spatial = 0.0;
    double aux_head = 0.0;
    double aux_scene = 0.0;
    double total = 0.0;
};

// The full predictor: scene projection head, gaze/head LSTM encoders,
// three-way gated fusion, autoregressive multi-step heads and auxiliary
// per-encoder heads. Forward caches everything backward needs; backward
// populates gradients across the parameter registry.
template <typename T>
class Model {
  public:
    ModelConfig cfg;

    Model(const ModelConfig& config, uint64_t init_seed) : cfg(config) {
        cfg.validate();
        std::mt19937_64 rng(init_seed);
        if (cfg.scene_mode == SceneMode::conv) {
            conv_ = SceneConvEncoder<T>(cfg.conv_resolution, rng);
            if (conv_.out_dim() != cfg.scene_feature_dim)
                throw ShapeMismatch("conv encoder emits " + std::to_string(conv_.out_dim()) +
                                    ", scene_feature_dim " + std::to_string(cfg.scene_feature_dim));
        }
        scene_head_ = Linear<T>(cfg.scene_feature_dim, cfg.hidden, rng);
        gaze_lstm_ = LstmStack<T>(2, cfg.hidden, rng);
        head_lstm_ = LstmStack<T>(4, cfg.hidden, rng);
        gate_head_mlp_ = Mlp2<T>(cfg.hidden, cfg.gate_hidden, 1, true, rng);
        gate_scene_mlp_ = Mlp2<T>(cfg.hidden, cfg.gate_hidden, 1, true, rng);
        proj_ = Linear<T>(cfg.hidden, cfg.fused_proj, rng);
        heads_.clear();
        for (int i = 0; i < cfg.k_steps; ++i)
            heads_.emplace_back(cfg.fused_proj + 2 * i, cfg.head_hidden, 2, true, rng);
        aux_head_ = Linear<T>(cfg.hidden, 2, rng);
        aux_scene_ = Linear<T>(cfg.hidden, 2, rng);
        build_registry();
    }

    Model(const Model& o) : cfg(o.cfg), conv_(o.conv_), scene_head_(o.scene_head_),
          gaze_lstm_(o.gaze_lstm_), head_lstm_(o.head_lstm_), gate_head_mlp_(o.gate_head_mlp_),
          gate_scene_mlp_(o.gate_scene_mlp_), proj_(o.proj_), heads_(o.heads_),
          aux_head_(o.aux_head_), aux_scene_(o.aux_scene_) {
        build_registry();
    }
    Model& operator=(const Model&) = delete;

    const ParamRegistry<T>& registry() const { return registry_; }
    ParamRegistry<T>& registry() { return registry_; }

    void zero_grads() {
        for (auto& np : registry_) np.param->zero_grad();
    }

    // Scene projection: precomputed features go straight through the linear
    // head; conv mode runs the image stack first. Output is post-ReLU.
    Mat<T> scene_encode(const Mat<T>& scene_input) {
        if (scene_input.cols != cfg.scene_input_dim())
            throw ModeMismatch("scene input " + scene_input.shape_str() + ", expected cols " +
                               std::to_string(cfg.scene_input_dim()) + " in mode " +
                               scene_mode_name(cfg.scene_mode));
        Mat<T> feat = cfg.scene_mode == SceneMode::conv ? conv_.forward(scene_input) : scene_input;
        scene_pre_ = scene_head_.forward(feat);
        return activate(ActKind::relu, scene_pre_);
    }

    Mat<T> gaze_encode(const std::vector<Mat<T>>& seq) {
        require_seq(seq, 2, "gaze_encode");
        return gaze_lstm_.forward(seq);
    }

    Mat<T> head_encode(const std::vector<Mat<T>>& seq) {
        require_seq(seq, 4, "head_encode");
        return head_lstm_.forward(seq);
    }

    // Gates conditioned on gaze features alone.
    FusionGates<T> compute_gates(const Mat<T>& f_gaze) {
        Mat<T> a = gate_head_mlp_.forward(f_gaze);
        Mat<T> b = gate_scene_mlp_.forward(f_gaze);
        return combine_gate_sigmoids(a, b);
    }

    // Autoregressive multi-step prediction: each head sees the projected
    // features concatenated with all earlier predictions, gradients flow
    // through the whole chain.
    std::vector<Mat<T>> predict_steps(const Mat<T>& f_fused) {
        proj_out_ = proj_.forward(f_fused);
        std::vector<Mat<T>> preds;
        preds.reserve(heads_.size());
        for (size_t i = 0; i < heads_.size(); ++i) {
            Mat<T> in = hconcat(proj_out_, preds);
            preds.push_back(heads_[i].forward(in));
        }
        return preds;
    }

    ModelOutput<T> forward(const ModelInput<T>& in) {
        if (in.gaze_seq.empty() || in.gaze_seq[0].rows == 0) throw EmptyInput("model forward");
        ModelOutput<T> out;
        out.f_scene = scene_encode(in.scene);
        out.f_gaze = gaze_encode(in.gaze_seq);
        out.f_head = head_encode(in.head_seq);
        out.gates = compute_gates(out.f_gaze);
        out.f_fused = fuse(out.f_gaze, out.f_head, out.f_scene, out.gates);
        out.preds = predict_steps(out.f_fused);
        aux_head_pre_ = aux_head_.forward(out.f_head);
        out.aux_head_pred = activate(ActKind::sigmoid, aux_head_pre_);
        aux_scene_pre_ = aux_scene_.forward(out.f_scene);
        out.aux_scene_pred = activate(ActKind::sigmoid, aux_scene_pre_);
        return out;
    }

    LossBreakdown compute_loss(const ModelOutput<T>& out, const std::vector<Mat<T>>& targets) const {
        LossBreakdown lb;
        lb.spatial = spatial_loss(out.preds, targets, cfg.spatial_weights);
        lb.aux_head = mse_loss(out.aux_head_pred, targets.at(0));
        lb.aux_scene = mse_loss(out.aux_scene_pred, targets.at(0));
        lb.total = total_loss(lb.spatial, lb.aux_head, lb.aux_scene, cfg.lambda_aux);
        return lb;
    }

    // Backward of the total objective; accumulates into every registered
    // Param's grad. Auxiliary gradients keep the head/scene encoders alive
    // even when their fusion gates vanish.
    void backward(const ModelOutput<T>& out, const std::vector<Mat<T>>& targets) {
        if (out.preds.empty()) throw MissingForwardCache("model backward");
        const int B = out.preds[0].rows;
        const int H = cfg.hidden;
        const int P = cfg.fused_proj;
        const int K = cfg.k_steps;

        // Spatial-loss gradients per step, then the autoregressive chain in
        // reverse: each head also feeds gradient back into earlier preds.
        std::vector<Mat<T>> dpred(static_cast<size_t>(K));
        for (int i = 0; i < K; ++i)
            dpred[static_cast<size_t>(i)] =
                mse_loss_backward(out.preds[static_cast<size_t>(i)],
                                  targets.at(static_cast<size_t>(i)), cfg.spatial_weights[static_cast<size_t>(i)]);
        Mat<T> dproj(B, P);
        for (int i = K - 1; i >= 0; --i) {
            Mat<T> din = heads_[static_cast<size_t>(i)].backward(dpred[static_cast<size_t>(i)]);
            // din columns: [proj | pred_0 | ... | pred_{i-1}]
            for (int r = 0; r < B; ++r)
                for (int c = 0; c < P; ++c) dproj(r, c) += din(r, c);
            for (int j = 0; j < i; ++j)
                for (int r = 0; r < B; ++r)
                    for (int c = 0; c < 2; ++c)
                        dpred[static_cast<size_t>(j)](r, c) += din(r, P + 2 * j + c);
        }
        Mat<T> df_fused = proj_.backward(dproj);

        // Fusion backward: per-row feature and gate gradients.
        Mat<T> df_gaze(B, H), df_head(B, H), df_scene(B, H);
        Mat<T> dg_gaze(B, 1), dg_head(B, 1), dg_scene(B, 1);
        for (int r = 0; r < B; ++r) {
            const T gg = out.gates.gaze(r, 0), gh = out.gates.head(r, 0), gs = out.gates.scene(r, 0);
            T ag = T(0), ah = T(0), as = T(0);
            for (int c = 0; c < H; ++c) {
                const T d = df_fused(r, c);
                df_gaze(r, c) = gg * d;
                df_head(r, c) = gh * d;
                df_scene(r, c) = gs * d;
                ag += d * out.f_gaze(r, c);
                ah += d * out.f_head(r, c);
                as += d * out.f_scene(r, c);
            }
            dg_gaze(r, 0) = ag;
            dg_head(r, 0) = ah;
            dg_scene(r, 0) = as;
        }

        // Through clamp-and-renormalize into the two sigmoid outputs.
        const Mat<T>& a = gate_head_mlp_.cached_y;
        const Mat<T>& b = gate_scene_mlp_.cached_y;
        Mat<T> da(B, 1), db(B, 1);
        for (int r = 0; r < B; ++r) {
            const T av = a(r, 0), bv = b(r, 0);
            const T raw = T(1) - av - bv;
            if (raw > T(0)) {
                // Sum is exactly 1: gates are (raw, a, b) directly.
                da(r, 0) = dg_head(r, 0) - dg_gaze(r, 0);
                db(r, 0) = dg_scene(r, 0) - dg_gaze(r, 0);
            } else {
                // Clamp active: gaze gate pinned at 0, senior terms renormalized by S = a + b.
                const T S = av + bv;
                const T inv2 = T(1) / (S * S);
                da(r, 0) = dg_head(r, 0) * bv * inv2 - dg_scene(r, 0) * bv * inv2;
                db(r, 0) = dg_scene(r, 0) * av * inv2 - dg_head(r, 0) * av * inv2;
            }
        }
        df_gaze.add_(gate_head_mlp_.backward(da));
        df_gaze.add_(gate_scene_mlp_.backward(db));

        // Auxiliary heads: direct supervision against the first target.
        if (cfg.lambda_aux > 0.0) {
            Mat<T> daux_h = mse_loss_backward(out.aux_head_pred, targets.at(0), cfg.lambda_aux);
            Mat<T> dpre_h =
                activate_backward(ActKind::sigmoid, daux_h, out.aux_head_pred, out.aux_head_pred);
            df_head.add_(aux_head_.backward(dpre_h));
            Mat<T> daux_s = mse_loss_backward(out.aux_scene_pred, targets.at(0), cfg.lambda_aux);
            Mat<T> dpre_s =
                activate_backward(ActKind::sigmoid, daux_s, out.aux_scene_pred, out.aux_scene_pred);
            df_scene.add_(aux_scene_.backward(dpre_s));
        }

        gaze_lstm_.backward(df_gaze);
        head_lstm_.backward(df_head);
        Mat<T> dpre_scene = activate_backward(ActKind::relu, df_scene, scene_pre_, scene_pre_);
        Mat<T> dfeat = scene_head_.backward(dpre_scene);
        if (cfg.scene_mode == SceneMode::conv) conv_.backward(dfeat);
    }

    // Convenience wrapper used by the trainer and gradient checks.
    LossBreakdown train_step_loss(const ModelInput<T>& in, const std::vector<Mat<T>>& targets,
                                  bool with_backward) {
        ModelOutput<T> out = forward(in);
        LossBreakdown lb = compute_loss(out, targets);
        if (with_backward) backward(out, targets);
        return lb;
    }

  private:
    SceneConvEncoder<T> conv_;
    Linear<T> scene_head_;
    LstmStack<T> gaze_lstm_;
    LstmStack<T> head_lstm_;
    Mlp2<T> gate_head_mlp_;
    Mlp2<T> gate_scene_mlp_;
    Linear<T> proj_;
    std::vector<Mlp2<T>> heads_;
    Linear<T> aux_head_;
    Linear<T> aux_scene_;
    ParamRegistry<T> registry_;

    Mat<T> scene_pre_, proj_out_, aux_head_pre_, aux_scene_pre_;

    void build_registry() {
        registry_.clear();
        if (cfg.scene_mode == SceneMode::conv) conv_.register_params(registry_, "scene_conv");
        scene_head_.register_params(registry_, "scene_head");
        gaze_lstm_.register_params(registry_, "gaze_lstm");
        head_lstm_.register_params(registry_, "head_lstm");
        gate_head_mlp_.register_params(registry_, "gate_head_mlp");
        gate_scene_mlp_.register_params(registry_, "gate_scene_mlp");
        proj_.register_params(registry_, "proj");
        for (size_t i = 0; i < heads_.size(); ++i)
            heads_[i].register_params(registry_, "head" + std::to_string(i + 1));
        aux_head_.register_params(registry_, "aux_head");
        aux_scene_.register_params(registry_, "aux_scene");
    }

    static Mat<T> hconcat(const Mat<T>& base, const std::vector<Mat<T>>& extras) {
        int cols = base.cols;
        for (const auto& e : extras) cols += e.cols;
        Mat<T> out(base.rows, cols);
        for (int r = 0; r < base.rows; ++r) {
            int c0 = 0;
            for (int c = 0; c < base.cols; ++c) out(r, c0 + c) = base(r, c);
            c0 += base.cols;
            for (const auto& e : extras) {
                for (int c = 0; c < e.cols; ++c) out(r, c0 + c) = e(r, c);
                c0 += e.cols;
            }
        }
        return out;
    }

    void require_seq(const std::vector<Mat<T>>& seq, int dim, const char* where) const {
        if (seq.empty()) throw EmptySequence(where);
        if (static_cast<int>(seq.size()) != cfg.n_in)
            throw ShapeMismatch(std::string(where) + ": sequence length " +
                                std::to_string(seq.size()) + " vs n_in " + std::to_string(cfg.n_in));
        for (const auto& m : seq)
            if (m.cols != dim)
                throw ShapeMismatch(std::string(where) + ": step dim " + std::to_string(m.cols));
    }
};

}  // namespace foveacast
