#pragma once
#include <type_traits>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "deepsofa/numerics.hpp"
#include "deepsofa/series.hpp"

namespace deepsofa {

enum class AttentionMode { self_attention, global_attention, last_hidden };

// Self-attention query choice. current_step scores every prior hidden state
// against the present one; per_step scores each hidden state against itself
// (the compatibilities then depend only on i, not on the current hour).
enum class SelfQueryMode { current_step, per_step };

inline const char* to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::self_attention: return "self_attention";
        case AttentionMode::global_attention: return "global_attention";
        case AttentionMode::last_hidden: return "last_hidden";
    }
    return "self_attention";
}

inline AttentionMode attention_mode_from_string(const std::string& s) {
    if (s == "self_attention") return AttentionMode::self_attention;
    if (s == "global_attention") return AttentionMode::global_attention;
    if (s == "last_hidden") return AttentionMode::last_hidden;
    throw std::invalid_argument("unknown attention mode: " + s);
}

// Organ-system column subsets for single-system models; empty result means a
// lookup failure, "all" returns every column.
inline std::vector<int> feature_subset_columns(const std::string& name) {
    auto cols = [](std::initializer_list<Var> vars) {
        std::vector<int> v;
        for (Var x : vars) v.push_back(idx(x));
        return v;
    };
    if (name == "all") {
        std::vector<int> v(kNumVars);
        for (int i = 0; i < kNumVars; ++i) v[static_cast<std::size_t>(i)] = i;
        return v;
    }
    if (name == "cardiovascular")
        return cols({Var::map, Var::dopamine, Var::dobutamine, Var::epinephrine,
                     Var::norepinephrine});
    if (name == "respiratory") return cols({Var::fio2, Var::pao2, Var::spo2, Var::mv});
    if (name == "cns") return cols({Var::gcs});
    if (name == "coagulation") return cols({Var::platelets});
    if (name == "liver") return cols({Var::bilirubin});
    if (name == "renal") return cols({Var::creatinine, Var::urine});
    throw std::invalid_argument("unknown feature subset: " + name);
}

template <typename S>
struct ModelConfigT {
    int input_dim = kNumVars;
    int hidden_dim = 64;
    S dropout_p = S(0.2);
    S l2_lambda = S(1e-6);
    S learning_rate = S(1e-3);
    int batch_size = 16;
    int patience_epochs = 5;
    int max_epochs = 100;
    S val_fraction = S(0.1);
    AttentionMode attention = AttentionMode::self_attention;
    SelfQueryMode self_query = SelfQueryMode::current_step;
    bool scale_logits = false;  // optional 1/sqrt(k); off by default
    std::vector<int> feature_columns;  // into the 14-column grid; empty = all
    uint64_t seed = 1;
    VecX<S> feat_mean;  // per selected column, fit on the training split
    VecX<S> feat_std;

    std::vector<int> resolved_columns() const {
        if (!feature_columns.empty()) return feature_columns;
        std::vector<int> v(kNumVars);
        for (int i = 0; i < kNumVars; ++i) v[static_cast<std::size_t>(i)] = i;
        return v;
    }

    // keep input_dim in step with the column selection for grid-fed models
    void sync_input_dim() { input_dim = static_cast<int>(resolved_columns().size()); }
};

using ModelConfig = ModelConfigT<double>;

template <typename S>
struct ModelParamsT {
    MatX<S> W_r, U_r, b_r;  // reset gate (k x d, k x k, k x 1)
    MatX<S> W_z, U_z, b_z;  // update gate
    MatX<S> W_x, U_h, b_h;  // candidate state
    MatX<S> W_q, W_k, W_v;  // self-attention projections (k x k); empty otherwise
    MatX<S> W_att;          // global attention vector (1 x k); empty otherwise
    MatX<S> W_y, b_y;       // output head (1 x k, 1 x 1)

    template <typename F>
    void for_each(F&& f) {
        f("W_r", W_r); f("U_r", U_r); f("b_r", b_r);
        f("W_z", W_z); f("U_z", U_z); f("b_z", b_z);
        f("W_x", W_x); f("U_h", U_h); f("b_h", b_h);
        f("W_q", W_q); f("W_k", W_k); f("W_v", W_v);
        f("W_att", W_att);
        f("W_y", W_y); f("b_y", b_y);
    }

    template <typename F>
    void for_each(F&& f) const {
        const_cast<ModelParamsT*>(this)->for_each(
            [&](const char* name, MatX<S>& m) { f(name, static_cast<const MatX<S>&>(m)); });
    }

    // Non-empty parameter matrices in fixed declaration order.
    std::vector<MatX<S>*> param_ptrs() {
        std::vector<MatX<S>*> out;
        for_each([&](const char*, MatX<S>& m) {
            if (m.size() > 0) out.push_back(&m);
        });
        return out;
    }

    std::vector<MatX<S>*> all_ptrs() {
        std::vector<MatX<S>*> out;
        for_each([&](const char*, MatX<S>& m) { out.push_back(&m); });
        return out;
    }

    static ModelParamsT zeros_like(const ModelParamsT& other) {
        ModelParamsT z = other;
        z.for_each([](const char*, MatX<S>& m) { m.setZero(); });
        return z;
    }

    void accumulate(const ModelParamsT& other, S scale) {
        auto mine = all_ptrs();
        auto theirs = const_cast<ModelParamsT&>(other).all_ptrs();
        for (std::size_t i = 0; i < mine.size(); ++i)
            if (mine[i]->size() > 0) *mine[i] += scale * *theirs[i];
    }
};

using ModelParams = ModelParamsT<double>;

// Glorot-uniform weights, zero biases. Same seed, same bits.
template <typename S>
ModelParamsT<S> init_params(const ModelConfigT<S>& cfg) {
    require(cfg.hidden_dim >= 1, "init_params: hidden_dim must be >= 1");
    require(cfg.input_dim >= 1, "init_params: input_dim must be >= 1");
    require(cfg.dropout_p >= S(0) && cfg.dropout_p < S(1),
            "init_params: dropout must be in [0, 1)");
    for (std::size_t i = 0; i < cfg.feature_columns.size(); ++i) {
        int c = cfg.feature_columns[i];
        require(c >= 0 && c < kNumVars, "init_params: feature column out of range");
        for (std::size_t j = i + 1; j < cfg.feature_columns.size(); ++j)
            require(cfg.feature_columns[j] != c, "init_params: duplicate feature column");
    }
    const int k = cfg.hidden_dim;
    const int d = cfg.input_dim;
    Rng rng(cfg.seed);
    auto glorot = [&rng](int rows, int cols) {
        double bound = std::sqrt(6.0 / (rows + cols));
        MatX<S> m(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) m(r, c) = S(rng.uniform(-bound, bound));
        return m;
    };
    ModelParamsT<S> p;
    p.W_r = glorot(k, d); p.U_r = glorot(k, k); p.b_r = MatX<S>::Zero(k, 1);
    p.W_z = glorot(k, d); p.U_z = glorot(k, k); p.b_z = MatX<S>::Zero(k, 1);
    p.W_x = glorot(k, d); p.U_h = glorot(k, k); p.b_h = MatX<S>::Zero(k, 1);
    if (cfg.attention == AttentionMode::self_attention) {
        p.W_q = glorot(k, k);
        p.W_k = glorot(k, k);
        p.W_v = glorot(k, k);
    } else if (cfg.attention == AttentionMode::global_attention) {
        p.W_att = glorot(1, k);
    }
    p.W_y = glorot(1, k);
    p.b_y = MatX<S>::Zero(1, 1);
    return p;
}

// One GRU update:
//   r = sigmoid(W_r x + U_r h + b_r)
//   z = sigmoid(W_z x + U_z h + b_z)
//   hbar = tanh(W_x x + r .* (U_h h) + b_h)
//   h' = (1 - z) .* h + z .* hbar
template <typename S>
MatX<S> gru_step(const ModelParamsT<S>& p, const MatX<S>& x, const MatX<S>& h_prev) {
    MatX<S> r = (p.W_r * x + p.U_r * h_prev + p.b_r).unaryExpr([](S v) { return sigmoid(v); });
    MatX<S> z = (p.W_z * x + p.U_z * h_prev + p.b_z).unaryExpr([](S v) { return sigmoid(v); });
    MatX<S> g = p.U_h * h_prev;
    MatX<S> hbar = (p.W_x * x + r.cwiseProduct(g) + p.b_h).array().tanh().matrix();
    return (MatX<S>::Ones(h_prev.rows(), 1) - z).cwiseProduct(h_prev) + z.cwiseProduct(hbar);
}

template <typename S>
struct AttendResult {
    MatX<S> context;  // k x 1
    VecX<S> weights;  // length t, sums to 1
};

// Attention over hiddens h_1..h_t.
//   self_attention: logit_i = <W_q h_query, W_k h_i>, context = sum alpha_i W_v h_i
//                   (query from the current step, or from step i in per_step mode)
//   global_attention: logit_i = W_att h_i, context = sum alpha_i h_i
//   last_hidden: context = h_t, one-hot weights
template <typename S>
AttendResult<S> attend(const std::vector<MatX<S>>& hiddens, const ModelParamsT<S>& p,
                       const ModelConfigT<S>& cfg) {
    require(!hiddens.empty(), "attend: need at least one hidden state");
    const Eigen::Index t = static_cast<Eigen::Index>(hiddens.size());
    const int k = static_cast<int>(hiddens[0].rows());
    AttendResult<S> out;
    if (cfg.attention == AttentionMode::last_hidden) {
        out.context = hiddens.back();
        out.weights = VecX<S>::Zero(t);
        out.weights[t - 1] = S(1);
        return out;
    }
    S scale = cfg.scale_logits ? S(1) / std::sqrt(S(k)) : S(1);
    VecX<S> logits(t);
    if (cfg.attention == AttentionMode::global_attention) {
        for (Eigen::Index i = 0; i < t; ++i) logits[i] = (p.W_att * hiddens[i])(0, 0) * scale;
    } else if (cfg.self_query == SelfQueryMode::current_step) {
        MatX<S> q = p.W_q * hiddens.back();
        for (Eigen::Index i = 0; i < t; ++i)
            logits[i] = (q.transpose() * (p.W_k * hiddens[i]))(0, 0) * scale;
    } else {
        for (Eigen::Index i = 0; i < t; ++i) {
            MatX<S> qi = p.W_q * hiddens[i];
            MatX<S> ki = p.W_k * hiddens[i];
            logits[i] = (qi.transpose() * ki)(0, 0) * scale;
        }
    }
    out.weights = masked_softmax(logits, t);
    out.context = MatX<S>::Zero(k, 1);
    for (Eigen::Index i = 0; i < t; ++i) {
        if (cfg.attention == AttentionMode::global_attention)
            out.context += out.weights[i] * hiddens[i];
        else
            out.context += out.weights[i] * (p.W_v * hiddens[i]);
    }
    return out;
}

template <typename S>
struct TrajectoryT {
    VecX<S> probs;         // length T
    MatX<S> attention;     // T x T, strictly zero above the diagonal
    VecX<S> hidden_final;  // k

    int hours() const { return static_cast<int>(probs.size()); }
};

using PredictionTrajectory = TrajectoryT<double>;

namespace detail {

inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;

// Everything the backward pass needs, recorded per step.
template <typename S>
struct SeqTape {
    std::vector<MatX<S>> x, r, z, g, hbar, h;
    std::vector<MatX<S>> query, key, val;  // per step as the mode requires
    std::vector<VecX<S>> alpha;            // row t has length t+1
    std::vector<MatX<S>> ctx, mask;        // mask empty when dropout off
    std::vector<S> prob;
};

}  // namespace detail

// Incremental per-hour engine. Feeding hours one at a time is the canonical
// execution; whole-sequence forward() drives this same path, so streaming and
// batch evaluation agree bit for bit.
template <typename S>
class StreamStateT {
public:
    StreamStateT(const ModelParamsT<S>& params, const ModelConfigT<S>& cfg)
        : params_(&params), cfg_(&cfg), h_prev_(MatX<S>::Zero(cfg.hidden_dim, 1)) {}

    struct StepOut {
        S prob;
        VecX<S> attention_row;  // length = steps seen so far
    };

    // x is a d x 1 column of the normalized input for one hour. In train mode
    // the caller provides the dropout mask for this step (k x 1), else null.
    StepOut step(const MatX<S>& x, const MatX<S>* dropout = nullptr,
                 detail::SeqTape<S>* tape = nullptr) {
        const ModelParamsT<S>& p = *params_;
        const ModelConfigT<S>& cfg = *cfg_;
        const int k = cfg.hidden_dim;

        MatX<S> r = (p.W_r * x + p.U_r * h_prev_ + p.b_r).unaryExpr([](S v) { return sigmoid(v); });
        MatX<S> z = (p.W_z * x + p.U_z * h_prev_ + p.b_z).unaryExpr([](S v) { return sigmoid(v); });
        MatX<S> g = p.U_h * h_prev_;
        MatX<S> hbar = (p.W_x * x + r.cwiseProduct(g) + p.b_h).array().tanh().matrix();
        MatX<S> h = (MatX<S>::Ones(k, 1) - z).cwiseProduct(h_prev_) + z.cwiseProduct(hbar);
        hs_.push_back(h);
        const Eigen::Index t = static_cast<Eigen::Index>(hs_.size());

        S scale = cfg.scale_logits ? S(1) / std::sqrt(S(k)) : S(1);
        VecX<S> alpha;
        MatX<S> ctx;
        MatX<S> query;
        if (cfg.attention == AttentionMode::last_hidden) {
            alpha = VecX<S>::Zero(t);
            alpha[t - 1] = S(1);
            ctx = h;
        } else if (cfg.attention == AttentionMode::global_attention) {
            logit_cache_.conservativeResize(t);
            logit_cache_[t - 1] = (p.W_att * h)(0, 0) * scale;
            alpha = masked_softmax(VecX<S>(logit_cache_), t);
            ctx = MatX<S>::Zero(k, 1);
            for (Eigen::Index i = 0; i < t; ++i) ctx += alpha[i] * hs_[i];
        } else {
            keys_.push_back(p.W_k * h);
            vals_.push_back(p.W_v * h);
            VecX<S> logits(t);
            if (cfg.self_query == SelfQueryMode::current_step) {
                query = p.W_q * h;
                for (Eigen::Index i = 0; i < t; ++i)
                    logits[i] = (query.transpose() * keys_[i])(0, 0) * scale;
            } else {
                queries_.push_back(p.W_q * h);
                logit_cache_.conservativeResize(t);
                logit_cache_[t - 1] = (queries_.back().transpose() * keys_.back())(0, 0) * scale;
                logits = logit_cache_;
            }
            alpha = masked_softmax(logits, t);
            ctx = MatX<S>::Zero(k, 1);
            for (Eigen::Index i = 0; i < t; ++i) ctx += alpha[i] * vals_[i];
        }

        MatX<S> dropped = dropout ? MatX<S>(ctx.cwiseProduct(*dropout)) : ctx;
        S logit = (p.W_y * dropped)(0, 0) + p.b_y(0, 0);
        S prob = sigmoid(logit);

        if (tape) {
            tape->x.push_back(x);
            tape->r.push_back(std::move(r));
            tape->z.push_back(std::move(z));
            tape->g.push_back(std::move(g));
            tape->hbar.push_back(std::move(hbar));
            tape->h.push_back(h);
            if (cfg.attention == AttentionMode::self_attention) {
                tape->key.push_back(keys_.back());
                tape->val.push_back(vals_.back());
                if (cfg.self_query == SelfQueryMode::current_step)
                    tape->query.push_back(query);
                else
                    tape->query.push_back(queries_.back());
            }
            tape->alpha.push_back(alpha);
            tape->ctx.push_back(ctx);
            tape->mask.push_back(dropout ? *dropout : MatX<S>());
            tape->prob.push_back(prob);
        }

        h_prev_ = std::move(h);
        return {prob, std::move(alpha)};
    }

    const MatX<S>& hidden() const { return h_prev_; }
    int steps() const { return static_cast<int>(hs_.size()); }

private:
    const ModelParamsT<S>* params_;
    const ModelConfigT<S>* cfg_;
    MatX<S> h_prev_;
    std::vector<MatX<S>> hs_, keys_, vals_, queries_;
    VecX<S> logit_cache_;
};

// Selects the configured columns from the hourly grid and applies the stored
// z-scoring. Stats default to identity when unset.
template <typename S>
MatX<S> model_input(const EncounterSeries& series, const ModelConfigT<S>& cfg) {
    auto columns = cfg.resolved_columns();
    const int T = series.hours();
    const int d = static_cast<int>(columns.size());
    bool normalized = cfg.feat_mean.size() == d && cfg.feat_std.size() == d;
    MatX<S> input(T, d);
    for (int t = 0; t < T; ++t) {
        for (int j = 0; j < d; ++j) {
            S v = S(series.grid(t, columns[static_cast<std::size_t>(j)]));
            if (normalized) v = (v - cfg.feat_mean[j]) / cfg.feat_std[j];
            input(t, j) = v;
        }
    }
    return input;
}

// Whole-sequence evaluation; `input` is T x d (already normalized). With
// train_mode a fresh dropout mask is drawn per hour from rng.
template <typename S>
TrajectoryT<S> forward(const ModelParamsT<S>& params, const ModelConfigT<S>& cfg,
                       const MatX<S>& input, bool train_mode = false, Rng* rng = nullptr,
                       detail::SeqTape<S>* tape = nullptr) {
    const int T = static_cast<int>(input.rows());
    require(T >= 1, "forward: empty sequence");
    require(static_cast<int>(input.cols()) == cfg.input_dim,
            "forward: input width does not match config");
    bool use_dropout = train_mode && cfg.dropout_p > S(0);
    require(!use_dropout || rng != nullptr, "forward: train mode needs an rng");

    TrajectoryT<S> traj;
    traj.probs.resize(T);
    traj.attention = MatX<S>::Zero(T, T);
    StreamStateT<S> stream(params, cfg);
    for (int t = 0; t < T; ++t) {
        MatX<S> x = input.row(t).transpose();
        MatX<S> mask;
        if (use_dropout) mask = dropout_mask<S>(cfg.hidden_dim, 1, cfg.dropout_p, *rng);
        auto out = stream.step(x, use_dropout ? &mask : nullptr, tape);
        traj.probs[t] = out.prob;
        traj.attention.row(t).head(t + 1) = out.attention_row.transpose();
    }
    traj.hidden_final = stream.hidden().col(0);
    return traj;
}

// Target-replicated cross-entropy: the stay label scored against every hour,
// averaged over the stay. Probabilities are clamped away from 0/1.
template <typename S>
S sequence_loss(const VecX<S>& probs, int label) {
    require(probs.size() >= 1, "sequence_loss: empty trajectory");
    S y = S(label);
    S total = S(0);
    for (Eigen::Index t = 0; t < probs.size(); ++t) {
        S p = std::clamp(probs[t], S(detail::kProbClampLo), S(detail::kProbClampHi));
        total += -(y * std::log(p) + (S(1) - y) * std::log(S(1) - p));
    }
    return total / S(probs.size());
}

namespace detail {

// Exact reverse-mode gradient for one sequence; grads must be zeros_like(params).
template <typename S>
void backward(const ModelParamsT<S>& p, const ModelConfigT<S>& cfg, const SeqTape<S>& tape,
              int label, ModelParamsT<S>& grads) {
    const int T = static_cast<int>(tape.h.size());
    const int k = cfg.hidden_dim;
    const S y = S(label);
    const S scale = cfg.scale_logits ? S(1) / std::sqrt(S(k)) : S(1);

    std::vector<MatX<S>> dh(static_cast<std::size_t>(T), MatX<S>::Zero(k, 1));
    std::vector<MatX<S>> dval, dkey, dquery;
    VecX<S> dlogit_cache;  // accumulated ds_i for the step-indexed logit modes
    if (cfg.attention == AttentionMode::self_attention) {
        dval.assign(static_cast<std::size_t>(T), MatX<S>::Zero(k, 1));
        dkey.assign(static_cast<std::size_t>(T), MatX<S>::Zero(k, 1));
        if (cfg.self_query == SelfQueryMode::per_step)
            dquery.assign(static_cast<std::size_t>(T), MatX<S>::Zero(k, 1));
    }
    if (cfg.attention == AttentionMode::global_attention ||
        (cfg.attention == AttentionMode::self_attention &&
         cfg.self_query == SelfQueryMode::per_step))
        dlogit_cache = VecX<S>::Zero(T);

    for (int t = 0; t < T; ++t) {
        S prob = tape.prob[static_cast<std::size_t>(t)];
        S dlogit = S(0);
        if (prob > S(kProbClampLo) && prob < S(kProbClampHi)) dlogit = (prob - y) / S(T);

        const MatX<S>& ctx = tape.ctx[static_cast<std::size_t>(t)];
        const MatX<S>& mask = tape.mask[static_cast<std::size_t>(t)];
        MatX<S> dropped = mask.size() > 0 ? MatX<S>(ctx.cwiseProduct(mask)) : ctx;
        grads.W_y += dlogit * dropped.transpose();
        grads.b_y(0, 0) += dlogit;
        MatX<S> ddropped = p.W_y.transpose() * dlogit;
        MatX<S> dctx = mask.size() > 0 ? MatX<S>(ddropped.cwiseProduct(mask)) : ddropped;

        const VecX<S>& alpha = tape.alpha[static_cast<std::size_t>(t)];
        if (cfg.attention == AttentionMode::last_hidden) {
            dh[static_cast<std::size_t>(t)] += dctx;
            continue;
        }

        // d loss / d alpha, then softmax backward to per-logit gradients
        VecX<S> dalpha(t + 1);
        for (int i = 0; i <= t; ++i) {
            const MatX<S>& value_i = cfg.attention == AttentionMode::global_attention
                                         ? tape.h[static_cast<std::size_t>(i)]
                                         : tape.val[static_cast<std::size_t>(i)];
            dalpha[i] = (dctx.transpose() * value_i)(0, 0);
            if (cfg.attention == AttentionMode::global_attention)
                dh[static_cast<std::size_t>(i)] += alpha[i] * dctx;
            else
                dval[static_cast<std::size_t>(i)] += alpha[i] * dctx;
        }
        S inner = S(0);
        for (int i = 0; i <= t; ++i) inner += alpha[i] * dalpha[i];
        VecX<S> dlogits(t + 1);
        for (int i = 0; i <= t; ++i) dlogits[i] = alpha[i] * (dalpha[i] - inner) * scale;

        if (cfg.attention == AttentionMode::global_attention ||
            (cfg.attention == AttentionMode::self_attention &&
             cfg.self_query == SelfQueryMode::per_step)) {
            dlogit_cache.head(t + 1) += dlogits;
        } else {
            // query comes from the current step
            const MatX<S>& q = tape.query[static_cast<std::size_t>(t)];
            MatX<S> dq = MatX<S>::Zero(k, 1);
            for (int i = 0; i <= t; ++i) {
                dq += dlogits[i] * tape.key[static_cast<std::size_t>(i)];
                dkey[static_cast<std::size_t>(i)] += dlogits[i] * q;
            }
            grads.W_q += dq * tape.h[static_cast<std::size_t>(t)].transpose();
            dh[static_cast<std::size_t>(t)] += p.W_q.transpose() * dq;
        }
    }

    if (cfg.attention == AttentionMode::global_attention) {
        for (int i = 0; i < T; ++i) {
            grads.W_att += dlogit_cache[i] * tape.h[static_cast<std::size_t>(i)].transpose();
            dh[static_cast<std::size_t>(i)] += p.W_att.transpose() * dlogit_cache[i];
        }
    } else if (cfg.attention == AttentionMode::self_attention) {
        if (cfg.self_query == SelfQueryMode::per_step) {
            for (int i = 0; i < T; ++i) {
                dquery[static_cast<std::size_t>(i)] +=
                    dlogit_cache[i] * tape.key[static_cast<std::size_t>(i)];
                dkey[static_cast<std::size_t>(i)] +=
                    dlogit_cache[i] * tape.query[static_cast<std::size_t>(i)];
            }
            for (int i = 0; i < T; ++i) {
                grads.W_q += dquery[static_cast<std::size_t>(i)] *
                             tape.h[static_cast<std::size_t>(i)].transpose();
                dh[static_cast<std::size_t>(i)] +=
                    p.W_q.transpose() * dquery[static_cast<std::size_t>(i)];
            }
        }
        for (int i = 0; i < T; ++i) {
            grads.W_k +=
                dkey[static_cast<std::size_t>(i)] * tape.h[static_cast<std::size_t>(i)].transpose();
            dh[static_cast<std::size_t>(i)] += p.W_k.transpose() * dkey[static_cast<std::size_t>(i)];
            grads.W_v +=
                dval[static_cast<std::size_t>(i)] * tape.h[static_cast<std::size_t>(i)].transpose();
            dh[static_cast<std::size_t>(i)] += p.W_v.transpose() * dval[static_cast<std::size_t>(i)];
        }
    }

    // backprop through time
    MatX<S> carry = MatX<S>::Zero(k, 1);
    for (int t = T - 1; t >= 0; --t) {
        auto ti = static_cast<std::size_t>(t);
        MatX<S> dht = dh[ti] + carry;
        MatX<S> h_prev = t > 0 ? tape.h[ti - 1] : MatX<S>(MatX<S>::Zero(k, 1));
        const MatX<S>& r = tape.r[ti];
        const MatX<S>& z = tape.z[ti];
        const MatX<S>& g = tape.g[ti];
        const MatX<S>& hbar = tape.hbar[ti];
        const MatX<S>& x = tape.x[ti];

        MatX<S> dhbar = dht.cwiseProduct(z);
        MatX<S> dz = dht.cwiseProduct(hbar - h_prev);
        MatX<S> dh_prev = dht.cwiseProduct(MatX<S>::Ones(k, 1) - z);

        MatX<S> da_h =
            dhbar.cwiseProduct((MatX<S>::Ones(k, 1) - hbar.cwiseProduct(hbar)));
        grads.W_x += da_h * x.transpose();
        grads.b_h += da_h;
        MatX<S> dr = da_h.cwiseProduct(g);
        MatX<S> dg = da_h.cwiseProduct(r);
        grads.U_h += dg * h_prev.transpose();
        dh_prev += p.U_h.transpose() * dg;

        MatX<S> da_r = dr.cwiseProduct(r.cwiseProduct(MatX<S>::Ones(k, 1) - r));
        grads.W_r += da_r * x.transpose();
        grads.U_r += da_r * h_prev.transpose();
        grads.b_r += da_r;
        dh_prev += p.U_r.transpose() * da_r;

        MatX<S> da_z = dz.cwiseProduct(z.cwiseProduct(MatX<S>::Ones(k, 1) - z));
        grads.W_z += da_z * x.transpose();
        grads.U_z += da_z * h_prev.transpose();
        grads.b_z += da_z;
        dh_prev += p.U_z.transpose() * da_z;

        carry = std::move(dh_prev);
    }
}

}  // namespace detail

template <typename S>
struct TrainingExample {
    MatX<S> input;  // T x d, normalized
    int label = 0;
};

// Mean gradient of the batch loss. Per-sequence dropout streams derive from
// the passed rng by position, so results do not depend on thread schedule.
template <typename S>
ModelParamsT<S> gradients(const ModelParamsT<S>& params, const ModelConfigT<S>& cfg,
                          const std::vector<TrainingExample<S>>& batch, bool train_mode,
                          const Rng& rng, std::type_identity_t<S>* mean_loss = nullptr,
                          unsigned threads = 1) {
    require(!batch.empty(), "gradients: empty batch");
    std::vector<ModelParamsT<S>> per_seq(batch.size());
    std::vector<S> losses(batch.size(), S(0));
    parallel_for(
        batch.size(),
        [&](std::size_t i) {
            detail::SeqTape<S> tape;
            Rng seq_rng = rng.derive(i);
            bool use_dropout = train_mode && cfg.dropout_p > S(0);
            forward(params, cfg, batch[i].input, use_dropout, use_dropout ? &seq_rng : nullptr,
                    &tape);
            VecX<S> probs(static_cast<Eigen::Index>(tape.prob.size()));
            for (std::size_t t = 0; t < tape.prob.size(); ++t)
                probs[static_cast<Eigen::Index>(t)] = tape.prob[t];
            losses[i] = sequence_loss(probs, batch[i].label);
            per_seq[i] = ModelParamsT<S>::zeros_like(params);
            detail::backward(params, cfg, tape, batch[i].label, per_seq[i]);
        },
        threads);
    ModelParamsT<S> total = ModelParamsT<S>::zeros_like(params);
    S scale = S(1) / S(batch.size());
    for (auto& g : per_seq) total.accumulate(g, scale);
    if (mean_loss) {
        S sum = S(0);
        for (S l : losses) sum += l;
        *mean_loss = sum / S(batch.size());
    }
    return total;
}

// Streaming predictor over one stay; dropout always off.
template <typename S>
class StreamPredictorT {
public:
    StreamPredictorT(const ModelParamsT<S>& params, const ModelConfigT<S>& cfg)
        : stream_(params, cfg) {}

    typename StreamStateT<S>::StepOut feed(const MatX<S>& x) { return stream_.step(x); }

    const MatX<S>& hidden() const { return stream_.hidden(); }

private:
    StreamStateT<S> stream_;
};

using StreamPredictor = StreamPredictorT<double>;

// Full-stay prediction with attention export; identical to feeding hours one
// at a time through StreamPredictorT.
template <typename S>
TrajectoryT<S> predict_trajectory(const ModelParamsT<S>& params, const ModelConfigT<S>& cfg,
                                  const EncounterSeries& series) {
    MatX<S> input = model_input(series, cfg);
    return forward(params, cfg, input);
}

}  // namespace deepsofa
