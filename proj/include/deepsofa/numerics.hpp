#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "deepsofa/core.hpp"

namespace deepsofa {

template <typename S>
inline S sigmoid(S x) {
    if (x >= S(0)) {
        return S(1) / (S(1) + std::exp(-x));
    }
    S e = std::exp(x);
    return e / (S(1) + e);
}

// Softmax over the first valid_len entries; the rest of the output is exactly
// zero. Stabilized by max subtraction.
template <typename S>
VecX<S> masked_softmax(const VecX<S>& logits, Eigen::Index valid_len) {
    require(valid_len >= 1, "masked_softmax: valid_len must be >= 1");
    require(valid_len <= logits.size(), "masked_softmax: valid_len exceeds logit count");
    VecX<S> out = VecX<S>::Zero(logits.size());
    S max_logit = logits.head(valid_len).maxCoeff();
    S sum = S(0);
    for (Eigen::Index i = 0; i < valid_len; ++i) {
        S e = std::exp(logits[i] - max_logit);
        out[i] = e;
        sum += e;
    }
    out.head(valid_len) /= sum;
    return out;
}

// Inverted dropout: entries are 0 with probability p, else 1/(1-p), so
// inference needs no rescaling.
template <typename S>
MatX<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, S p, Rng& rng) {
    require(p >= S(0) && p < S(1), "dropout_mask: p must be in [0, 1)");
    MatX<S> mask(rows, cols);
    if (p == S(0)) {
        mask.setOnes();
        return mask;
    }
    S keep_scale = S(1) / (S(1) - p);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            mask(r, c) = rng.uniform01() < static_cast<double>(p) ? S(0) : keep_scale;
    return mask;
}

template <typename S>
struct AdamState {
    std::vector<MatX<S>> m;
    std::vector<MatX<S>> v;
    long step = 0;
    S learning_rate = S(1e-3);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S epsilon = S(1e-8);
    S l2_lambda = S(0);

    static AdamState like(const std::vector<MatX<S>*>& params) {
        AdamState st;
        st.m.reserve(params.size());
        st.v.reserve(params.size());
        for (const auto* p : params) {
            st.m.push_back(MatX<S>::Zero(p->rows(), p->cols()));
            st.v.push_back(MatX<S>::Zero(p->rows(), p->cols()));
        }
        return st;
    }
};

template <typename S>
std::vector<MatX<S>*> mat_ptrs(std::vector<MatX<S>>& mats) {
    std::vector<MatX<S>*> out;
    out.reserve(mats.size());
    for (auto& m : mats) out.push_back(&m);
    return out;
}

// Bias-corrected Adam update. The L2 penalty enters as lambda * theta added to
// the gradient before the moment updates.
template <typename S>
void adam_step(const std::vector<MatX<S>*>& params, const std::vector<MatX<S>*>& grads,
               AdamState<S>& st) {
    require(params.size() == grads.size() && params.size() == st.m.size(),
            "adam_step: parameter/gradient/state count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require(params[i]->rows() == grads[i]->rows() && params[i]->cols() == grads[i]->cols(),
                "adam_step: shape mismatch");
    }
    st.step += 1;
    S bc1 = S(1) - std::pow(st.beta1, S(st.step));
    S bc2 = S(1) - std::pow(st.beta2, S(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        MatX<S>& theta = *params[i];
        MatX<S> g = *grads[i] + st.l2_lambda * theta;
        st.m[i] = st.beta1 * st.m[i] + (S(1) - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (S(1) - st.beta2) * g.cwiseProduct(g);
        MatX<S> m_hat = st.m[i] / bc1;
        MatX<S> v_hat = st.v[i] / bc2;
        theta.array() -= st.learning_rate * m_hat.array() / (v_hat.array().sqrt() + st.epsilon);
    }
}

// Central-difference gradient oracle: (f(theta+h) - f(theta-h)) / 2h per entry.
// loss_fn must be deterministic (dropout off, fixed data).
template <typename S, typename LossFn>
std::vector<MatX<S>> finite_diff_grad(LossFn&& loss_fn, const std::vector<MatX<S>*>& params,
                                      S h) {
    std::vector<MatX<S>> grads;
    grads.reserve(params.size());
    for (auto* p : params) grads.push_back(MatX<S>::Zero(p->rows(), p->cols()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        MatX<S>& theta = *params[i];
        for (Eigen::Index r = 0; r < theta.rows(); ++r) {
            for (Eigen::Index c = 0; c < theta.cols(); ++c) {
                S saved = theta(r, c);
                theta(r, c) = saved + h;
                S up = loss_fn();
                theta(r, c) = saved - h;
                S down = loss_fn();
                theta(r, c) = saved;
                grads[i](r, c) = (up - down) / (S(2) * h);
            }
        }
    }
    return grads;
}

}  // namespace deepsofa
