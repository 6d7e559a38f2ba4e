#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "tanszoo/autodiff.hpp"
#include "tanszoo/rng.hpp"

namespace tanszoo {

// Accuracy surrogate S([q; m]): one hidden rectified layer, sigmoid head.
struct PredictorParams {
    Parameter fc_w;    // {2*embed_dim, hidden}
    Parameter fc_b;    // {hidden}
    Parameter head_w;  // {hidden, 1}
    Parameter head_b;  // {1}
    double dropout_p = 0.5;  // construction-mode MC dropout

    std::size_t embed_dim() const { return fc_w.value.rows() / 2; }
    std::size_t hidden_dim() const { return fc_w.value.cols(); }

    std::vector<Parameter*> parameters() { return {&fc_w, &fc_b, &head_w, &head_b}; }
};

enum class PredictMode { deterministic, mc_dropout };

namespace predictor {

inline PredictorParams init_predictor(std::size_t embed_dim, std::size_t hidden, RngStream& rng,
                                      double dropout_p = 0.5) {
    PredictorParams p;
    const std::size_t in = 2 * embed_dim;
    Tensor fc({in, hidden});
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < fc.size(); ++i) fc[i] = s1 * rng.normal();
    Tensor head({hidden, 1});
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t i = 0; i < head.size(); ++i) head[i] = s2 * rng.normal();
    p.fc_w = Parameter(std::move(fc), "psi.fc_w");
    p.fc_b = Parameter(Tensor({hidden}), "psi.fc_b");
    p.head_w = Parameter(std::move(head), "psi.head_w");
    p.head_b = Parameter(Tensor({1}), "psi.head_b");
    p.dropout_p = dropout_p;
    return p;
}

// Inverted-scaling dropout mask over the hidden layer.
inline Tensor dropout_mask(std::size_t hidden, double p, RngStream& rng) {
    Tensor mask({hidden});
    const double keep = 1.0 - p;
    for (std::size_t i = 0; i < hidden; ++i) mask[i] = rng.uniform() < p ? 0.0 : 1.0 / keep;
    return mask;
}

}  // namespace predictor

inline double predict(const Tensor& q, const Tensor& m, const PredictorParams& params,
                      PredictMode mode = PredictMode::deterministic, RngStream* rng = nullptr) {
    if (q.size() != params.embed_dim() || m.size() != params.embed_dim()) {
        throw validation_error("predict: embedding dimension mismatch");
    }
    Tensor in = ops::concat_fwd(q, m);
    Tensor h = ops::relu_fwd(ops::linear_fwd(in, params.fc_w.value, params.fc_b.value));
    if (mode == PredictMode::mc_dropout) {
        if (!rng) throw validation_error("predict: dropout mode requires a generator");
        Tensor mask = predictor::dropout_mask(params.hidden_dim(), params.dropout_p, *rng);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] *= mask[i];
    }
    Tensor out = ops::sigmoid_fwd(ops::linear_fwd(h, params.head_w.value, params.head_b.value));
    return out[0];
}

inline double surrogate_loss(double pred, double s_acc) {
    const double d = pred - s_acc;
    return d * d;
}

struct PredictorRefs {
    Tape::Ref fc_w, fc_b, head_w, head_b;
};

inline PredictorRefs bind_predictor(Tape& t, PredictorParams& p) {
    return {t.leaf(p.fc_w), t.leaf(p.fc_b), t.leaf(p.head_w), t.leaf(p.head_b)};
}

// Taped forward; an optional fixed mask turns on (seeded) dropout training.
inline Tape::Ref predict_t(Tape& t, Tape::Ref q, Tape::Ref m, const PredictorRefs& refs,
                           const Tensor* mask = nullptr) {
    Tape::Ref h = t.relu(t.linear(t.concat(q, m), refs.fc_w, refs.fc_b));
    if (mask) h = t.mul_mask(h, *mask);
    return t.sigmoid(t.linear(h, refs.head_w, refs.head_b));
}

inline Tape::Ref surrogate_loss_t(Tape& t, Tape::Ref pred, double s_acc) {
    return t.square(t.add_const(pred, -s_acc));
}

struct RerankCandidate {
    std::string id;
    double similarity = 0.0;
    Tensor embedding;  // model embedding, same dim as q
    std::optional<double> predicted_accuracy;
};

// Reorders the first min(K, size) candidates by descending deterministic
// prediction; ties keep the original similarity order; the tail is untouched.
inline void rerank_topk(std::vector<RerankCandidate>& candidates, const Tensor& q,
                        const PredictorParams& params, std::size_t k) {
    if (k < 1) throw validation_error("rerank_topk: K must be >= 1");
    const std::size_t top = std::min(k, candidates.size());
    std::vector<std::size_t> order(top);
    for (std::size_t i = 0; i < top; ++i) {
        candidates[i].predicted_accuracy = predict(q, candidates[i].embedding, params);
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return *candidates[a].predicted_accuracy > *candidates[b].predicted_accuracy;
    });
    std::vector<RerankCandidate> reordered;
    reordered.reserve(top);
    for (std::size_t i : order) reordered.push_back(std::move(candidates[i]));
    for (std::size_t i = 0; i < top; ++i) candidates[i] = std::move(reordered[i]);
}

}  // namespace tanszoo
