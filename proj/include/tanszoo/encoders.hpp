#pragma once

#include <atomic>
#include <cstring>
#include <numeric>
#include <string>
#include <vector>

#include "tanszoo/autodiff.hpp"
#include "tanszoo/rng.hpp"
#include "tanszoo/synth.hpp"

namespace tanszoo {

enum class EmbeddingMode : std::uint8_t { full = 0, topology_only = 1, functional_only = 2 };

inline const char* to_string(EmbeddingMode m) {
    switch (m) {
        case EmbeddingMode::topology_only: return "topology_only";
        case EmbeddingMode::functional_only: return "functional_only";
        default: return "full";
    }
}

struct EncoderConfig {
    std::size_t embed_dim = 128;
    std::size_t feature_dim = 0;   // query instance dimension, set from the zoo
    std::size_t functional_dim = 64;
    // enough probes that even a 2-logit network fills all functional_dim slots
    std::size_t noise_probes = 32;
    double noise_scale = 1.0;
    std::uint64_t noise_seed = 0x7a05;
    EmbeddingMode mode = EmbeddingMode::full;
    bool nonlinear_sigma = false;

    std::size_t model_input_dim() const { return TopologyDescriptor::kSlots + functional_dim; }
};

struct QueryEncoderParams {
    Parameter w;  // {feature_dim, embed_dim}
    Parameter b;  // {embed_dim}

    std::vector<Parameter*> parameters() { return {&w, &b}; }
};

struct ModelEncoderParams {
    Parameter hidden_w;  // used only with nonlinear_sigma
    Parameter hidden_b;
    Parameter w;  // {model_input_dim or hidden, embed_dim}
    Parameter b;  // {embed_dim}
    Tensor noise;  // fixed Gaussian probe batch {noise_probes, feature_dim}
    bool nonlinear = false;

    std::vector<Parameter*> parameters() {
        if (nonlinear) return {&hidden_w, &hidden_b, &w, &b};
        return {&w, &b};
    }
};

namespace encoders {

// Counts encode_query forward passes; retrieval promises exactly one per call.
inline std::atomic<std::uint64_t>& query_forward_count() {
    static std::atomic<std::uint64_t> c{0};
    return c;
}

inline Tensor gaussian_noise(std::uint64_t seed, std::size_t probes, std::size_t dim,
                             double scale = 1.0) {
    RngStream rng(mix_seed(seed, "noise"));
    Tensor t({probes, dim});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

inline QueryEncoderParams init_query_encoder(const EncoderConfig& cfg, RngStream& rng) {
    if (cfg.feature_dim == 0) throw validation_error("encoder config: feature_dim unset");
    QueryEncoderParams p;
    Tensor w({cfg.feature_dim, cfg.embed_dim});
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = scale * rng.normal();
    p.w = Parameter(std::move(w), "rho.w");
    p.b = Parameter(Tensor({cfg.embed_dim}), "rho.b");
    return p;
}

inline ModelEncoderParams init_model_encoder(const EncoderConfig& cfg, RngStream& rng) {
    if (cfg.feature_dim == 0) throw validation_error("encoder config: feature_dim unset");
    ModelEncoderParams p;
    p.nonlinear = cfg.nonlinear_sigma;
    const std::size_t in = cfg.model_input_dim();
    auto gaussian = [&rng](std::vector<std::size_t> shape, double scale) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
        return t;
    };
    if (p.nonlinear) {
        p.hidden_w = Parameter(gaussian({in, cfg.embed_dim}, 1.0 / std::sqrt(static_cast<double>(in))),
                               "sigma.hidden_w");
        p.hidden_b = Parameter(Tensor({cfg.embed_dim}), "sigma.hidden_b");
        p.w = Parameter(gaussian({cfg.embed_dim, cfg.embed_dim},
                                 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim))),
                        "sigma.w");
    } else {
        p.w = Parameter(gaussian({in, cfg.embed_dim}, 1.0 / std::sqrt(static_cast<double>(in))), "sigma.w");
    }
    p.b = Parameter(Tensor({cfg.embed_dim}), "sigma.b");
    p.noise = gaussian_noise(cfg.noise_seed, cfg.noise_probes, cfg.feature_dim, cfg.noise_scale);
    return p;
}

// Rows ordered by the byte encoding of each instance. Summation in this
// fixed order makes the mean bit-exact under any input permutation.
inline Tensor sorted_probe_matrix(const std::vector<std::vector<double>>& probe_set) {
    if (probe_set.empty()) throw validation_error("encode_query: empty probe set");
    const std::size_t dim = probe_set.front().size();
    for (const auto& row : probe_set) {
        if (row.size() != dim) throw validation_error("encode_query: ragged probe set");
    }
    std::vector<std::size_t> order(probe_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const int c = std::memcmp(probe_set[a].data(), probe_set[b].data(), dim * sizeof(double));
        if (c != 0) return c < 0;
        return a < b;
    });
    Tensor m({probe_set.size(), dim});
    for (std::size_t r = 0; r < order.size(); ++r) {
        std::memcpy(m.data() + r * dim, probe_set[order[r]].data(), dim * sizeof(double));
    }
    return m;
}

}  // namespace encoders

// q = l2_normalize(mean_i rho(X_i)); permutation invariant by sorted summation.
inline Tensor encode_query(const std::vector<std::vector<double>>& probe_set,
                           const QueryEncoderParams& params) {
    encoders::query_forward_count().fetch_add(1, std::memory_order_relaxed);
    Tensor probes = encoders::sorted_probe_matrix(probe_set);
    if (probes.cols() != params.w.value.rows()) {
        throw validation_error("encode_query: probe dimension does not match encoder");
    }
    return ops::l2_normalize_fwd(ops::mean_pool_fwd(ops::linear_fwd(probes, params.w.value, params.b.value)));
}

inline Tape::Ref encode_query_t(Tape& t, const Tensor& sorted_probes, Tape::Ref w, Tape::Ref b) {
    return t.l2_normalize(t.mean_pool(t.linear(t.constant(sorted_probes), w, b)));
}

// Network outputs over the fixed noise batch, concatenated probe-major, then
// zero-padded or truncated to functional_dim. With `generic_prefit` the
// fitted head is bypassed and the raw random-feature activations are used,
// the stand-in for a network not yet trained on the target task.
inline Tensor functional_embedding(const SynthNetwork& net, const Tensor& noise,
                                   std::size_t functional_dim, bool generic_prefit = false) {
    if (noise.cols() != net.input_dim) {
        throw validation_error("functional_embedding: noise dimension does not match network input");
    }
    Tensor v({functional_dim});
    std::size_t pos = 0;
    for (std::size_t p = 0; p < noise.rows() && pos < functional_dim; ++p) {
        const double* x = noise.data() + p * noise.cols();
        std::vector<double> out = generic_prefit ? net.features(x) : net.forward(x);
        for (std::size_t i = 0; i < out.size() && pos < functional_dim; ++i) v[pos++] = out[i];
    }
    return v;
}

namespace encoders {

// Normalized concatenation [v_t; v_f] with the ablation switch applied to
// whichever half is disabled. This is the constant input to sigma, shared by
// the taped and plain paths.
inline Tensor model_encoder_input(const TopologyDescriptor& topology, const Tensor& v_f,
                                  const EncoderConfig& cfg) {
    auto vt = topology.unit_scaled();
    Tensor cat({TopologyDescriptor::kSlots + cfg.functional_dim});
    if (cfg.mode != EmbeddingMode::functional_only) {
        for (std::size_t i = 0; i < vt.size(); ++i) cat[i] = vt[i];
    }
    if (cfg.mode != EmbeddingMode::topology_only) {
        if (v_f.size() != cfg.functional_dim) {
            throw validation_error("model input: functional embedding has wrong dimension");
        }
        for (std::size_t i = 0; i < cfg.functional_dim; ++i) cat[TopologyDescriptor::kSlots + i] = v_f[i];
    }
    return ops::l2_normalize_fwd(cat);
}

inline Tensor sigma_forward(const Tensor& input, const ModelEncoderParams& params) {
    if (params.nonlinear) {
        Tensor h = ops::relu_fwd(ops::linear_fwd(input, params.hidden_w.value, params.hidden_b.value));
        return ops::l2_normalize_fwd(ops::linear_fwd(h, params.w.value, params.b.value));
    }
    return ops::l2_normalize_fwd(ops::linear_fwd(input, params.w.value, params.b.value));
}

}  // namespace encoders

inline Tensor encode_model(const SynthNetwork& net, const TopologyDescriptor& topology,
                           const ModelEncoderParams& params, const EncoderConfig& cfg,
                           bool generic_prefit = false) {
    Tensor v_f = cfg.mode == EmbeddingMode::topology_only
                     ? Tensor({cfg.functional_dim})
                     : functional_embedding(net, params.noise, cfg.functional_dim, generic_prefit);
    return encoders::sigma_forward(encoders::model_encoder_input(topology, v_f, cfg), params);
}

// Ablation entry point: only the 45-slot descriptor feeds the projection.
inline Tensor encode_model_topology_only(const TopologyDescriptor& topology,
                                         const ModelEncoderParams& params, const EncoderConfig& cfg) {
    EncoderConfig ab = cfg;
    ab.mode = EmbeddingMode::topology_only;
    return encoders::sigma_forward(
        encoders::model_encoder_input(topology, Tensor({ab.functional_dim}), ab), params);
}

struct ModelEncoderRefs {
    Tape::Ref hidden_w, hidden_b, w, b;
    bool nonlinear = false;
};

inline Tape::Ref encode_model_t(Tape& t, const Tensor& model_input, const ModelEncoderRefs& refs) {
    Tape::Ref x = t.constant(model_input);
    if (refs.nonlinear) {
        Tape::Ref h = t.relu(t.linear(x, refs.hidden_w, refs.hidden_b));
        return t.l2_normalize(t.linear(h, refs.w, refs.b));
    }
    return t.l2_normalize(t.linear(x, refs.w, refs.b));
}

}  // namespace tanszoo
