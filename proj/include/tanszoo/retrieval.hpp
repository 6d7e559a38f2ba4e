#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tanszoo/encoders.hpp"
#include "tanszoo/predictor.hpp"
#include "tanszoo/zoo.hpp"

namespace tanszoo {

// Retrieval-time artifact: unit-norm f32 model embeddings in lexicographic
// id order, the trained parameters needed to embed queries and rerank, and
// per-model resource columns for constraint filtering.
struct EmbeddingIndex {
    std::vector<std::string> model_ids;
    std::vector<float> rows;  // n_models x dim, row-major
    std::size_t dim = 0;
    std::vector<std::uint64_t> param_counts;
    std::vector<std::uint64_t> mac_counts;  // exposed as "flops"
    std::vector<double> latencies;
    QueryEncoderParams theta;
    ModelEncoderParams phi;
    PredictorParams psi;
    EncoderConfig enc;
    std::uint64_t train_fingerprint = 0;
    double norm_eps = kNormEps;
    double adam_eps = kAdamEps;

    std::size_t size() const { return model_ids.size(); }

    const float* row(std::size_t i) const { return rows.data() + i * dim; }

    Tensor row_tensor(std::size_t i) const {
        Tensor t({dim});
        const float* r = row(i);
        for (std::size_t j = 0; j < dim; ++j) t[j] = static_cast<double>(r[j]);
        return t;
    }
};

struct RankedModel {
    std::string model_id;
    double similarity = 0.0;
    std::optional<double> predicted_accuracy;
    bool meets_constraints = true;
};

struct RetrievalResult {
    std::vector<RankedModel> ranked;
    bool constraints_given = false;
    bool none_satisfied = false;  // constraints filtered out every model
};

struct RetrievalMetrics {
    double r_at_1 = 0.0;
    double r_at_5 = 0.0;
    double r_at_10 = 0.0;
    double mean_rank = 0.0;
    double median_rank = 0.0;
    std::size_t n_queries = 0;
};

// One embedding per zoo network, computed with the given trained parameters.
inline EmbeddingIndex build_index(const ModelZoo& zoo, const QueryEncoderParams& theta,
                                  const ModelEncoderParams& phi, const PredictorParams& psi,
                                  const EncoderConfig& enc, std::uint64_t fingerprint,
                                  std::size_t jobs = 1) {
    EmbeddingIndex idx;
    idx.dim = enc.embed_dim;
    idx.theta = theta;
    idx.phi = phi;
    idx.psi = psi;
    idx.enc = enc;
    idx.train_fingerprint = fingerprint;
    for (const auto& [id, net] : zoo.networks) idx.model_ids.push_back(id);  // map order == lexicographic

    const std::size_t n = idx.model_ids.size();
    idx.rows.assign(n * idx.dim, 0.0f);
    idx.param_counts.resize(n);
    idx.mac_counts.resize(n);
    idx.latencies.resize(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        const NetworkRecord& rec = zoo.network(idx.model_ids[i]);
        SynthNetwork net = SynthNetwork::from_record(rec);
        Tensor e = encode_model(net, rec.topology, phi, enc);
        for (std::size_t j = 0; j < idx.dim; ++j) idx.rows[i * idx.dim + j] = static_cast<float>(e[j]);
        idx.param_counts[i] = rec.param_count;
        idx.mac_counts[i] = net.mac_count();
        idx.latencies[i] = rec.latency;
    });
    return idx;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "index format assumes little-endian host");

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw io_error("index file truncated");
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
    auto len = get<std::uint32_t>(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw io_error("index file truncated");
    return s;
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
}

inline Tensor get_tensor(std::istream& is) {
    auto rank = get<std::uint32_t>(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
    if (!is) throw io_error("index file truncated");
    return t;
}

inline void put_param(std::ostream& os, const Parameter& p) {
    put_string(os, p.name);
    put_tensor(os, p.value);
}

inline Parameter get_param(std::istream& is) {
    std::string name = get_string(is);
    return Parameter(get_tensor(is), name);
}

}  // namespace detail

// Binary little-endian layout: magic "TANS", version, counts and dims, the
// encoder/optimizer constants, id table (length-prefixed UTF-8), row-major
// f32 embeddings, parameter blobs, then per-model resource columns.
inline void save_index(const EmbeddingIndex& idx, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open index for writing: " + path.string());
    os.write("TANS", 4);
    detail::put<std::uint32_t>(os, 1);  // version
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(idx.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(idx.dim));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(idx.enc.feature_dim));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(idx.enc.functional_dim));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(idx.enc.noise_probes));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(idx.enc.mode));
    detail::put<std::uint8_t>(os, idx.enc.nonlinear_sigma ? 1 : 0);
    detail::put<std::uint16_t>(os, 0);  // reserved
    detail::put<std::uint64_t>(os, idx.enc.noise_seed);
    detail::put<double>(os, idx.enc.noise_scale);
    detail::put<std::uint64_t>(os, idx.train_fingerprint);
    detail::put<double>(os, idx.norm_eps);
    detail::put<double>(os, idx.adam_eps);
    detail::put<double>(os, idx.psi.dropout_p);

    for (const auto& id : idx.model_ids) detail::put_string(os, id);
    os.write(reinterpret_cast<const char*>(idx.rows.data()),
             static_cast<std::streamsize>(idx.rows.size() * sizeof(float)));

    detail::put_param(os, idx.theta.w);
    detail::put_param(os, idx.theta.b);
    detail::put<std::uint8_t>(os, idx.phi.nonlinear ? 1 : 0);
    if (idx.phi.nonlinear) {
        detail::put_param(os, idx.phi.hidden_w);
        detail::put_param(os, idx.phi.hidden_b);
    }
    detail::put_param(os, idx.phi.w);
    detail::put_param(os, idx.phi.b);
    detail::put_param(os, idx.psi.fc_w);
    detail::put_param(os, idx.psi.fc_b);
    detail::put_param(os, idx.psi.head_w);
    detail::put_param(os, idx.psi.head_b);

    for (std::size_t i = 0; i < idx.size(); ++i) {
        detail::put<std::uint64_t>(os, idx.param_counts[i]);
        detail::put<std::uint64_t>(os, idx.mac_counts[i]);
        detail::put<double>(os, idx.latencies[i]);
    }
    if (!os) throw io_error("failed writing index: " + path.string());
}

inline EmbeddingIndex load_index(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open index: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "TANS") throw io_error("not a TANS index: " + path.string());
    if (detail::get<std::uint32_t>(is) != 1) throw io_error("unsupported index version");

    EmbeddingIndex idx;
    const auto n = detail::get<std::uint32_t>(is);
    idx.dim = detail::get<std::uint32_t>(is);
    idx.enc.embed_dim = idx.dim;
    idx.enc.feature_dim = detail::get<std::uint32_t>(is);
    idx.enc.functional_dim = detail::get<std::uint32_t>(is);
    idx.enc.noise_probes = detail::get<std::uint32_t>(is);
    idx.enc.mode = static_cast<EmbeddingMode>(detail::get<std::uint8_t>(is));
    idx.enc.nonlinear_sigma = detail::get<std::uint8_t>(is) != 0;
    detail::get<std::uint16_t>(is);
    idx.enc.noise_seed = detail::get<std::uint64_t>(is);
    idx.enc.noise_scale = detail::get<double>(is);
    idx.train_fingerprint = detail::get<std::uint64_t>(is);
    idx.norm_eps = detail::get<double>(is);
    idx.adam_eps = detail::get<double>(is);
    const double dropout_p = detail::get<double>(is);

    idx.model_ids.resize(n);
    for (auto& id : idx.model_ids) id = detail::get_string(is);
    idx.rows.resize(static_cast<std::size_t>(n) * idx.dim);
    is.read(reinterpret_cast<char*>(idx.rows.data()),
            static_cast<std::streamsize>(idx.rows.size() * sizeof(float)));
    if (!is) throw io_error("index file truncated");

    idx.theta.w = detail::get_param(is);
    idx.theta.b = detail::get_param(is);
    idx.phi.nonlinear = detail::get<std::uint8_t>(is) != 0;
    if (idx.phi.nonlinear) {
        idx.phi.hidden_w = detail::get_param(is);
        idx.phi.hidden_b = detail::get_param(is);
    }
    idx.phi.w = detail::get_param(is);
    idx.phi.b = detail::get_param(is);
    idx.phi.noise = encoders::gaussian_noise(idx.enc.noise_seed, idx.enc.noise_probes,
                                             idx.enc.feature_dim, idx.enc.noise_scale);
    idx.psi.fc_w = detail::get_param(is);
    idx.psi.fc_b = detail::get_param(is);
    idx.psi.head_w = detail::get_param(is);
    idx.psi.head_b = detail::get_param(is);
    idx.psi.dropout_p = dropout_p;

    idx.param_counts.resize(n);
    idx.mac_counts.resize(n);
    idx.latencies.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx.param_counts[i] = detail::get<std::uint64_t>(is);
        idx.mac_counts[i] = detail::get<std::uint64_t>(is);
        idx.latencies[i] = detail::get<double>(is);
    }
    return idx;
}

namespace retrieval {

inline bool satisfies(const EmbeddingIndex& idx, std::size_t i, const Constraints& c) {
    if (c.max_params && idx.param_counts[i] > *c.max_params) return false;
    if (c.max_flops && idx.mac_counts[i] > *c.max_flops) return false;
    if (c.max_latency && idx.latencies[i] > *c.max_latency) return false;
    return true;
}

}  // namespace retrieval

// Encode the probe set once, score every model by cosine in lexicographic id
// order, drop constraint violators before the top-k cut, then optionally
// rerank the top min(k, 10) by predicted accuracy.
inline RetrievalResult retrieve(const EmbeddingIndex& idx,
                                const std::vector<std::vector<double>>& probe_set, std::size_t k,
                                const Constraints& constraints = {}, bool rerank = false,
                                std::size_t jobs = 1) {
    if (k < 1) throw validation_error("retrieve: k must be >= 1");
    constraints.validate();
    Tensor q = encode_query(probe_set, idx.theta);

    const std::size_t n = idx.size();
    std::vector<double> sims(n);
    parallel_for(n, jobs, [&](std::size_t i) {
        const float* r = idx.row(i);
        double dot = 0.0, nr = 0.0;
        for (std::size_t j = 0; j < idx.dim; ++j) {
            dot += q[j] * static_cast<double>(r[j]);
            nr += static_cast<double>(r[j]) * static_cast<double>(r[j]);
        }
        sims[i] = nr == 0.0 ? 0.0 : dot / std::sqrt(nr);  // q is unit norm
    });

    std::vector<std::size_t> survivors;
    survivors.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!constraints.any() || retrieval::satisfies(idx, i, constraints)) survivors.push_back(i);
    }

    RetrievalResult res;
    res.constraints_given = constraints.any();
    if (survivors.empty()) {
        res.none_satisfied = res.constraints_given;
        return res;
    }

    std::sort(survivors.begin(), survivors.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return a < b;  // id order == index order
    });
    if (survivors.size() > k) survivors.resize(k);

    if (rerank) {
        std::vector<RerankCandidate> cands;
        cands.reserve(survivors.size());
        for (std::size_t i : survivors) {
            cands.push_back({idx.model_ids[i], sims[i], idx.row_tensor(i), std::nullopt});
        }
        rerank_topk(cands, q, idx.psi, std::min<std::size_t>(k, 10));
        for (const auto& c : cands) {
            res.ranked.push_back({c.id, c.similarity, c.predicted_accuracy, true});
        }
    } else {
        for (std::size_t i : survivors) {
            res.ranked.push_back({idx.model_ids[i], sims[i], std::nullopt, true});
        }
    }
    return res;
}

// A retriever is anything that maps a dataset to a full ranking; the metrics
// harness is shared by the index-backed retriever and the baselines.
using RetrieverFn = std::function<RetrievalResult(const DatasetRecord&, std::size_t k)>;

enum class ProbePolicy { heldout_validation };

inline RetrievalMetrics evaluate_ranking(const ModelZoo& zoo, const RetrieverFn& fn,
                                         std::size_t n_models) {
    std::vector<double> ranks;
    for (const auto& [did, dataset] : zoo.datasets) {
        std::vector<std::string> own = zoo.networks_of(did);
        if (own.empty()) continue;
        std::set<std::string> own_set(own.begin(), own.end());
        RetrievalResult r = fn(dataset, n_models);
        double rank = static_cast<double>(n_models);
        for (std::size_t pos = 0; pos < r.ranked.size(); ++pos) {
            if (own_set.count(r.ranked[pos].model_id)) {
                rank = static_cast<double>(pos + 1);
                break;
            }
        }
        ranks.push_back(rank);
    }
    if (ranks.empty()) throw validation_error("evaluate: no queries");

    RetrievalMetrics m;
    m.n_queries = ranks.size();
    for (double r : ranks) {
        m.r_at_1 += r <= 1.0;
        m.r_at_5 += r <= 5.0;
        m.r_at_10 += r <= 10.0;
        m.mean_rank += r;
    }
    const double n = static_cast<double>(ranks.size());
    m.r_at_1 /= n;
    m.r_at_5 /= n;
    m.r_at_10 /= n;
    m.mean_rank /= n;
    std::sort(ranks.begin(), ranks.end());
    m.median_rank = ranks.size() % 2 == 1 ? ranks[ranks.size() / 2]
                                          : 0.5 * (ranks[ranks.size() / 2 - 1] + ranks[ranks.size() / 2]);
    return m;
}

// Rank of the first model pretrained on the query dataset, aggregated over
// every dataset, using the held-out probe instances as queries.
inline RetrievalMetrics evaluate_retrieval(const EmbeddingIndex& idx, const ModelZoo& zoo,
                                           ProbePolicy policy = ProbePolicy::heldout_validation) {
    (void)policy;
    for (const auto& [did, dataset] : zoo.datasets) {
        if (!zoo.networks_of(did).empty() && dataset.probe_idx.empty()) {
            throw validation_error("dataset " + did + " has no held-out probe instances");
        }
    }
    return evaluate_ranking(
        zoo,
        [&](const DatasetRecord& d, std::size_t k) { return retrieve(idx, d.probe_vectors(), k); },
        idx.size());
}

}  // namespace tanszoo
