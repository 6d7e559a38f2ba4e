#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "tanszoo/common.hpp"
#include "tanszoo/rng.hpp"
#include "tanszoo/tensor.hpp"
#include "tanszoo/zoo.hpp"

namespace tanszoo {

struct SynthConfig {
    std::size_t n_datasets = 20;
    int classes_min = 2;
    int classes_max = 5;
    std::size_t instances_per_class_min = 50;
    std::size_t instances_per_class_max = 70;
    std::size_t feature_dim = 16;
    std::size_t networks_per_dataset = 10;
    std::uint64_t rng_seed = 1;
    double latency_per_mac = 2e-9;  // seconds per multiply-accumulate, simulated
    double latency_base = 1e-4;     // fixed dispatch overhead, simulated
    // per-dataset class-mean scale, drawn uniformly from this range; the low
    // end produces genuinely hard tasks so zoo accuracies spread out
    double separation_min = 0.4;
    double separation_max = 3.0;
    // every dataset sits at its own global offset, independent of class
    // separation, the way real domains differ in mean feature statistics
    double dataset_offset_scale = 1.0;
    double ridge_lambda = 1e-3;
    std::size_t probes_per_class = 10;
    double train_fraction = 0.8;

    void validate() const {
        if (n_datasets < 1 || networks_per_dataset < 1 || feature_dim < 2 || classes_min < 2 ||
            classes_max < classes_min || instances_per_class_min < 1 ||
            instances_per_class_max < instances_per_class_min || separation_max < separation_min ||
            separation_min < 0.0) {
            throw validation_error("synth config: counts out of range");
        }
    }
};

namespace synth {

inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline std::string dataset_id(std::size_t k) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "d%03zu", k);
    return buf;
}

inline std::string network_id(const std::string& dataset, std::size_t j) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "-n%02zu", j);
    return dataset + buf;
}

// Gaussian class clusters sharing a per-dataset covariance transform; class
// means are scaled by cluster_separation, so separation 0 leaves the labels
// carrying no signal at all. Features are rounded to f32 so in-memory and
// reloaded zoos behave identically.
inline DatasetRecord gen_dataset(const SynthConfig& cfg, std::size_t k) {
    cfg.validate();
    RngStream rng(mix_seed(cfg.rng_seed, "dataset", k));

    DatasetRecord d;
    d.id = dataset_id(k);
    d.class_count = cfg.classes_min + static_cast<int>(rng.below(cfg.classes_max - cfg.classes_min + 1));
    d.feature_dim = cfg.feature_dim;

    const std::size_t per_class =
        cfg.instances_per_class_min +
        rng.below(cfg.instances_per_class_max - cfg.instances_per_class_min + 1);
    const std::size_t f = cfg.feature_dim;

    const double separation = rng.uniform(cfg.separation_min, cfg.separation_max);
    std::vector<double> offset(f);
    for (auto& v : offset) v = cfg.dataset_offset_scale * rng.normal();
    std::vector<double> means(static_cast<std::size_t>(d.class_count) * f);
    for (std::size_t c = 0; c < static_cast<std::size_t>(d.class_count); ++c) {
        for (std::size_t r = 0; r < f; ++r) means[c * f + r] = offset[r] + separation * rng.normal();
    }

    // shared mixing matrix: identity plus a mild random rotation/shear
    std::vector<double> mix(f * f, 0.0);
    for (std::size_t i = 0; i < f; ++i) mix[i * f + i] = 1.0;
    for (std::size_t i = 0; i < f * f; ++i) mix[i] += 0.4 * rng.normal() / std::sqrt(static_cast<double>(f));

    std::vector<double> z(f);
    for (int c = 0; c < d.class_count; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            for (auto& v : z) v = rng.normal();
            for (std::size_t r = 0; r < f; ++r) {
                double x = means[static_cast<std::size_t>(c) * f + r];
                for (std::size_t ccol = 0; ccol < f; ++ccol) x += mix[r * f + ccol] * z[ccol];
                d.features.push_back(round_f32(x));
            }
            d.labels.push_back(c);
        }
    }

    // stratified 80/20 split; probes are the first validation instances of
    // each class, held out of every training batch downstream
    const std::size_t train_per_class =
        static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(per_class)));
    for (int c = 0; c < d.class_count; ++c) {
        const std::size_t base = static_cast<std::size_t>(c) * per_class;
        for (std::size_t i = 0; i < per_class; ++i) {
            if (i < train_per_class) {
                d.train_idx.push_back(base + i);
            } else {
                d.val_idx.push_back(base + i);
                if (i - train_per_class < cfg.probes_per_class) d.probe_idx.push_back(base + i);
            }
        }
    }
    return d;
}

// Hidden-layer plan derived from the 45-slot descriptor: layer count is
// (sum of depths - 5) / 4, clamped to at least 1, and layer j's width is
// 4*kernel_j + 2*expansion_j over the first active layer slots.
inline std::vector<std::size_t> hidden_widths(const TopologyDescriptor& topo) {
    const int depth_sum = topo.depth_sum();
    const std::size_t layers = static_cast<std::size_t>(std::max(1, (depth_sum - 5) / 4));
    auto active = topo.active_layers();
    std::vector<std::size_t> widths;
    widths.reserve(layers);
    for (std::size_t j = 0; j < layers; ++j) {
        widths.push_back(static_cast<std::size_t>(4 * active[j].first + 2 * active[j].second));
    }
    return widths;
}

}  // namespace synth

// Tiny tanh MLP with a closed-form output head. Layer weights are f32-rounded
// at construction so serialized and in-memory networks are interchangeable.
struct SynthNetwork {
    TopologyDescriptor topology;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<Tensor> hidden_w;  // per layer {in, out}
    std::vector<Tensor> hidden_b;  // per layer {out}
    Tensor head_w;                 // {last, out}
    Tensor head_b;                 // {out}

    std::vector<double> features(const double* x) const {
        std::vector<double> cur(x, x + input_dim);
        std::vector<double> next;
        for (std::size_t l = 0; l < hidden_w.size(); ++l) {
            const Tensor& w = hidden_w[l];
            const Tensor& b = hidden_b[l];
            next.assign(w.cols(), 0.0);
            for (std::size_t j = 0; j < w.cols(); ++j) next[j] = b[j];
            for (std::size_t i = 0; i < w.rows(); ++i) {
                const double xi = cur[i];
                for (std::size_t j = 0; j < w.cols(); ++j) next[j] += xi * w.at(i, j);
            }
            for (auto& v : next) v = std::tanh(v);
            cur.swap(next);
        }
        return cur;
    }

    std::vector<double> forward(const double* x) const {
        std::vector<double> h = features(x);
        std::vector<double> out(output_dim);
        for (std::size_t j = 0; j < output_dim; ++j) out[j] = head_b[j];
        for (std::size_t i = 0; i < head_w.rows(); ++i) {
            const double hi = h[i];
            for (std::size_t j = 0; j < output_dim; ++j) out[j] += hi * head_w.at(i, j);
        }
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < hidden_w.size(); ++l) n += hidden_w[l].size() + hidden_b[l].size();
        return n + head_w.size() + head_b.size();
    }

    std::size_t mac_count() const {
        std::size_t n = 0;
        for (const auto& w : hidden_w) n += w.rows() * w.cols();
        return n + head_w.rows() * head_w.cols();
    }

    std::vector<double> flat_parameters() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        auto append = [&out](const Tensor& t) { out.insert(out.end(), t.data(), t.data() + t.size()); };
        for (std::size_t l = 0; l < hidden_w.size(); ++l) {
            append(hidden_w[l]);
            append(hidden_b[l]);
        }
        append(head_w);
        append(head_b);
        return out;
    }

    NetworkRecord to_record(std::string id, std::string source_dataset_id, double latency) const {
        NetworkRecord r;
        r.id = std::move(id);
        r.topology = topology;
        r.input_dim = input_dim;
        r.output_dim = output_dim;
        r.parameters = flat_parameters();
        r.param_count = r.parameters.size();
        r.latency = latency;
        r.source_dataset_id = std::move(source_dataset_id);
        return r;
    }

    static SynthNetwork from_record(const NetworkRecord& rec) {
        SynthNetwork net;
        net.topology = rec.topology;
        net.input_dim = rec.input_dim;
        net.output_dim = rec.output_dim;
        const auto widths = synth::hidden_widths(rec.topology);
        std::size_t pos = 0;
        auto take = [&](std::size_t r, std::size_t c) {
            if (pos + r * c > rec.parameters.size()) {
                throw validation_error("network " + rec.id + ": parameter array too short");
            }
            Tensor t({r, c}, std::vector<double>(rec.parameters.begin() + pos,
                                                 rec.parameters.begin() + pos + r * c));
            pos += r * c;
            return t;
        };
        std::size_t in = rec.input_dim;
        for (std::size_t w : widths) {
            net.hidden_w.push_back(take(in, w));
            Tensor b = take(1, w);
            net.hidden_b.push_back(Tensor({w}, std::vector<double>(b.data(), b.data() + w)));
            in = w;
        }
        net.head_w = take(in, rec.output_dim);
        Tensor hb = take(1, rec.output_dim);
        net.head_b = Tensor({rec.output_dim}, std::vector<double>(hb.data(), hb.data() + rec.output_dim));
        if (pos != rec.parameters.size()) {
            throw validation_error("network " + rec.id + ": trailing parameters");
        }
        return net;
    }
};

namespace synth {

struct Diagnostics {
    std::size_t ridge_fallbacks = 0;
};

inline Diagnostics& diagnostics() {
    static Diagnostics d;
    return d;
}

inline TopologyDescriptor random_topology(RngStream& rng) {
    static constexpr int kDepths[] = {2, 3, 4};
    static constexpr int kKernels[] = {3, 5, 7};
    static constexpr int kExpansions[] = {3, 4, 6};
    TopologyDescriptor t;
    for (std::size_t u = 0; u < TopologyDescriptor::kUnits; ++u) {
        t.depths[u] = kDepths[rng.below(3)];
        for (std::size_t l = 0; l < TopologyDescriptor::kLayersPerUnit; ++l) {
            std::size_t s = u * TopologyDescriptor::kLayersPerUnit + l;
            if (l < static_cast<std::size_t>(t.depths[u])) {
                t.kernels[s] = kKernels[rng.below(3)];
                t.expansions[s] = kExpansions[rng.below(3)];
            }
        }
    }
    return t;
}

inline std::uint64_t network_seed(const TopologyDescriptor& topo, const std::string& dataset_id) {
    auto flat = topo.flatten();
    std::uint64_t h = fnv1a(flat.data(), flat.size() * sizeof(double));
    return mix_seed(h, dataset_id);
}

namespace detail {

// Cholesky solve of (A + lambda I) X = B for SPD A, in place. Returns false
// if a pivot collapses.
inline bool ridge_solve(std::vector<double>& a, std::size_t n, double lambda, std::vector<double>& b,
                        std::size_t ncols) {
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] += lambda;
    // decompose
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (s <= 0.0 || !std::isfinite(s)) return false;
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    // forward/backward substitution per column
    for (std::size_t c = 0; c < ncols; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = b[i * ncols + c];
            for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k * ncols + c];
            b[i * ncols + c] = s / a[i * n + i];
        }
        for (std::size_t i = n; i-- > 0;) {
            double s = b[i * ncols + c];
            for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k * ncols + c];
            b[i * ncols + c] = s / a[i * n + i];
        }
    }
    return true;
}

}  // namespace detail

// Hidden layers are fixed random features seeded by (topology, dataset id);
// the output head is a closed-form ridge fit of one-hot labels on the last
// hidden activations (plus a bias column), so identical inputs always produce
// identical weights.
inline SynthNetwork pretrain_network(const TopologyDescriptor& topology, const DatasetRecord& dataset,
                                     double ridge_lambda = 1e-3) {
    topology.validate();
    SynthNetwork net;
    net.topology = topology;
    net.input_dim = dataset.feature_dim;
    net.output_dim = static_cast<std::size_t>(dataset.class_count);

    RngStream rng(network_seed(topology, dataset.id));
    std::size_t in = net.input_dim;
    for (std::size_t w : hidden_widths(topology)) {
        Tensor wm({in, w});
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        for (std::size_t i = 0; i < wm.size(); ++i) wm[i] = round_f32(scale * rng.normal());
        Tensor bm({w});
        for (std::size_t i = 0; i < w; ++i) bm[i] = round_f32(0.1 * rng.normal());
        net.hidden_w.push_back(std::move(wm));
        net.hidden_b.push_back(std::move(bm));
        in = w;
    }

    // design matrix: last hidden activations with a trailing bias column
    const std::size_t n_tr = dataset.train_idx.size();
    const std::size_t hdim = in;
    const std::size_t aug = hdim + 1;
    std::vector<double> design(n_tr * aug);
    for (std::size_t r = 0; r < n_tr; ++r) {
        auto h = net.features(dataset.instance(dataset.train_idx[r]));
        std::copy(h.begin(), h.end(), design.begin() + r * aug);
        design[r * aug + hdim] = 1.0;
    }

    const std::size_t classes = net.output_dim;
    std::vector<double> gram(aug * aug, 0.0);
    std::vector<double> rhs(aug * classes, 0.0);
    for (std::size_t r = 0; r < n_tr; ++r) {
        const double* row = design.data() + r * aug;
        for (std::size_t i = 0; i < aug; ++i) {
            for (std::size_t j = 0; j <= i; ++j) gram[i * aug + j] += row[i] * row[j];
        }
        const auto label = static_cast<std::size_t>(dataset.labels[dataset.train_idx[r]]);
        for (std::size_t i = 0; i < aug; ++i) rhs[i * classes + label] += row[i];
    }
    for (std::size_t i = 0; i < aug; ++i) {
        for (std::size_t j = i + 1; j < aug; ++j) gram[i * aug + j] = gram[j * aug + i];
    }

    std::vector<double> gram_copy = gram;
    std::vector<double> sol = rhs;
    if (!detail::ridge_solve(gram_copy, aug, ridge_lambda, sol, classes)) {
        ++diagnostics().ridge_fallbacks;
        gram_copy = gram;
        sol = rhs;
        if (!detail::ridge_solve(gram_copy, aug, 1e-1, sol, classes)) {
            throw validation_error("ridge fit failed for dataset " + dataset.id);
        }
    }

    net.head_w = Tensor({hdim, classes});
    net.head_b = Tensor({classes});
    for (std::size_t i = 0; i < hdim; ++i) {
        for (std::size_t c = 0; c < classes; ++c) net.head_w.at(i, c) = round_f32(sol[i * classes + c]);
    }
    for (std::size_t c = 0; c < classes; ++c) net.head_b[c] = round_f32(sol[hdim * classes + c]);
    return net;
}

// Fraction of validation instances whose argmax logit matches the label.
// Argmax ties resolve toward the lower class index.
inline double evaluate_network(const SynthNetwork& net, const DatasetRecord& dataset) {
    if (dataset.val_idx.empty()) throw validation_error("dataset " + dataset.id + ": empty validation split");
    std::size_t correct = 0;
    for (std::size_t idx : dataset.val_idx) {
        auto logits = net.forward(dataset.instance(idx));
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.size(); ++j) {
            if (logits[j] > logits[best]) best = j;
        }
        if (static_cast<int>(best) == dataset.labels[idx]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.val_idx.size());
}

inline std::size_t count_params(const SynthNetwork& net) { return net.parameter_count(); }

// Simulated: affine in the multiply-accumulate count, never wall-clock.
inline double measure_latency(const SynthNetwork& net, const SynthConfig& cfg) {
    return cfg.latency_base + cfg.latency_per_mac * static_cast<double>(net.mac_count());
}

// The desk-scale universe: every dataset paired with networks_per_dataset
// networks pretrained on it, resources normalized over the whole zoo.
inline ModelZoo build_full_zoo(const SynthConfig& cfg, std::size_t jobs = 1) {
    cfg.validate();
    ModelZoo zoo;
    std::vector<DatasetRecord> datasets(cfg.n_datasets);
    parallel_for(cfg.n_datasets, jobs, [&](std::size_t k) { datasets[k] = gen_dataset(cfg, k); });

    const std::size_t total = cfg.n_datasets * cfg.networks_per_dataset;
    std::vector<NetworkRecord> nets(total);
    std::vector<ZooEntry> entries(total);
    parallel_for(total, jobs, [&](std::size_t i) {
        const std::size_t k = i / cfg.networks_per_dataset;
        const std::size_t j = i % cfg.networks_per_dataset;
        const DatasetRecord& d = datasets[k];
        RngStream topo_rng(mix_seed(cfg.rng_seed, "topology", i));
        TopologyDescriptor topo = random_topology(topo_rng);
        SynthNetwork net = pretrain_network(topo, d, cfg.ridge_lambda);
        const double acc = evaluate_network(net, d);
        const double lat = measure_latency(net, cfg);
        nets[i] = net.to_record(network_id(d.id, j), d.id, lat);
        entries[i] = ZooEntry{d.id, nets[i].id, acc, 0.0, 0.0};
    });

    for (auto& d : datasets) zoo.datasets[d.id] = std::move(d);
    for (auto& n : nets) zoo.networks[n.id] = std::move(n);
    zoo.entries = std::move(entries);
    return normalize_resources(std::move(zoo));
}

}  // namespace synth
}  // namespace tanszoo
