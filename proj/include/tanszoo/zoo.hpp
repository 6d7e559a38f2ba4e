#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tanszoo/common.hpp"

namespace tanszoo {

// Flat 45-slot architecture descriptor: 5 unit depths, then 20 per-layer
// kernel sizes and 20 per-layer expansion ratios (4 layer slots per unit).
// Slots beyond a unit's depth are 0.
struct TopologyDescriptor {
    static constexpr std::size_t kUnits = 5;
    static constexpr std::size_t kLayersPerUnit = 4;
    static constexpr std::size_t kLayerSlots = kUnits * kLayersPerUnit;
    static constexpr std::size_t kSlots = kUnits + 2 * kLayerSlots;  // 45

    std::array<int, kUnits> depths{};
    std::array<int, kLayerSlots> kernels{};
    std::array<int, kLayerSlots> expansions{};

    bool operator==(const TopologyDescriptor&) const = default;

    std::array<double, kSlots> flatten() const {
        std::array<double, kSlots> v{};
        for (std::size_t i = 0; i < kUnits; ++i) v[i] = depths[i];
        for (std::size_t i = 0; i < kLayerSlots; ++i) v[kUnits + i] = kernels[i];
        for (std::size_t i = 0; i < kLayerSlots; ++i) v[kUnits + kLayerSlots + i] = expansions[i];
        return v;
    }

    // Per-slot scaling into [0,1] by the largest legal choice of that slot.
    std::array<double, kSlots> unit_scaled() const {
        std::array<double, kSlots> v = flatten();
        for (std::size_t i = 0; i < kUnits; ++i) v[i] /= 4.0;
        for (std::size_t i = 0; i < kLayerSlots; ++i) v[kUnits + i] /= 7.0;
        for (std::size_t i = 0; i < kLayerSlots; ++i) v[kUnits + kLayerSlots + i] /= 6.0;
        return v;
    }

    // Active (kernel, expansion) pairs in slot order.
    std::vector<std::pair<int, int>> active_layers() const {
        std::vector<std::pair<int, int>> out;
        for (std::size_t u = 0; u < kUnits; ++u) {
            for (int l = 0; l < depths[u]; ++l) {
                std::size_t s = u * kLayersPerUnit + static_cast<std::size_t>(l);
                out.emplace_back(kernels[s], expansions[s]);
            }
        }
        return out;
    }

    int depth_sum() const {
        int s = 0;
        for (int d : depths) s += d;
        return s;
    }

    void validate() const {
        auto in = [](int v, std::initializer_list<int> set) {
            for (int s : set) {
                if (v == s) return true;
            }
            return false;
        };
        for (std::size_t u = 0; u < kUnits; ++u) {
            if (!in(depths[u], {2, 3, 4})) throw validation_error("topology: depth outside {2,3,4}");
            for (std::size_t l = 0; l < kLayersPerUnit; ++l) {
                std::size_t s = u * kLayersPerUnit + l;
                if (l < static_cast<std::size_t>(depths[u])) {
                    if (!in(kernels[s], {3, 5, 7})) throw validation_error("topology: kernel outside {3,5,7}");
                    if (!in(expansions[s], {3, 4, 6})) throw validation_error("topology: expansion outside {3,4,6}");
                } else if (kernels[s] != 0 || expansions[s] != 0) {
                    throw validation_error("topology: inactive layer slot must be 0");
                }
            }
        }
    }
};

// A labeled synthetic classification task. Feature rows are stored flat;
// probe instances are indices into the instance table, which makes the
// "probe set is a subset of the instances" invariant structural.
struct DatasetRecord {
    std::string id;
    int class_count = 0;
    std::size_t feature_dim = 0;
    std::vector<double> features;  // instance_count x feature_dim
    std::vector<int> labels;
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> val_idx;
    std::vector<std::size_t> probe_idx;

    bool operator==(const DatasetRecord&) const = default;

    std::size_t instance_count() const { return labels.size(); }
    const double* instance(std::size_t i) const { return features.data() + i * feature_dim; }

    std::vector<std::vector<double>> probe_vectors() const {
        std::vector<std::vector<double>> out;
        out.reserve(probe_idx.size());
        for (std::size_t i : probe_idx) {
            out.emplace_back(instance(i), instance(i) + feature_dim);
        }
        return out;
    }

    void validate() const {
        if (class_count < 2) throw validation_error("dataset " + id + ": class_count must be >= 2");
        if (feature_dim == 0 || features.size() != labels.size() * feature_dim) {
            throw validation_error("dataset " + id + ": feature table size mismatch");
        }
        for (int l : labels) {
            if (l < 0 || l >= class_count) throw validation_error("dataset " + id + ": label out of range");
        }
        std::set<std::size_t> train(train_idx.begin(), train_idx.end());
        for (std::size_t i : val_idx) {
            if (train.count(i)) throw validation_error("dataset " + id + ": train/validation overlap");
        }
        for (std::size_t i : probe_idx) {
            if (i >= instance_count()) throw validation_error("dataset " + id + ": probe index out of range");
        }
        for (std::size_t i : train_idx) {
            if (i >= instance_count()) throw validation_error("dataset " + id + ": train index out of range");
        }
        for (std::size_t i : val_idx) {
            if (i >= instance_count()) throw validation_error("dataset " + id + ": validation index out of range");
        }
    }
};

// A tiny feed-forward network with fitted weights, flattened layer-major
// (each hidden layer's weight matrix then bias, finally the output head).
struct NetworkRecord {
    std::string id;
    TopologyDescriptor topology;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<double> parameters;
    std::size_t param_count = 0;
    double latency = 0.0;  // seconds (simulated)
    std::string source_dataset_id;

    bool operator==(const NetworkRecord&) const = default;

    void validate() const {
        topology.validate();
        if (param_count != parameters.size()) {
            throw validation_error("network " + id + ": param_count does not match parameters");
        }
        if (latency <= 0.0) throw validation_error("network " + id + ": latency must be > 0");
    }
};

struct ZooEntry {
    std::string dataset_id;
    std::string network_id;
    double accuracy = 0.0;
    double norm_latency = 0.0;
    double norm_params = 0.0;

    bool operator==(const ZooEntry&) const = default;
};

struct NormalizationStats {
    double latency_min = 0.0, latency_max = 0.0;
    double params_min = 0.0, params_max = 0.0;

    bool operator==(const NormalizationStats&) const = default;

    static double apply(double v, double lo, double hi) {
        if (hi == lo) return 0.0;  // degenerate span maps to the neutral coordinate
        return (v - lo) / (hi - lo);
    }
};

struct Constraints {
    std::optional<std::uint64_t> max_params;
    std::optional<std::uint64_t> max_flops;
    std::optional<double> max_latency;

    bool any() const { return max_params || max_flops || max_latency; }

    void validate() const {
        if ((max_params && *max_params == 0) || (max_flops && *max_flops == 0) ||
            (max_latency && *max_latency <= 0.0)) {
            throw validation_error("constraints: bounds must be positive");
        }
    }
};

// Immutable after load; every mutation builds a new zoo.
struct ModelZoo {
    std::vector<ZooEntry> entries;
    std::map<std::string, DatasetRecord> datasets;
    std::map<std::string, NetworkRecord> networks;
    NormalizationStats stats;
    bool has_stats = false;

    bool operator==(const ModelZoo&) const = default;

    const DatasetRecord& dataset(const std::string& id) const {
        auto it = datasets.find(id);
        if (it == datasets.end()) throw validation_error("unknown dataset id: " + id);
        return it->second;
    }

    const NetworkRecord& network(const std::string& id) const {
        auto it = networks.find(id);
        if (it == networks.end()) throw validation_error("unknown network id: " + id);
        return it->second;
    }

    std::vector<std::string> dataset_ids() const {
        std::vector<std::string> out;
        out.reserve(datasets.size());
        for (const auto& [k, v] : datasets) out.push_back(k);
        return out;
    }

    // Networks of one dataset's entries, in entry order.
    std::vector<std::string> networks_of(const std::string& dataset_id) const {
        std::vector<std::string> out;
        for (const auto& e : entries) {
            if (e.dataset_id == dataset_id) out.push_back(e.network_id);
        }
        return out;
    }

    void validate() const {
        std::set<std::pair<std::string, std::string>> seen;
        for (const auto& e : entries) {
            if (!datasets.count(e.dataset_id)) {
                throw validation_error("zoo entry references missing dataset id: " + e.dataset_id);
            }
            if (!networks.count(e.network_id)) {
                throw validation_error("zoo entry references missing network id: " + e.network_id);
            }
            if (!seen.insert({e.dataset_id, e.network_id}).second) {
                throw validation_error("duplicate zoo entry (" + e.dataset_id + ", " + e.network_id + ")");
            }
            if (e.accuracy < 0.0 || e.accuracy > 1.0) {
                throw validation_error("zoo entry accuracy outside [0,1] for " + e.network_id);
            }
            if (e.norm_latency < 0.0 || e.norm_latency > 1.0 || e.norm_params < 0.0 || e.norm_params > 1.0) {
                throw validation_error("zoo entry normalized resource outside [0,1] for " + e.network_id);
            }
            if (has_stats) {
                const NetworkRecord& net = networks.at(e.network_id);
                double nl = NormalizationStats::apply(net.latency, stats.latency_min, stats.latency_max);
                double np = NormalizationStats::apply(static_cast<double>(net.param_count),
                                                      stats.params_min, stats.params_max);
                if (std::abs(nl - e.norm_latency) > 1e-9 || std::abs(np - e.norm_params) > 1e-9) {
                    throw validation_error("normalization stats do not reproduce stored values for " +
                                           e.network_id);
                }
            }
        }
        for (const auto& [id, d] : datasets) d.validate();
        for (const auto& [id, n] : networks) n.validate();
    }
};

// Min-max normalization of latency and parameter count over the entries'
// networks. A degenerate span (max == min) maps everything to 0.0.
inline ModelZoo normalize_resources(ModelZoo zoo) {
    if (zoo.entries.empty()) throw validation_error("normalize_resources: empty zoo");
    NormalizationStats st;
    bool first = true;
    for (const auto& e : zoo.entries) {
        const NetworkRecord& net = zoo.network(e.network_id);
        const double lat = net.latency;
        const double par = static_cast<double>(net.param_count);
        if (first) {
            st.latency_min = st.latency_max = lat;
            st.params_min = st.params_max = par;
            first = false;
        } else {
            st.latency_min = std::min(st.latency_min, lat);
            st.latency_max = std::max(st.latency_max, lat);
            st.params_min = std::min(st.params_min, par);
            st.params_max = std::max(st.params_max, par);
        }
    }
    for (auto& e : zoo.entries) {
        const NetworkRecord& net = zoo.network(e.network_id);
        e.norm_latency = NormalizationStats::apply(net.latency, st.latency_min, st.latency_max);
        e.norm_params = NormalizationStats::apply(static_cast<double>(net.param_count), st.params_min,
                                                  st.params_max);
    }
    zoo.stats = st;
    zoo.has_stats = true;
    return zoo;
}

namespace detail {

static_assert(sizeof(float) == 4, "f32 sidecars assume 4-byte float");

inline void write_f32_file(const std::filesystem::path& path, const std::vector<double>& values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open sidecar for writing: " + path.string());
    std::vector<float> buf(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!os) throw io_error("failed writing sidecar: " + path.string());
}

inline std::vector<double> read_f32_file(const std::filesystem::path& path, std::size_t count) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open sidecar: " + path.string());
    std::vector<float> buf(count);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(is.gcount()) != count * sizeof(float)) {
        throw io_error("sidecar truncated: " + path.string());
    }
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(buf[i]);
    return out;
}

inline std::string sanitize_id(const std::string& id) {
    std::string out;
    out.reserve(id.size());
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                        c == '-' || c == '_' || c == '.';
        out.push_back(ok ? c : '_');
    }
    return out;
}

inline nlohmann::json topology_to_json(const TopologyDescriptor& t) {
    return {{"depths", t.depths}, {"kernels", t.kernels}, {"expansions", t.expansions}};
}

inline TopologyDescriptor topology_from_json(const nlohmann::json& j) {
    TopologyDescriptor t;
    auto d = j.at("depths").get<std::vector<int>>();
    auto k = j.at("kernels").get<std::vector<int>>();
    auto e = j.at("expansions").get<std::vector<int>>();
    if (d.size() != t.depths.size() || k.size() != t.kernels.size() || e.size() != t.expansions.size()) {
        throw validation_error("topology arrays have wrong lengths");
    }
    std::copy(d.begin(), d.end(), t.depths.begin());
    std::copy(k.begin(), k.end(), t.kernels.begin());
    std::copy(e.begin(), e.end(), t.expansions.begin());
    return t;
}

}  // namespace detail

// Zoo file: JSON Lines. Line 1 is a header object; each further line is one
// ZooEntry carrying its dataset/network records inline on first occurrence.
// Large arrays live in "<stem>_data/" as little-endian f32 files referenced
// by relative path + element count. Only records referenced by entries are
// persisted.
inline void save_zoo(const ModelZoo& zoo, const std::filesystem::path& path) {
    using nlohmann::json;
    zoo.validate();

    const std::string stem = path.stem().string();
    const std::string data_dir_name = stem + "_data";
    const std::filesystem::path data_dir = path.parent_path() / data_dir_name;

    bool needs_sidecars = !zoo.entries.empty();
    std::error_code ec;
    if (needs_sidecars) {
        std::filesystem::create_directories(data_dir, ec);
        if (ec) throw io_error("cannot create sidecar directory: " + data_dir.string());
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open zoo file for writing: " + path.string());

    json header = {{"format_version", 1}};
    if (zoo.has_stats) {
        header["normalization_stats"] = {
            {"latency", {{"min", zoo.stats.latency_min}, {"max", zoo.stats.latency_max}}},
            {"params", {{"min", zoo.stats.params_min}, {"max", zoo.stats.params_max}}}};
    } else {
        header["normalization_stats"] = nullptr;
    }
    os << header.dump() << "\n";

    std::set<std::string> emitted_datasets, emitted_networks;
    for (const auto& e : zoo.entries) {
        json line = {{"dataset_id", e.dataset_id},
                     {"network_id", e.network_id},
                     {"accuracy", e.accuracy},
                     {"norm_latency", e.norm_latency},
                     {"norm_params", e.norm_params}};
        if (emitted_datasets.insert(e.dataset_id).second) {
            const DatasetRecord& d = zoo.dataset(e.dataset_id);
            const std::string rel = data_dir_name + "/ds_" + detail::sanitize_id(d.id) + ".f32";
            detail::write_f32_file(path.parent_path() / rel, d.features);
            line["dataset"] = {{"id", d.id},
                               {"class_count", d.class_count},
                               {"feature_dim", d.feature_dim},
                               {"labels", d.labels},
                               {"train_idx", d.train_idx},
                               {"val_idx", d.val_idx},
                               {"probe_idx", d.probe_idx},
                               {"features", {{"path", rel}, {"count", d.features.size()}}}};
        }
        if (emitted_networks.insert(e.network_id).second) {
            const NetworkRecord& n = zoo.network(e.network_id);
            const std::string rel = data_dir_name + "/net_" + detail::sanitize_id(n.id) + ".f32";
            detail::write_f32_file(path.parent_path() / rel, n.parameters);
            line["network"] = {{"id", n.id},
                               {"source_dataset_id", n.source_dataset_id},
                               {"topology", detail::topology_to_json(n.topology)},
                               {"input_dim", n.input_dim},
                               {"output_dim", n.output_dim},
                               {"param_count", n.param_count},
                               {"latency", n.latency},
                               {"parameters", {{"path", rel}, {"count", n.parameters.size()}}}};
        }
        os << line.dump() << "\n";
    }
    if (!os) throw io_error("failed writing zoo file: " + path.string());
}

inline ModelZoo load_zoo(const std::filesystem::path& path) {
    using nlohmann::json;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open zoo file: " + path.string());

    ModelZoo zoo;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    std::set<std::pair<std::string, std::string>> seen_pairs;

    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& ex) {
            throw io_error("zoo parse error at line " + std::to_string(line_no) + ": " + ex.what());
        }
        try {
            if (!header_seen) {
                if (j.value("format_version", -1) != 1) {
                    throw validation_error("unsupported zoo format_version");
                }
                if (j.contains("normalization_stats") && !j["normalization_stats"].is_null()) {
                    const auto& s = j["normalization_stats"];
                    zoo.stats.latency_min = s.at("latency").at("min").get<double>();
                    zoo.stats.latency_max = s.at("latency").at("max").get<double>();
                    zoo.stats.params_min = s.at("params").at("min").get<double>();
                    zoo.stats.params_max = s.at("params").at("max").get<double>();
                    zoo.has_stats = true;
                }
                header_seen = true;
                continue;
            }
            ZooEntry e;
            e.dataset_id = j.at("dataset_id").get<std::string>();
            e.network_id = j.at("network_id").get<std::string>();
            e.accuracy = j.at("accuracy").get<double>();
            e.norm_latency = j.at("norm_latency").get<double>();
            e.norm_params = j.at("norm_params").get<double>();
            if (!seen_pairs.insert({e.dataset_id, e.network_id}).second) {
                throw validation_error("duplicate zoo entry (" + e.dataset_id + ", " + e.network_id +
                                       ") at line " + std::to_string(line_no));
            }
            if (j.contains("dataset")) {
                const auto& dj = j["dataset"];
                DatasetRecord d;
                d.id = dj.at("id").get<std::string>();
                d.class_count = dj.at("class_count").get<int>();
                d.feature_dim = dj.at("feature_dim").get<std::size_t>();
                d.labels = dj.at("labels").get<std::vector<int>>();
                d.train_idx = dj.at("train_idx").get<std::vector<std::size_t>>();
                d.val_idx = dj.at("val_idx").get<std::vector<std::size_t>>();
                d.probe_idx = dj.at("probe_idx").get<std::vector<std::size_t>>();
                d.features = detail::read_f32_file(
                    path.parent_path() / dj.at("features").at("path").get<std::string>(),
                    dj.at("features").at("count").get<std::size_t>());
                zoo.datasets[d.id] = std::move(d);
            }
            if (j.contains("network")) {
                const auto& nj = j["network"];
                NetworkRecord n;
                n.id = nj.at("id").get<std::string>();
                n.source_dataset_id = nj.at("source_dataset_id").get<std::string>();
                n.topology = detail::topology_from_json(nj.at("topology"));
                n.input_dim = nj.at("input_dim").get<std::size_t>();
                n.output_dim = nj.at("output_dim").get<std::size_t>();
                n.param_count = nj.at("param_count").get<std::size_t>();
                n.latency = nj.at("latency").get<double>();
                n.parameters = detail::read_f32_file(
                    path.parent_path() / nj.at("parameters").at("path").get<std::string>(),
                    nj.at("parameters").at("count").get<std::size_t>());
                zoo.networks[n.id] = std::move(n);
            }
            zoo.entries.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw io_error("zoo field error at line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    zoo.validate();
    return zoo;
}

}  // namespace tanszoo
