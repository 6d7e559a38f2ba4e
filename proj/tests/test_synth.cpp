#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tanszoo/synth.hpp"

using namespace tanszoo;

namespace {

SynthConfig base_cfg() {
    SynthConfig cfg;
    cfg.n_datasets = 4;
    cfg.networks_per_dataset = 2;
    cfg.classes_min = 2;
    cfg.classes_max = 4;
    cfg.instances_per_class_min = 50;
    cfg.instances_per_class_max = 50;
    cfg.feature_dim = 8;
    cfg.rng_seed = 23;
    return cfg;
}

// Oracle: forward pass rewritten with per-sample std::vector math, kept
// deliberately independent of SynthNetwork's buffer-reuse implementation.
std::vector<double> naive_forward(const SynthNetwork& net, const double* x) {
    std::vector<double> h(x, x + net.input_dim);
    for (std::size_t l = 0; l < net.hidden_w.size(); ++l) {
        std::vector<double> out(net.hidden_w[l].cols());
        for (std::size_t j = 0; j < out.size(); ++j) {
            double s = net.hidden_b[l][j];
            for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * net.hidden_w[l].at(i, j);
            out[j] = std::tanh(s);
        }
        h = out;
    }
    std::vector<double> logits(net.output_dim);
    for (std::size_t j = 0; j < net.output_dim; ++j) {
        double s = net.head_b[j];
        for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * net.head_w.at(i, j);
        logits[j] = s;
    }
    return logits;
}

double naive_accuracy(const SynthNetwork& net, const DatasetRecord& d) {
    std::size_t ok = 0;
    for (std::size_t idx : d.val_idx) {
        auto l = naive_forward(net, d.instance(idx));
        std::size_t best = 0;
        for (std::size_t j = 1; j < l.size(); ++j) {
            if (l[j] > l[best]) best = j;
        }
        if (static_cast<int>(best) == d.labels[idx]) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(d.val_idx.size());
}

}  // namespace

TEST_CASE("gen_dataset split arithmetic") {
    SynthConfig cfg = base_cfg();
    cfg.classes_min = cfg.classes_max = 2;
    DatasetRecord d = synth::gen_dataset(cfg, 0);
    CHECK(d.instance_count() == 100);
    CHECK(d.train_idx.size() == 80);
    CHECK(d.val_idx.size() == 20);
    CHECK(d.probe_idx.size() == 20);  // 10 per class
    CHECK_NOTHROW(d.validate());
}

TEST_CASE("gen_dataset is deterministic in the seed") {
    SynthConfig cfg = base_cfg();
    DatasetRecord a = synth::gen_dataset(cfg, 3);
    DatasetRecord b = synth::gen_dataset(cfg, 3);
    CHECK(a == b);
    DatasetRecord c = synth::gen_dataset(cfg, 4);
    CHECK_FALSE(a == c);
}

TEST_CASE("zero cluster separation yields chance-level accuracy") {
    SynthConfig cfg = base_cfg();
    cfg.separation_min = cfg.separation_max = 0.0;
    cfg.classes_min = cfg.classes_max = 2;
    cfg.instances_per_class_min = cfg.instances_per_class_max = 100;
    double sum = 0.0;
    std::size_t n_val = 0;
    const int trials = 5;
    for (int i = 0; i < trials; ++i) {
        DatasetRecord d = synth::gen_dataset(cfg, static_cast<std::size_t>(i));
        RngStream rng(mix_seed(cfg.rng_seed, "topo_chance", i));
        SynthNetwork net = synth::pretrain_network(synth::random_topology(rng), d);
        sum += synth::evaluate_network(net, d);
        n_val = d.val_idx.size();
    }
    const double mean_acc = sum / trials;
    const double p = 0.5;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n_val * trials));
    CHECK(std::abs(mean_acc - p) <= 3.0 * sigma);
}

TEST_CASE("shuffled labels drop accuracy to chance") {
    SynthConfig cfg = base_cfg();
    cfg.classes_min = cfg.classes_max = 2;
    cfg.instances_per_class_min = cfg.instances_per_class_max = 100;
    cfg.separation_min = cfg.separation_max = 3.0;
    DatasetRecord d = synth::gen_dataset(cfg, 1);
    RngStream shuffler(99);
    shuffler.shuffle(d.labels);

    RngStream rng(5);
    SynthNetwork net = synth::pretrain_network(synth::random_topology(rng), d);
    const double acc = synth::evaluate_network(net, d);
    const double p = 0.5;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(d.val_idx.size()));
    CHECK(std::abs(acc - p) <= 3.0 * sigma);
}

TEST_CASE("well separated two-class data trains above 0.9") {
    SynthConfig cfg = base_cfg();
    cfg.classes_min = cfg.classes_max = 2;
    cfg.separation_min = cfg.separation_max = 4.0;
    DatasetRecord d = synth::gen_dataset(cfg, 2);
    RngStream rng(7);
    SynthNetwork net = synth::pretrain_network(synth::random_topology(rng), d);
    // train-split accuracy, mirroring the fit target
    std::size_t ok = 0;
    for (std::size_t idx : d.train_idx) {
        auto logits = net.forward(d.instance(idx));
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.size(); ++j) {
            if (logits[j] > logits[best]) best = j;
        }
        if (static_cast<int>(best) == d.labels[idx]) ++ok;
    }
    CHECK(static_cast<double>(ok) / static_cast<double>(d.train_idx.size()) > 0.9);
}

TEST_CASE("pretraining is deterministic in (topology, dataset)") {
    SynthConfig cfg = base_cfg();
    DatasetRecord d = synth::gen_dataset(cfg, 0);
    RngStream rng(11);
    TopologyDescriptor topo = synth::random_topology(rng);
    SynthNetwork a = synth::pretrain_network(topo, d);
    SynthNetwork b = synth::pretrain_network(topo, d);
    CHECK(a.flat_parameters() == b.flat_parameters());
}

TEST_CASE("constant-logit network scores the frequency of class 0") {
    SynthConfig cfg = base_cfg();
    cfg.classes_min = cfg.classes_max = 3;
    DatasetRecord d = synth::gen_dataset(cfg, 0);
    RngStream rng(3);
    SynthNetwork net = synth::pretrain_network(synth::random_topology(rng), d);
    net.head_w.fill(0.0);
    net.head_b.fill(0.25);  // every class ties; argmax must pick class 0
    std::size_t class0 = 0;
    for (std::size_t idx : d.val_idx) {
        if (d.labels[idx] == 0) ++class0;
    }
    CHECK(synth::evaluate_network(net, d) ==
          Catch::Approx(static_cast<double>(class0) / d.val_idx.size()));
}

TEST_CASE("perfect memorizer scores 1.0") {
    SynthConfig cfg = base_cfg();
    cfg.classes_min = cfg.classes_max = 2;
    cfg.separation_min = cfg.separation_max = 6.0;
    DatasetRecord d = synth::gen_dataset(cfg, 5);
    RngStream rng(13);
    // fit on the validation instances themselves: a memorizer oracle
    DatasetRecord memor = d;
    memor.train_idx = d.val_idx;
    SynthNetwork net = synth::pretrain_network(synth::random_topology(rng), memor, 1e-6);
    CHECK(synth::evaluate_network(net, d) == 1.0);
}

TEST_CASE("evaluate_network matches an independent loop-based oracle") {
    SynthConfig cfg = base_cfg();
    for (std::size_t i = 0; i < 5; ++i) {
        DatasetRecord d = synth::gen_dataset(cfg, i % cfg.n_datasets);
        RngStream rng(mix_seed(77, "oracle", i));
        SynthNetwork net = synth::pretrain_network(synth::random_topology(rng), d);
        CHECK(synth::evaluate_network(net, d) == naive_accuracy(net, d));
    }
}

TEST_CASE("param and mac counts match a summation oracle") {
    RngStream rng(2);
    SynthConfig cfg = base_cfg();
    DatasetRecord d = synth::gen_dataset(cfg, 0);
    for (int i = 0; i < 10; ++i) {
        SynthNetwork net = synth::pretrain_network(synth::random_topology(rng), d);
        std::size_t params = 0, macs = 0;
        std::size_t in = net.input_dim;
        for (const auto& w : net.hidden_w) {
            params += (in + 1) * w.cols();
            macs += in * w.cols();
            in = w.cols();
        }
        params += (in + 1) * net.output_dim;
        macs += in * net.output_dim;
        CHECK(synth::count_params(net) == params);
        CHECK(net.mac_count() == macs);
        CHECK(net.flat_parameters().size() == params);
    }
}

TEST_CASE("degenerate single-linear-layer network counts 4*2+2 params") {
    SynthNetwork net;
    net.input_dim = 4;
    net.output_dim = 2;
    net.head_w = Tensor({4, 2});
    net.head_b = Tensor({2});
    CHECK(synth::count_params(net) == 10);
    CHECK(net.mac_count() == 8);
}

TEST_CASE("latency is affine in mac count and doubles with width") {
    SynthConfig cfg = base_cfg();
    SynthNetwork a;
    a.input_dim = 4;
    a.output_dim = 2;
    a.head_w = Tensor({4, 2});
    a.head_b = Tensor({2});
    SynthNetwork b = a;
    b.input_dim = 8;
    b.head_w = Tensor({8, 2});
    const double la = synth::measure_latency(a, cfg) - cfg.latency_base;
    const double lb = synth::measure_latency(b, cfg) - cfg.latency_base;
    CHECK(lb == Catch::Approx(2.0 * la));
}

TEST_CASE("build_full_zoo shape and determinism") {
    SynthConfig cfg = base_cfg();
    cfg.n_datasets = 3;
    cfg.networks_per_dataset = 2;
    ModelZoo zoo = synth::build_full_zoo(cfg);
    CHECK(zoo.entries.size() == 6);
    for (const auto& e : zoo.entries) {
        CHECK(e.accuracy >= 0.0);
        CHECK(e.accuracy <= 1.0);
    }
    CHECK_NOTHROW(zoo.validate());

    ModelZoo again = synth::build_full_zoo(cfg);
    CHECK(again == zoo);

    ModelZoo parallel = synth::build_full_zoo(cfg, 2);
    CHECK(parallel == zoo);
}

TEST_CASE("reconstructing a network from its record preserves behaviour") {
    SynthConfig cfg = base_cfg();
    ModelZoo zoo = synth::build_full_zoo(cfg);
    const ZooEntry& e = zoo.entries.front();
    SynthNetwork net = SynthNetwork::from_record(zoo.network(e.network_id));
    CHECK(synth::evaluate_network(net, zoo.dataset(e.dataset_id)) == e.accuracy);
}

TEST_CASE("networks pretrained on a dataset beat foreign networks there") {
    SynthConfig cfg = base_cfg();
    cfg.n_datasets = 10;
    cfg.networks_per_dataset = 2;
    ModelZoo zoo = synth::build_full_zoo(cfg);

    int own_wins = 0, comparisons = 0;
    for (const auto& [did, dataset] : zoo.datasets) {
        double own_sum = 0.0;
        int own_n = 0;
        double foreign_sum = 0.0;
        int foreign_n = 0;
        for (const auto& [nid, net_rec] : zoo.networks) {
            SynthNetwork net = SynthNetwork::from_record(net_rec);
            if (net_rec.source_dataset_id == did) {
                own_sum += synth::evaluate_network(net, dataset);
                ++own_n;
            } else if (foreign_n < 6) {
                if (static_cast<std::size_t>(dataset.class_count) > net.output_dim) continue;
                foreign_sum += synth::evaluate_network(net, dataset);
                ++foreign_n;
            }
        }
        if (own_n == 0 || foreign_n == 0) continue;
        ++comparisons;
        if (own_sum / own_n > foreign_sum / foreign_n) ++own_wins;
    }
    // one-sided sign test at p < 0.05: 9 wins of 10 paired comparisons
    CHECK(comparisons >= 10);
    CHECK(own_wins >= comparisons - 1);
}
