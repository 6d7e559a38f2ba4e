#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "tanszoo/synth.hpp"
#include "tanszoo/zoo.hpp"

using namespace tanszoo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("tanszoo_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

SynthConfig small_cfg(std::size_t datasets = 5, std::size_t nets = 10) {
    SynthConfig cfg;
    cfg.n_datasets = datasets;
    cfg.networks_per_dataset = nets;
    cfg.classes_min = 2;
    cfg.classes_max = 3;
    cfg.instances_per_class_min = 50;
    cfg.instances_per_class_max = 55;
    cfg.feature_dim = 8;
    cfg.rng_seed = 17;
    return cfg;
}

}  // namespace

TEST_CASE("empty zoo file loads as zero entries") {
    auto dir = temp_dir("empty");
    auto path = dir / "zoo.jsonl";
    std::ofstream(path).close();
    ModelZoo zoo = load_zoo(path);
    CHECK(zoo.entries.empty());
    CHECK(zoo.datasets.empty());
}

TEST_CASE("zero-entry zoo saves a header-only file") {
    auto dir = temp_dir("header_only");
    auto path = dir / "zoo.jsonl";
    ModelZoo zoo;
    save_zoo(zoo, path);
    std::string content = slurp(path);
    CHECK(content.find("format_version") != std::string::npos);
    CHECK(std::count(content.begin(), content.end(), '\n') == 1);
    ModelZoo back = load_zoo(path);
    CHECK(back.entries.empty());
}

TEST_CASE("dangling network reference is a referential integrity error") {
    auto dir = temp_dir("dangling");
    auto path = dir / "zoo.jsonl";
    fs::create_directories(dir / "zoo_data");
    {
        std::ofstream side(dir / "zoo_data" / "ds_dX.f32", std::ios::binary);
        float z[4] = {0, 0, 0, 0};
        side.write(reinterpret_cast<const char*>(z), sizeof(z));
    }
    std::ofstream os(path);
    os << R"({"format_version":1,"normalization_stats":null})" << "\n";
    os << R"({"dataset_id":"dX","network_id":"nX","accuracy":0.5,"norm_latency":0.0,"norm_params":0.0,)"
       << R"("dataset":{"id":"dX","class_count":2,"feature_dim":2,"labels":[0,1],"train_idx":[0],)"
       << R"("val_idx":[1],"probe_idx":[1],"features":{"path":"zoo_data/ds_dX.f32","count":4}}})"
       << "\n";
    os.close();
    CHECK_THROWS_WITH(load_zoo(path), Catch::Matchers::ContainsSubstring("nX"));
}

TEST_CASE("malformed json reports its line number") {
    auto dir = temp_dir("badline");
    auto path = dir / "zoo.jsonl";
    std::ofstream os(path);
    os << R"({"format_version":1,"normalization_stats":null})" << "\n";
    os << "{not json\n";
    os.close();
    CHECK_THROWS_WITH(load_zoo(path), Catch::Matchers::ContainsSubstring("line 2"));
}

TEST_CASE("duplicate (dataset, network) pairs are rejected at load") {
    auto dir = temp_dir("dup");
    auto src = dir / "zoo.jsonl";
    ModelZoo zoo = synth::build_full_zoo(small_cfg(2, 1));
    save_zoo(zoo, src);

    // duplicate the last entry line verbatim
    std::string content = slurp(src);
    auto pos = content.rfind('\n', content.size() - 2);
    std::string last_line = content.substr(pos + 1);
    std::ofstream(src, std::ios::app) << last_line;
    CHECK_THROWS_WITH(load_zoo(src), Catch::Matchers::ContainsSubstring("duplicate"));
}

TEST_CASE("accuracy 1.0 round-trips exactly") {
    auto dir = temp_dir("acc1");
    auto path = dir / "zoo.jsonl";
    ModelZoo zoo = synth::build_full_zoo(small_cfg(2, 1));
    zoo.entries[0].accuracy = 1.0;
    save_zoo(zoo, path);
    CHECK(slurp(path).find("\"accuracy\":1.0") != std::string::npos);
    ModelZoo back = load_zoo(path);
    CHECK(back.entries[0].accuracy == 1.0);
}

TEST_CASE("save/load round trip is identity and re-serialization is byte-identical") {
    auto dir_a = temp_dir("rt_a");
    auto dir_b = temp_dir("rt_b");
    ModelZoo zoo = synth::build_full_zoo(small_cfg(5, 10));
    REQUIRE(zoo.entries.size() == 50);

    save_zoo(zoo, dir_a / "zoo.jsonl");
    ModelZoo back = load_zoo(dir_a / "zoo.jsonl");
    CHECK(back == zoo);

    save_zoo(back, dir_b / "zoo.jsonl");
    CHECK(slurp(dir_a / "zoo.jsonl") == slurp(dir_b / "zoo.jsonl"));
    for (const auto& f : fs::directory_iterator(dir_a / "zoo_data")) {
        CHECK(slurp(f.path()) == slurp(dir_b / "zoo_data" / f.path().filename()));
    }
}

TEST_CASE("round trip holds over randomized generated zoos") {
    for (std::uint64_t seed : {3u, 4u, 5u}) {
        SynthConfig cfg = small_cfg(3, 2);
        cfg.rng_seed = seed;
        cfg.classes_max = 5;
        ModelZoo zoo = synth::build_full_zoo(cfg);
        auto dir = temp_dir("rt_prop_" + std::to_string(seed));
        save_zoo(zoo, dir / "z.jsonl");
        CHECK(load_zoo(dir / "z.jsonl") == zoo);
    }
}

TEST_CASE("normalize_resources maps extremes to 0 and 1") {
    ModelZoo zoo = synth::build_full_zoo(small_cfg(3, 3));

    auto patch = [&](std::size_t i, double latency, std::size_t params) {
        NetworkRecord& n = zoo.networks.at(zoo.entries[i].network_id);
        n.latency = latency;
        n.parameters.assign(params, 0.0);
        n.param_count = params;
    };
    patch(0, 2.0, 1000);
    patch(1, 4.0, 3000);
    patch(2, 6.0, 2000);
    for (std::size_t i = 3; i < zoo.entries.size(); ++i) patch(i, 3.0, 1500);

    ModelZoo out = normalize_resources(zoo);
    CHECK(out.entries[0].norm_latency == 0.0);
    CHECK(out.entries[1].norm_latency == 0.5);
    CHECK(out.entries[2].norm_latency == 1.0);
    CHECK(out.entries[0].norm_params == 0.0);
    CHECK(out.entries[1].norm_params == 1.0);
    CHECK(out.entries[2].norm_params == 0.5);

    SECTION("idempotent given stored stats") {
        ModelZoo again = normalize_resources(out);
        CHECK(again.stats == out.stats);
        for (std::size_t i = 0; i < again.entries.size(); ++i) {
            CHECK(again.entries[i].norm_latency == out.entries[i].norm_latency);
            CHECK(again.entries[i].norm_params == out.entries[i].norm_params);
        }
    }
}

TEST_CASE("equal raw values normalize to all zeros") {
    ModelZoo zoo = synth::build_full_zoo(small_cfg(2, 2));
    for (auto& [id, n] : zoo.networks) n.latency = 5.0;
    ModelZoo out = normalize_resources(zoo);
    for (const auto& e : out.entries) CHECK(e.norm_latency == 0.0);
}

TEST_CASE("normalize_resources rejects an empty zoo") {
    ModelZoo empty;
    CHECK_THROWS_AS(normalize_resources(empty), validation_error);
}

TEST_CASE("constraints must be positive") {
    Constraints c;
    c.max_params = 0;
    CHECK_THROWS_AS(c.validate(), validation_error);
    Constraints ok;
    ok.max_latency = 0.5;
    CHECK_NOTHROW(ok.validate());
    CHECK(ok.any());
    CHECK_FALSE(Constraints{}.any());
}

TEST_CASE("topology invariants are enforced") {
    RngStream rng(1);
    for (int i = 0; i < 20; ++i) {
        TopologyDescriptor t = synth::random_topology(rng);
        CHECK_NOTHROW(t.validate());
        auto flat = t.flatten();
        CHECK(flat.size() == 45);
        auto scaled = t.unit_scaled();
        for (double v : scaled) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(t.active_layers().size() == static_cast<std::size_t>(t.depth_sum()));
    }

    TopologyDescriptor bad = synth::random_topology(rng);
    bad.depths[0] = 2;
    bad.kernels[3] = 5;  // slot beyond the unit depth must stay 0
    CHECK_THROWS_AS(bad.validate(), validation_error);
}
