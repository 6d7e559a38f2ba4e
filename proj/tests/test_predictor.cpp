#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tanszoo/predictor.hpp"

using namespace tanszoo;

namespace {

Tensor unit_vec(RngStream& rng, std::size_t d) {
    Tensor t({d});
    for (std::size_t i = 0; i < d; ++i) t[i] = rng.normal();
    return ops::l2_normalize_fwd(t);
}

}  // namespace

TEST_CASE("zero-initialized predictor outputs 0.5 everywhere") {
    PredictorParams p;
    p.fc_w = Parameter(Tensor({16, 8}), "fc_w");
    p.fc_b = Parameter(Tensor({8}), "fc_b");
    p.head_w = Parameter(Tensor({8, 1}), "head_w");
    p.head_b = Parameter(Tensor({1}), "head_b");

    RngStream rng(1);
    for (int i = 0; i < 5; ++i) {
        CHECK(predict(unit_vec(rng, 8), unit_vec(rng, 8), p) == 0.5);
    }
}

TEST_CASE("deterministic mode repeats exactly and stays inside (0,1)") {
    RngStream rng(2);
    PredictorParams p = predictor::init_predictor(16, 32, rng);
    Tensor q = unit_vec(rng, 16), m = unit_vec(rng, 16);
    const double a = predict(q, m, p);
    CHECK(a == predict(q, m, p));
    CHECK(a > 0.0);
    CHECK(a < 1.0);

    CHECK_THROWS_AS(predict(unit_vec(rng, 8), m, p), validation_error);
}

TEST_CASE("dropout sampling: 10-sample mean sits within 3 sigma of a large-sample estimate") {
    RngStream rng(3);
    PredictorParams p = predictor::init_predictor(16, 64, rng, 0.5);
    Tensor q = unit_vec(rng, 16), m = unit_vec(rng, 16);

    const int big_n = 10000;
    std::vector<double> big(big_n);
    RngStream big_rng(mix_seed(42, "mc_big"));
    for (auto& v : big) v = predict(q, m, p, PredictMode::mc_dropout, &big_rng);
    double mean = 0.0;
    for (double v : big) mean += v;
    mean /= big_n;
    double var = 0.0;
    for (double v : big) var += (v - mean) * (v - mean);
    var /= (big_n - 1);

    RngStream small_rng(mix_seed(42, "mc_small"));
    double small_mean = 0.0;
    for (int i = 0; i < 10; ++i) small_mean += predict(q, m, p, PredictMode::mc_dropout, &small_rng);
    small_mean /= 10.0;

    const double sigma = std::sqrt(var / 10.0);
    CHECK(std::abs(small_mean - mean) <= 3.0 * sigma);

    CHECK_THROWS_AS(predict(q, m, p, PredictMode::mc_dropout, nullptr), validation_error);
}

TEST_CASE("surrogate loss hand values and gradient") {
    CHECK(surrogate_loss(0.7, 0.7) == 0.0);
    CHECK(surrogate_loss(0.2, 0.7) == Catch::Approx(0.25));

    RngStream rng(4);
    PredictorParams p = predictor::init_predictor(8, 16, rng);
    Parameter q(unit_vec(rng, 8), "q");
    Parameter m(unit_vec(rng, 8), "m");
    std::vector<Parameter*> params = {&q, &m};
    for (auto* pp : p.parameters()) params.push_back(pp);
    double err = check_gradients(params, [&](Tape& t) {
        PredictorRefs refs = bind_predictor(t, p);
        auto pred = predict_t(t, t.leaf(q), t.leaf(m), refs);
        return surrogate_loss_t(t, pred, 0.63);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("taped predictor forward equals the plain one") {
    RngStream rng(5);
    PredictorParams p = predictor::init_predictor(12, 24, rng);
    Tensor q = unit_vec(rng, 12), m = unit_vec(rng, 12);
    Tape t;
    PredictorRefs refs = bind_predictor(t, p);
    auto pred = predict_t(t, t.constant(q), t.constant(m), refs);
    CHECK(t.value(pred)[0] == predict(q, m, p));
}

TEST_CASE("rerank_topk hand cases") {
    RngStream rng(6);
    PredictorParams p = predictor::init_predictor(8, 16, rng);
    Tensor q = unit_vec(rng, 8);

    auto make = [&](const std::string& id, double sim) {
        return RerankCandidate{id, sim, unit_vec(rng, 8), std::nullopt};
    };
    std::vector<RerankCandidate> cands = {make("a", 0.9), make("b", 0.8), make("c", 0.7), make("d", 0.6)};

    SECTION("K=1 leaves the order unchanged") {
        auto copy = cands;
        rerank_topk(copy, q, p, 1);
        for (std::size_t i = 0; i < cands.size(); ++i) CHECK(copy[i].id == cands[i].id);
    }

    SECTION("constant predictor preserves the similarity order") {
        PredictorParams zero;
        zero.fc_w = Parameter(Tensor({16, 4}), "fc_w");
        zero.fc_b = Parameter(Tensor({4}), "fc_b");
        zero.head_w = Parameter(Tensor({4, 1}), "head_w");
        zero.head_b = Parameter(Tensor({1}), "head_b");
        auto copy = cands;
        rerank_topk(copy, q, zero, 4);
        for (std::size_t i = 0; i < cands.size(); ++i) {
            CHECK(copy[i].id == cands[i].id);
            CHECK(copy[i].predicted_accuracy.has_value());
        }
    }

    SECTION("an oracle predictor sorts the top K by true accuracy") {
        // encode the "true" accuracy into the first embedding coordinate and
        // use a handcrafted predictor that reads it back monotonically
        std::vector<double> truth = {0.3, 0.9, 0.6, 0.1};
        auto copy = cands;
        for (std::size_t i = 0; i < copy.size(); ++i) {
            copy[i].embedding.fill(0.0);
            copy[i].embedding[0] = truth[i];
        }
        PredictorParams oracle;
        oracle.fc_w = Parameter(Tensor({16, 1}), "fc_w");
        oracle.fc_w.value.at(8, 0) = 1.0;  // pick out m[0]
        oracle.fc_b = Parameter(Tensor({1}), "fc_b");
        oracle.head_w = Parameter(Tensor({1, 1}), "head_w");
        oracle.head_w.value[0] = 1.0;
        oracle.head_b = Parameter(Tensor({1}), "head_b");
        rerank_topk(copy, q, oracle, 4);
        CHECK(copy[0].id == "b");
        CHECK(copy[1].id == "c");
        CHECK(copy[2].id == "a");
        CHECK(copy[3].id == "d");
    }

    SECTION("K below list size only reorders the head") {
        std::vector<RerankCandidate> five = {make("a", 0.9), make("b", 0.8), make("c", 0.7),
                                             make("d", 0.6), make("e", 0.5)};
        auto copy = five;
        rerank_topk(copy, q, p, 3);
        CHECK(copy[3].id == "d");
        CHECK(copy[4].id == "e");
        std::set<std::string> head = {copy[0].id, copy[1].id, copy[2].id};
        CHECK(head == std::set<std::string>{"a", "b", "c"});
    }

    CHECK_THROWS_AS(rerank_topk(cands, q, p, 0), validation_error);
}
