#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tanszoo/autodiff.hpp"
#include "tanszoo/encoders.hpp"
#include "tanszoo/predictor.hpp"
#include "tanszoo/retrieval.hpp"
#include "tanszoo/rng.hpp"
#include "tanszoo/zoo.hpp"

namespace tanszoo {

enum class NegAggregation : std::uint8_t { sum = 0, mean = 1 };

enum class TrainObjective : std::uint8_t { contrastive = 0, cosine_regression = 1 };

struct TrainConfig {
    std::size_t batch_size = 140;
    double margin = 0.5;            // alpha
    double lambda_surrogate = 1.0;  // lambda
    double lr = 1e-2;
    std::size_t epochs = 200;
    // mean keeps the positive pull and the per-negative push at equal weight;
    // the summed form lets the hinge saturate by uniform repulsion alone
    NegAggregation neg_aggregation = NegAggregation::mean;
    std::uint64_t rng_seed = 1;
    TrainObjective objective = TrainObjective::contrastive;
    double holdout_fraction = 0.2;          // zoo entries kept out of training batches
    std::size_t train_probes_per_class = 20;  // per-epoch query sample from the train split
    std::size_t predictor_hidden = 256;
    EncoderConfig encoder;

    void validate() const {
        if (margin <= 0.0 || lambda_surrogate < 0.0 || batch_size < 2) {
            throw validation_error("train config: need margin>0, lambda>=0, batch_size>=2");
        }
    }

    std::uint64_t fingerprint() const {
        std::ostringstream os;
        os << batch_size << '|' << margin << '|' << lambda_surrogate << '|' << lr << '|' << epochs << '|'
           << static_cast<int>(neg_aggregation) << '|' << rng_seed << '|' << static_cast<int>(objective)
           << '|' << holdout_fraction << '|' << train_probes_per_class << '|' << predictor_hidden << '|'
           << encoder.embed_dim << '|' << encoder.feature_dim << '|' << encoder.functional_dim << '|'
           << encoder.noise_probes << '|' << encoder.noise_scale << '|' << encoder.noise_seed << '|'
           << static_cast<int>(encoder.mode) << '|' << encoder.nonlinear_sigma;
        return fnv1a(os.str());
    }
};

namespace contrastive {

inline double aggregate(const std::vector<double>& negs, NegAggregation agg) {
    double s = 0.0;
    for (double v : negs) s += v;
    return agg == NegAggregation::sum ? s : s / static_cast<double>(negs.size());
}

// Hinge over similarity scores: max(0, margin - pos + A(negs)). The log-ratio
// form collapses to this because log(exp(a)/exp(b)) = a - b.
inline double hinge(double pos, const std::vector<double>& negs, double margin, NegAggregation agg) {
    if (negs.empty()) throw validation_error("contrastive loss: need at least one negative");
    const double v = margin - pos + aggregate(negs, agg);
    return v > 0.0 ? v : 0.0;
}

inline Tape::Ref hinge_t(Tape& t, Tape::Ref pos, const std::vector<Tape::Ref>& negs, double margin,
                         NegAggregation agg) {
    if (negs.empty()) throw validation_error("contrastive loss: need at least one negative");
    Tape::Ref acc = negs[0];
    for (std::size_t i = 1; i < negs.size(); ++i) acc = t.add(acc, negs[i]);
    if (agg == NegAggregation::mean) acc = t.scale(acc, 1.0 / static_cast<double>(negs.size()));
    return t.relu(t.add_const(t.sub(acc, pos), margin));
}

}  // namespace contrastive

// L_m: pull the query toward its paired model, push it from other tasks'.
inline double loss_m(const Tensor& q, const Tensor& m_pos, const std::vector<Tensor>& m_negs,
                     double margin, NegAggregation agg = NegAggregation::sum) {
    std::vector<double> negs;
    negs.reserve(m_negs.size());
    for (const auto& m : m_negs) negs.push_back(ops::cosine_fwd(q, m));
    return contrastive::hinge(ops::cosine_fwd(q, m_pos), negs, margin, agg);
}

// L_q: the symmetric direction, contrasting queries against a fixed model.
inline double loss_q(const Tensor& m, const Tensor& q_pos, const std::vector<Tensor>& q_negs,
                     double margin, NegAggregation agg = NegAggregation::sum) {
    return loss_m(m, q_pos, q_negs, margin, agg);
}

// One task inside a batch: a query sample, its paired model, and the true
// accuracy the surrogate regresses to.
struct TaskSample {
    std::string dataset_id;
    std::string network_id;
    Tensor probe_matrix;  // sorted rows, ready for the query encoder
    Tensor model_input;   // normalized [v_t; v_f], ablation already applied
    double accuracy = 0.0;
};

struct BatchLosses {
    double lm = 0.0, lq = 0.0, ls = 0.0, total = 0.0;
};

// Full objective: mean over tasks of L_m + L_q + lambda * L_s, with each
// task's negatives drawn from every other task in the batch. Gradients flow
// into theta, phi, and psi alike.
inline Tape::Ref batch_objective_t(Tape& t, const std::vector<TaskSample>& batch,
                                   QueryEncoderParams& theta, ModelEncoderParams& phi,
                                   PredictorParams& psi, const TrainConfig& cfg,
                                   BatchLosses* out = nullptr) {
    cfg.validate();
    const std::size_t n = batch.size();
    if (n < 2 && cfg.objective == TrainObjective::contrastive) {
        throw validation_error("batch_objective: contrastive batch needs >= 2 tasks");
    }

    Tape::Ref qw = t.leaf(theta.w), qb = t.leaf(theta.b);
    ModelEncoderRefs mrefs;
    mrefs.nonlinear = phi.nonlinear;
    if (phi.nonlinear) {
        mrefs.hidden_w = t.leaf(phi.hidden_w);
        mrefs.hidden_b = t.leaf(phi.hidden_b);
    }
    mrefs.w = t.leaf(phi.w);
    mrefs.b = t.leaf(phi.b);
    PredictorRefs prefs = bind_predictor(t, psi);

    std::vector<Tape::Ref> qs(n), ms(n);
    for (std::size_t i = 0; i < n; ++i) {
        qs[i] = encode_query_t(t, batch[i].probe_matrix, qw, qb);
        ms[i] = encode_model_t(t, batch[i].model_input, mrefs);
    }

    std::vector<std::vector<Tape::Ref>> cos(n, std::vector<Tape::Ref>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) cos[i][j] = t.cosine(qs[i], ms[j]);
    }

    Tape::Ref total{};
    double lm_sum = 0.0, lq_sum = 0.0, ls_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Tape::Ref task_loss{};
        if (cfg.objective == TrainObjective::contrastive) {
            std::vector<Tape::Ref> m_negs, q_negs;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                m_negs.push_back(cos[i][j]);  // query i vs other models
                q_negs.push_back(cos[j][i]);  // other queries vs model i
            }
            Tape::Ref lm = contrastive::hinge_t(t, cos[i][i], m_negs, cfg.margin, cfg.neg_aggregation);
            Tape::Ref lq = contrastive::hinge_t(t, cos[i][i], q_negs, cfg.margin, cfg.neg_aggregation);
            lm_sum += t.value(lm)[0];
            lq_sum += t.value(lq)[0];
            task_loss = t.add(lm, lq);
        } else {
            // plain similarity regression: maximize the positive pair only
            task_loss = t.scale(cos[i][i], -1.0);
            lm_sum += t.value(task_loss)[0];
        }
        if (cfg.lambda_surrogate > 0.0) {
            Tape::Ref pred = predict_t(t, qs[i], ms[i], prefs);
            Tape::Ref ls = surrogate_loss_t(t, pred, batch[i].accuracy);
            ls_sum += t.value(ls)[0];
            task_loss = t.add(task_loss, t.scale(ls, cfg.lambda_surrogate));
        }
        total = i == 0 ? task_loss : t.add(total, task_loss);
    }
    total = t.scale(total, 1.0 / static_cast<double>(n));
    if (out) {
        out->lm = lm_sum / static_cast<double>(n);
        out->lq = lq_sum / static_cast<double>(n);
        out->ls = ls_sum / static_cast<double>(n);
        out->total = t.value(total)[0];
    }
    return total;
}

inline double batch_objective(const std::vector<TaskSample>& batch, QueryEncoderParams& theta,
                              ModelEncoderParams& phi, PredictorParams& psi, const TrainConfig& cfg) {
    Tape t;
    return t.value(batch_objective_t(t, batch, theta, phi, psi, cfg))[0];
}

struct MetaTrainResult {
    QueryEncoderParams theta;
    ModelEncoderParams phi;
    PredictorParams psi;
    EncoderConfig encoder;
    std::vector<BatchLosses> trace;  // one row per epoch
    RetrievalMetrics final_metrics;  // held-out probe queries
    double predictor_holdout_mse = 0.0;
    double baseline_constant_mse = 0.0;  // constant mean-accuracy predictor
    std::vector<std::size_t> holdout_entries;  // indices into zoo.entries
    std::uint64_t fingerprint = 0;
};

namespace contrastive {

// Per-dataset entry indices, datasets in lexicographic order.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> entries_by_dataset(
    const ModelZoo& zoo) {
    std::map<std::string, std::vector<std::size_t>> grouped;
    for (std::size_t i = 0; i < zoo.entries.size(); ++i) {
        grouped[zoo.entries[i].dataset_id].push_back(i);
    }
    return {grouped.begin(), grouped.end()};
}

// Seeded per-epoch query sample: train_probes_per_class instances per class
// from the train split. Evaluation probes (the validation probe set) never
// appear here.
inline Tensor sample_query_probes(const DatasetRecord& d, std::size_t per_class, RngStream& rng) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(d.class_count));
    for (std::size_t idx : d.train_idx) {
        by_class[static_cast<std::size_t>(d.labels[idx])].push_back(idx);
    }
    std::vector<std::vector<double>> probes;
    for (auto& pool : by_class) {
        rng.shuffle(pool);
        const std::size_t take = std::min(per_class, pool.size());
        for (std::size_t i = 0; i < take; ++i) {
            probes.emplace_back(d.instance(pool[i]), d.instance(pool[i]) + d.feature_dim);
        }
    }
    return encoders::sorted_probe_matrix(probes);
}

}  // namespace contrastive

// Meta-training over the zoo's task distribution. Deterministic in
// cfg.rng_seed; a fraction of entries is held out of every batch and used to
// score the predictor afterwards.
inline MetaTrainResult meta_train(const ModelZoo& zoo, TrainConfig cfg) {
    cfg.validate();
    if (zoo.datasets.size() < 2) throw validation_error("meta_train: zoo too small (need >= 2 datasets)");
    if (cfg.encoder.feature_dim == 0) {
        cfg.encoder.feature_dim = zoo.datasets.begin()->second.feature_dim;
    }

    MetaTrainResult res;
    res.encoder = cfg.encoder;
    res.fingerprint = cfg.fingerprint();

    RngStream init_rng(mix_seed(cfg.rng_seed, "init"));
    res.theta = encoders::init_query_encoder(cfg.encoder, init_rng);
    res.phi = encoders::init_model_encoder(cfg.encoder, init_rng);
    res.psi = predictor::init_predictor(cfg.encoder.embed_dim, cfg.predictor_hidden, init_rng);

    // split entries into train/holdout per dataset, keeping at least one
    // training entry everywhere
    auto grouped = contrastive::entries_by_dataset(zoo);
    std::vector<std::vector<std::size_t>> train_groups;
    for (auto& [did, idxs] : grouped) {
        RngStream split_rng(mix_seed(cfg.rng_seed, "holdout", fnv1a(did)));
        std::vector<std::size_t> pool = idxs;
        split_rng.shuffle(pool);
        std::size_t hold = static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(pool.size()));
        hold = std::min(hold, pool.size() - 1);
        for (std::size_t i = 0; i < hold; ++i) res.holdout_entries.push_back(pool[i]);
        train_groups.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(hold), pool.end());
    }
    std::sort(res.holdout_entries.begin(), res.holdout_entries.end());

    // functional embeddings are fixed for the whole run: fixed noise, fixed nets
    std::map<std::string, Tensor> model_inputs;
    for (const auto& [nid, rec] : zoo.networks) {
        SynthNetwork net = SynthNetwork::from_record(rec);
        Tensor v_f = cfg.encoder.mode == EmbeddingMode::topology_only
                         ? Tensor({cfg.encoder.functional_dim})
                         : functional_embedding(net, res.phi.noise, cfg.encoder.functional_dim);
        model_inputs[nid] = encoders::model_encoder_input(rec.topology, v_f, cfg.encoder);
    }

    std::vector<Parameter*> params = res.theta.parameters();
    for (auto* p : res.phi.parameters()) params.push_back(p);
    for (auto* p : res.psi.parameters()) params.push_back(p);
    AdamOptimizer opt(params, cfg.lr);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream epoch_rng(mix_seed(cfg.rng_seed, "epoch", epoch));

        // one task per dataset, capped at batch_size datasets
        std::vector<std::size_t> dataset_order(train_groups.size());
        for (std::size_t i = 0; i < dataset_order.size(); ++i) dataset_order[i] = i;
        if (dataset_order.size() > cfg.batch_size) {
            epoch_rng.shuffle(dataset_order);
            dataset_order.resize(cfg.batch_size);
            std::sort(dataset_order.begin(), dataset_order.end());
        }

        std::vector<TaskSample> batch;
        batch.reserve(dataset_order.size());
        for (std::size_t gi : dataset_order) {
            const auto& [did, _] = grouped[gi];
            const auto& pool = train_groups[gi];
            const ZooEntry& e = zoo.entries[pool[epoch_rng.below(pool.size())]];
            TaskSample s;
            s.dataset_id = did;
            s.network_id = e.network_id;
            s.accuracy = e.accuracy;
            s.probe_matrix = contrastive::sample_query_probes(zoo.dataset(did),
                                                              cfg.train_probes_per_class, epoch_rng);
            s.model_input = model_inputs.at(e.network_id);
            batch.push_back(std::move(s));
        }

        opt.zero_grad();
        Tape tape;
        BatchLosses losses;
        Tape::Ref obj = batch_objective_t(tape, batch, res.theta, res.phi, res.psi, cfg, &losses);
        if (!std::isfinite(losses.total) || losses.total > 1e6) {
            throw divergence_error("meta_train: loss diverged at epoch " + std::to_string(epoch));
        }
        tape.backward(obj);
        opt.step();
        res.trace.push_back(losses);
    }

    // final held-out-probe retrieval metrics and predictor holdout MSE
    EmbeddingIndex idx = build_index(zoo, res.theta, res.phi, res.psi, cfg.encoder, res.fingerprint);
    res.final_metrics = evaluate_retrieval(idx, zoo);

    double train_acc_sum = 0.0;
    std::size_t train_n = 0;
    for (const auto& pool : train_groups) {
        for (std::size_t i : pool) {
            train_acc_sum += zoo.entries[i].accuracy;
            ++train_n;
        }
    }
    const double mean_acc = train_n ? train_acc_sum / static_cast<double>(train_n) : 0.5;

    if (!res.holdout_entries.empty()) {
        double mse = 0.0, base = 0.0;
        for (std::size_t i : res.holdout_entries) {
            const ZooEntry& e = zoo.entries[i];
            Tensor q = encode_query(zoo.dataset(e.dataset_id).probe_vectors(), res.theta);
            Tensor m = encoders::sigma_forward(model_inputs.at(e.network_id), res.phi);
            mse += surrogate_loss(predict(q, m, res.psi), e.accuracy);
            base += surrogate_loss(mean_acc, e.accuracy);
        }
        res.predictor_holdout_mse = mse / static_cast<double>(res.holdout_entries.size());
        res.baseline_constant_mse = base / static_cast<double>(res.holdout_entries.size());
    }
    return res;
}

}  // namespace tanszoo
