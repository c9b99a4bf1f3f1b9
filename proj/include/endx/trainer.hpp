#pragma once

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "endx/checkpoint.hpp"
#include "endx/data.hpp"
#include "endx/evaluation.hpp"
#include "endx/losses.hpp"
#include "endx/model.hpp"
#include "endx/params.hpp"
#include "endx/vocab.hpp"

namespace endx {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    ModelConfig model;
    OptimizerConfig optimizer;
    int epochs = 30;
    int batch_size = 32;
    std::uint64_t seed = 0;
    AblationMask ablation;  // switches over the four alignment directions

    void validate() const {
        if (epochs < 1) fail("train config: epochs must be >= 1");
        if (batch_size < 2) fail("train config: batch size must be >= 2");
        model.validate();
        optimizer.validate();
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["model"] = model.to_json();
        j["optimizer"] = {{"learning_rate", optimizer.learning_rate},
                          {"beta1", optimizer.beta1},
                          {"beta2", optimizer.beta2},
                          {"epsilon", optimizer.epsilon},
                          {"weight_decay", optimizer.weight_decay}};
        j["epochs"] = epochs;
        j["batch_size"] = batch_size;
        j["seed"] = seed;
        j["ablation"] = ablation.active;
        return j;
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        detail::require_keys(j, "train config",
                             {"model", "optimizer", "epochs", "batch_size",
                              "seed", "ablation"});
        TrainConfig cfg;
        if (j.contains("model")) cfg.model = ModelConfig::from_json(j.at("model"));
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            detail::require_keys(o, "optimizer",
                                 {"learning_rate", "beta1", "beta2", "epsilon",
                                  "weight_decay"});
            cfg.optimizer.learning_rate =
                detail::get_or(o, "learning_rate", cfg.optimizer.learning_rate);
            cfg.optimizer.beta1 = detail::get_or(o, "beta1", cfg.optimizer.beta1);
            cfg.optimizer.beta2 = detail::get_or(o, "beta2", cfg.optimizer.beta2);
            cfg.optimizer.epsilon =
                detail::get_or(o, "epsilon", cfg.optimizer.epsilon);
            cfg.optimizer.weight_decay =
                detail::get_or(o, "weight_decay", cfg.optimizer.weight_decay);
        }
        cfg.epochs = detail::get_or(j, "epochs", cfg.epochs);
        cfg.batch_size = detail::get_or(j, "batch_size", cfg.batch_size);
        cfg.seed = detail::get_or(j, "seed", cfg.seed);
        if (j.contains("ablation"))
            cfg.ablation.active = j.at("ablation").get<std::array<bool, 4>>();
        return cfg;
    }
};

/// Effective GAM term weights for an epoch: each target ramps linearly over
/// the warmup, so epoch 0 contributes nothing and epochs past the warmup use
/// the configured targets unchanged.
inline std::array<double, 4> gam_weights_for_epoch(const GAMConfig& gam,
                                                   int epoch) {
    std::array<double, 4> w{};
    for (std::size_t d = 0; d < 4; ++d)
        w[d] = warmup_weight(epoch, gam.warmup_epochs, gam.targets[d]);
    return w;
}

// ---------------------------------------------------------------------------
// One optimization step
// ---------------------------------------------------------------------------

/// Token ids for one aligned batch: (question ids, answer ids) per pair.
using TokenBatch = std::vector<std::pair<std::vector<int>, std::vector<int>>>;

struct StepOutcome {
    double loss = 0.0;
    double l_dual = 0.0;
    double l_cross = std::numeric_limits<double>::quiet_NaN();
    /// Unweighted KL per direction (a|q, q|q, q|a, a|a); NaN when the term
    /// was skipped (warmup zero, ablated, or dual-only).
    std::array<double, 4> gam{std::numeric_limits<double>::quiet_NaN(),
                              std::numeric_limits<double>::quiet_NaN(),
                              std::numeric_limits<double>::quiet_NaN(),
                              std::numeric_limits<double>::quiet_NaN()};
    std::array<double, 4> gam_weights{};
    double lr = 0.0;
};

/// Forward both towers on one batch, backpropagate the alpha-weighted total,
/// and apply one AdamW update. The cross tower runs only when some loss
/// consumes it; its gradients come exclusively from the retrieval term because
/// the alignment loss detaches its teacher side.
template <typename S>
StepOutcome train_step(const TokenBatch& batch, ParameterStore<S>& params,
                       const TrainConfig& cfg, int epoch,
                       std::uint64_t global_step) {
    cfg.validate();
    if (batch.size() < 2) fail("train_step: batch must hold at least 2 pairs");

    Tape<S> t;
    TapeBinding<S> p(t, params);

    Var penalty;
    std::vector<Var> q_rows, a_rows;
    q_rows.reserve(batch.size());
    a_rows.reserve(batch.size());
    for (const auto& [q_ids, a_ids] : batch) {
        q_rows.push_back(embed_question_dual(t, q_ids, cfg.model, p, &penalty));
        a_rows.push_back(embed_answer_dual(t, a_ids, cfg.model, p, &penalty));
    }
    Var q_dual = stack_embeddings(t, q_rows);
    Var a_dual = stack_embeddings(t, a_rows);
    Var l_dual = dual_loss(t, q_dual, a_dual);

    StepOutcome out;
    out.gam_weights = gam_weights_for_epoch(cfg.model.gam, epoch);

    Var l_cross, l_gam;
    if (cfg.model.uses_cross_tower()) {
        std::vector<Var> qc_rows, ac_rows;
        qc_rows.reserve(batch.size());
        ac_rows.reserve(batch.size());
        for (const auto& [q_ids, a_ids] : batch) {
            auto [qc, ac] = embed_pair_cross(t, q_ids, a_ids, cfg.model, p);
            qc_rows.push_back(qc);
            ac_rows.push_back(ac);
        }
        Var q_cross = stack_embeddings(t, qc_rows);
        Var a_cross = stack_embeddings(t, ac_rows);
        if (cfg.model.weights.cross > 0)
            l_cross = cross_loss(t, q_cross, a_cross);
        if (cfg.model.weights.gam > 0) {
            GamBreakdown gam = gam_loss(t, q_dual, a_dual, q_cross, a_cross,
                                        cfg.model.gam, out.gam_weights,
                                        cfg.ablation);
            l_gam = gam.total;
            for (std::size_t d = 0; d < 4; ++d)
                if (gam.terms[d].valid())
                    out.gam[d] =
                        static_cast<double>(t.value(gam.terms[d])(0, 0));
        }
    }

    Var total = total_loss(t, l_dual, l_cross, l_gam, cfg.model.weights);
    if (penalty.valid()) total = add(t, total, penalty);

    out.l_dual = static_cast<double>(t.value(l_dual)(0, 0));
    if (l_cross.valid())
        out.l_cross = static_cast<double>(t.value(l_cross)(0, 0));
    out.loss = static_cast<double>(t.value(total)(0, 0));
    out.lr = schedule_value(cfg.optimizer.schedule, global_step,
                            cfg.optimizer.total_steps,
                            cfg.optimizer.learning_rate);

    auto grads = gradient_of(t, total, p.bound(), params);
    optimizer_step(params, grads, cfg.optimizer, global_step);
    return out;
}

// ---------------------------------------------------------------------------
// Full training runs
// ---------------------------------------------------------------------------

struct EpochSummary {
    int epoch = 0;
    double val_mrr = 0.0;
    double val_r1 = 0.0;
    double val_r5 = 0.0;
    std::array<double, 4> gam_weights{};
};

struct TrainResult {
    std::string best_checkpoint;   // highest validation R@1, earliest epoch
    std::string final_checkpoint;  // parameters after the last step
    std::string log_file;          // JSON-lines, one record per step/epoch
    int best_epoch = -1;
    double best_val_r1 = -1.0;
    std::vector<EpochSummary> epochs;
};

/// Trains on the train split, validates once per epoch with the dual tower
/// only, and keeps the checkpoint with the best validation R@1 (earlier
/// epoch wins ties). Writes into out_dir: config.json, vocab.txt,
/// train_log.jsonl, best.ckpt, final.ckpt.
TrainResult train(const RetrievalDataset& train_ds,
                  const RetrievalDataset& val_ds, const Vocabulary& vocab,
                  const TrainConfig& cfg, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Ablation matrix
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;           // "full", "-L_q|q", …, "dual-only"
    MetricsReport metrics;      // on the evaluation split
    std::string checkpoint;     // the run's selected checkpoint
};

/// Trains six configurations — full, one run per removed alignment
/// direction, and the dual-only baseline — with the seed held fixed, then
/// evaluates each selected checkpoint on eval_ds.
std::vector<AblationRow> ablation_matrix(const RetrievalDataset& train_ds,
                                         const RetrievalDataset& val_ds,
                                         const RetrievalDataset& eval_ds,
                                         const Vocabulary& vocab,
                                         const TrainConfig& base,
                                         const std::string& out_dir);

/// name,mrr,r1,r5 rows.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace endx
