#include "endx/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "endx/instrumentation.hpp"

namespace endx {
namespace {

namespace fs = std::filesystem;

std::map<int, std::vector<int>> tokenize_questions(const RetrievalDataset& ds,
                                                   const Vocabulary& vocab,
                                                   std::size_t max_len) {
    std::map<int, std::vector<int>> out;
    for (const Question& q : ds.questions)
        out[q.id] = tokenize(q.text, vocab, max_len);
    return out;
}

std::map<int, std::vector<int>> tokenize_answers(const RetrievalDataset& ds,
                                                 const Vocabulary& vocab,
                                                 std::size_t max_len) {
    std::map<int, std::vector<int>> out;
    for (const AnswerSentence& a : ds.answers)
        out[a.id] = tokenize(a.text, vocab, max_len);
    return out;
}

void append_jsonl(std::ofstream& log, const nlohmann::json& record) {
    log << record.dump() << '\n';
}

MetricsReport validate_dual_only(const RetrievalDataset& val_ds,
                                 const ParameterStore<float>& params,
                                 const ModelConfig& model,
                                 const Vocabulary& vocab,
                                 std::uint64_t global_step) {
    Checkpoint snapshot;
    snapshot.config = model;
    snapshot.vocab_hash = vocab.content_hash();
    snapshot.train_steps = global_step;
    snapshot.params = params;
    AnswerIndex index = embed_corpus(val_ds.answers, snapshot, vocab);
    return evaluate_retrieval(val_ds, index, snapshot, vocab);
}

}  // namespace

TrainResult train(const RetrievalDataset& train_ds,
                  const RetrievalDataset& val_ds, const Vocabulary& vocab,
                  const TrainConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    if (train_ds.pairs.empty()) fail("train: training split has no pairs");
    if (val_ds.questions.empty()) fail("train: validation split is empty");
    fs::create_directories(out_dir);

    // Auditability: the exact configuration and vocabulary used by the run.
    {
        std::ofstream cfg_out(fs::path(out_dir) / "config.json");
        if (!cfg_out) fail(out_dir + ": cannot write config.json");
        cfg_out << cfg.to_json().dump(2) << '\n';
    }
    vocab.save(fs::path(out_dir) / "vocab.txt");

    const auto q_tokens = tokenize_questions(
        train_ds, vocab,
        static_cast<std::size_t>(cfg.model.encoder.max_question_len));
    const auto a_tokens = tokenize_answers(
        train_ds, vocab,
        static_cast<std::size_t>(cfg.model.encoder.max_answer_len));

    ParameterStore<float> params;
    register_parameters(params, cfg.model, cfg.seed);

    TrainResult result;
    result.log_file = (fs::path(out_dir) / "train_log.jsonl").string();
    result.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
    result.final_checkpoint = (fs::path(out_dir) / "final.ckpt").string();
    std::ofstream log(result.log_file, std::ios::trunc);
    if (!log) fail(result.log_file + ": cannot open for writing");

    std::uint64_t global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches =
            batch_iter(train_ds, cfg.batch_size, cfg.seed, epoch);
        if (batches.empty())
            fail("train: batch size " + std::to_string(cfg.batch_size) +
                 " yields no full batch from " +
                 std::to_string(train_ds.pairs.size()) + " pairs");
        std::array<double, 4> epoch_weights{};
        for (const auto& batch_pairs : batches) {
            TokenBatch batch;
            batch.reserve(batch_pairs.size());
            for (const QAPair& pr : batch_pairs)
                batch.emplace_back(q_tokens.at(pr.question_id),
                                   a_tokens.at(pr.answer_id));
            StepOutcome step =
                train_step(batch, params, cfg, epoch, global_step);
            epoch_weights = step.gam_weights;

            nlohmann::json rec;
            rec["step"] = global_step;
            rec["epoch"] = epoch;
            rec["loss"] = step.loss;
            rec["l_dual"] = step.l_dual;
            if (!std::isnan(step.l_cross)) rec["l_cross"] = step.l_cross;
            // Directions index as a|q, q|q, q|a, a|a; skipped terms are
            // absent from the record rather than logged as zero.
            static constexpr const char* kTermKeys[4] = {"l_aq", "l_qq",
                                                         "l_qa", "l_aa"};
            for (std::size_t d = 0; d < 4; ++d)
                if (!std::isnan(step.gam[d])) rec[kTermKeys[d]] = step.gam[d];
            rec["lr"] = step.lr;
            append_jsonl(log, rec);
            ++global_step;
        }

        MetricsReport val = validate_dual_only(val_ds, params, cfg.model,
                                               vocab, global_step);
        EpochSummary summary;
        summary.epoch = epoch;
        summary.val_mrr = val.mrr;
        summary.val_r1 = val.recall.at(1);
        summary.val_r5 = val.recall.at(5);
        summary.gam_weights = gam_weights_for_epoch(cfg.model.gam, epoch);
        result.epochs.push_back(summary);

        nlohmann::json rec;
        rec["epoch"] = epoch;
        rec["val_mrr"] = summary.val_mrr;
        rec["val_r1"] = summary.val_r1;
        rec["val_r5"] = summary.val_r5;
        rec["gam_weights"] = summary.gam_weights;
        append_jsonl(log, rec);

        if (summary.val_r1 > result.best_val_r1) {  // ties keep the earlier
            result.best_val_r1 = summary.val_r1;
            result.best_epoch = epoch;
            save_checkpoint(params, cfg.model, vocab.content_hash(),
                            global_step, result.best_checkpoint);
        }
    }

    save_checkpoint(params, cfg.model, vocab.content_hash(), global_step,
                    result.final_checkpoint);
    log.flush();
    if (!log) fail(result.log_file + ": write failed");
    return result;
}

std::vector<AblationRow> ablation_matrix(const RetrievalDataset& train_ds,
                                         const RetrievalDataset& val_ds,
                                         const RetrievalDataset& eval_ds,
                                         const Vocabulary& vocab,
                                         const TrainConfig& base,
                                         const std::string& out_dir) {
    base.validate();
    if (!base.model.uses_cross_tower())
        fail("ablation_matrix: the base config must enable the cross tower");

    struct Variant {
        const char* name;
        const char* dir;
        int masked_direction;  // -1 = none
        bool dual_only;
    };
    static constexpr Variant kVariants[] = {
        {"full", "run_full", -1, false},
        {"-L_q|q", "run_no_qq", static_cast<int>(Direction::q_given_q), false},
        {"-L_a|a", "run_no_aa", static_cast<int>(Direction::a_given_a), false},
        {"-L_q|a", "run_no_qa", static_cast<int>(Direction::q_given_a), false},
        {"-L_a|q", "run_no_aq", static_cast<int>(Direction::a_given_q), false},
        {"dual-only", "run_dual_only", -1, true},
    };

    std::vector<AblationRow> rows;
    for (const Variant& variant : kVariants) {
        TrainConfig cfg = base;  // seed held fixed across configurations
        if (variant.masked_direction >= 0)
            cfg.ablation.active[static_cast<std::size_t>(
                variant.masked_direction)] = false;
        if (variant.dual_only) {
            cfg.model.weights.cross = 0.0;
            cfg.model.weights.gam = 0.0;
        }
        const std::string run_dir =
            (std::filesystem::path(out_dir) / variant.dir).string();
        TrainResult run = train(train_ds, val_ds, vocab, cfg, run_dir);

        Checkpoint best = load_checkpoint(run.best_checkpoint);
        AnswerIndex index = embed_corpus(eval_ds.answers, best, vocab);
        AblationRow row;
        row.name = variant.name;
        row.checkpoint = run.best_checkpoint;
        row.metrics = evaluate_retrieval(eval_ds, index, best, vocab);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "name,mrr,r1,r5\n";
    char buf[96];
    for (const AblationRow& row : rows) {
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f\n", row.metrics.mrr,
                      row.metrics.recall.at(1), row.metrics.recall.at(5));
        out += row.name;
        out += buf;
    }
    return out;
}

}  // namespace endx
