#include "endx/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "endx/checkpoint.hpp"
#include "endx/data.hpp"
#include "endx/evaluation.hpp"
#include "endx/trainer.hpp"
#include "endx/vocab.hpp"

namespace endx {
namespace {

namespace fs = std::filesystem;

TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(path + ": cannot open config file");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(path + ": not valid JSON: " + e.what());
    }
    TrainConfig cfg = TrainConfig::from_json(doc);
    cfg.validate();
    return cfg;
}

/// Vocabulary of the training split, capped at the model's embedding rows so
/// every token id stays inside the table.
Vocabulary build_vocabulary(const RetrievalDataset& ds, int vocab_size) {
    std::vector<std::string> texts;
    texts.reserve(ds.questions.size() + ds.answers.size());
    for (const Question& q : ds.questions) texts.push_back(q.text);
    for (const AnswerSentence& a : ds.answers) texts.push_back(a.text);
    return Vocabulary::build(texts, static_cast<std::size_t>(vocab_size));
}

Vocabulary load_vocabulary_checked(const std::string& path,
                                   const Checkpoint& ckpt, std::ostream& err) {
    Vocabulary vocab = Vocabulary::load(path);
    if (vocab.content_hash() != ckpt.vocab_hash)
        err << "warning: " << path
            << ": vocabulary fingerprint differs from the one the checkpoint "
               "was trained with; scores may be meaningless\n";
    return vocab;
}

struct IngestArgs {
    std::string input, output;
    std::string candidates = "answers";
};

int cmd_ingest(const IngestArgs& a, std::ostream& out, std::ostream& err) {
    const auto parsed = parse_rc_json(a.input);
    err << "parsed " << parsed.size() << " paragraphs from " << a.input
        << "\n";
    const ReqaBuild build =
        build_reqa(parsed, a.candidates == "all-sentences");
    if (build.skipped > 0)
        err << "warning: skipped " << build.skipped
            << " records whose answer offset matched no sentence\n";
    write_reqa_jsonl(build.dataset, a.output);
    const DatasetStats stats = dataset_stats(build.dataset);
    const std::string stats_path = a.output + ".stats.json";
    write_stats_json(stats, stats_path);
    err << "wrote " << build.dataset.pairs.size() << " pairs to " << a.output
        << "\n";

    nlohmann::json doc;
    doc["dataset"] = a.output;
    doc["stats"] = stats_path;
    doc["questions"] = stats.questions;
    doc["answers"] = stats.answers;
    doc["pairs"] = stats.pairs;
    doc["answers_per_question"] = stats.answers_per_question;
    doc["questions_per_answer"] = stats.questions_per_answer;
    doc["skipped"] = build.skipped;
    out << doc.dump(2) << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, config, out_dir, val_data;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    // Configuration problems must surface before any compute or data I/O.
    const TrainConfig cfg = load_train_config(a.config);

    RetrievalDataset train_ds, val_ds;
    if (a.val_data.empty()) {
        std::tie(train_ds, val_ds) =
            make_splits(read_reqa_jsonl(a.data), cfg.seed);
        err << "split " << a.data << " into " << train_ds.pairs.size()
            << " train / " << val_ds.pairs.size() << " validation pairs\n";
    } else {
        train_ds = read_reqa_jsonl(a.data);
        val_ds = read_reqa_jsonl(a.val_data);
    }
    const Vocabulary vocab = build_vocabulary(train_ds, cfg.model.vocab_size);
    err << "vocabulary: " << vocab.size() << " ids\n";

    const TrainResult result = train(train_ds, val_ds, vocab, cfg, a.out_dir);
    err << "best epoch " << result.best_epoch << " (validation R@1 "
        << result.best_val_r1 << ")\n";

    nlohmann::json doc;
    doc["best_checkpoint"] = result.best_checkpoint;
    doc["final_checkpoint"] = result.final_checkpoint;
    doc["log"] = result.log_file;
    doc["best_epoch"] = result.best_epoch;
    doc["best_val_r1"] = result.best_val_r1;
    doc["epochs"] = result.epochs.size();
    out << doc.dump(2) << "\n";
    return 0;
}

struct EvalArgs {
    std::string data, checkpoint, vocab, index;
    int min_questions = 0;  // 0: no subsetting
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const Vocabulary vocab = load_vocabulary_checked(a.vocab, ckpt, err);
    RetrievalDataset ds = read_reqa_jsonl(a.data);
    if (a.min_questions >= 1) {
        ds = one_to_many_subset(ds, a.min_questions);
        if (ds.questions.empty())
            fail("empty subset: no answer has at least " +
                 std::to_string(a.min_questions) + " matched questions");
        err << "subset (answers with >= " << a.min_questions
            << " questions): " << ds.questions.size() << " questions over "
            << ds.answers.size() << " answers\n";
    }

    const std::uint64_t ckpt_hash = checkpoint_file_hash(a.checkpoint);
    AnswerIndex index;
    if (a.index.empty()) {
        index = embed_corpus(ds.answers, ckpt, vocab, ckpt_hash,
                             ds.content_hash());
    } else {
        bool hit = false;
        index = ensure_answer_index(ds.answers, ckpt, vocab, ckpt_hash,
                                    ds.content_hash(), a.index, &hit);
        err << (hit ? "answer index: cache hit at "
                    : "answer index: rebuilt at ")
            << a.index << "\n";
    }

    MetricsReport report = evaluate_retrieval(ds, index, ckpt, vocab);
    report.subset_min_questions = std::max(a.min_questions, 1);
    out << report.to_json() << "\n";
    return 0;
}

struct QueryArgs {
    std::string checkpoint, vocab, index, question;
    int top = 5;
};

int cmd_query(const QueryArgs& a, std::ostream& out, std::ostream& err) {
    if (!fs::exists(a.index))
        fail(a.index +
             ": no answer index here; build one first with "
             "'endx eval --build-index " +
             a.index + " ...'");
    const AnswerIndex index = load_answer_index(a.index);
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const Vocabulary vocab = load_vocabulary_checked(a.vocab, ckpt, err);
    if (index.checkpoint_hash != checkpoint_file_hash(a.checkpoint))
        err << "warning: " << a.index
            << ": index was built from a different checkpoint; scores may "
               "be meaningless\n";

    const auto ranked = rank_answers(a.question, index, ckpt, vocab);
    std::map<int, const std::string*> text_of;
    for (std::size_t i = 0; i < index.answer_ids.size(); ++i)
        text_of[index.answer_ids[i]] = &index.texts[i];

    const std::size_t n =
        std::min<std::size_t>(static_cast<std::size_t>(a.top), ranked.size());
    nlohmann::json results = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        results.push_back({{"answer_id", ranked[i].id},
                           {"score", ranked[i].score},
                           {"text", *text_of.at(ranked[i].id)}});
    }
    nlohmann::json doc;
    doc["question"] = a.question;
    doc["results"] = results;
    out << doc.dump(2) << "\n";
    return 0;
}

struct StatsArgs {
    std::string data, output;
};

int cmd_stats(const StatsArgs& a, std::ostream& out, std::ostream&) {
    const DatasetStats stats = dataset_stats(read_reqa_jsonl(a.data));
    if (!a.output.empty()) write_stats_json(stats, a.output);
    out << stats_to_json(stats) << "\n";
    return 0;
}

struct AblateArgs {
    std::string data, config, out_dir, eval_data;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
    const TrainConfig base = load_train_config(a.config);
    RetrievalDataset train_ds, val_ds;
    std::tie(train_ds, val_ds) = make_splits(read_reqa_jsonl(a.data),
                                             base.seed);
    const RetrievalDataset eval_ds =
        a.eval_data.empty() ? val_ds : read_reqa_jsonl(a.eval_data);
    const Vocabulary vocab = build_vocabulary(train_ds, base.model.vocab_size);

    err << "training 6 configurations into " << a.out_dir << "\n";
    const auto rows =
        ablation_matrix(train_ds, val_ds, eval_ds, vocab, base, a.out_dir);
    const std::string csv_path =
        (fs::path(a.out_dir) / "ablation.csv").string();
    {
        std::ofstream csv(csv_path, std::ios::binary);
        if (!csv) fail(csv_path + ": cannot open for writing");
        csv << ablation_csv(rows);
        if (!csv) fail(csv_path + ": write failed");
    }

    nlohmann::json table = nlohmann::json::array();
    for (const AblationRow& row : rows)
        table.push_back({{"name", row.name},
                         {"mrr", row.metrics.mrr},
                         {"r1", row.metrics.recall.at(1)},
                         {"r5", row.metrics.recall.at(5)},
                         {"checkpoint", row.checkpoint}});
    nlohmann::json doc;
    doc["csv"] = csv_path;
    doc["rows"] = table;
    out << doc.dump(2) << "\n";
    return 0;
}

struct SimmatrixArgs {
    std::string data, checkpoint, vocab, output;
    std::string what = "questions";
};

int cmd_simmatrix(const SimmatrixArgs& a, std::ostream& out,
                  std::ostream& err) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    const Vocabulary vocab = load_vocabulary_checked(a.vocab, ckpt, err);
    const RetrievalDataset ds = read_reqa_jsonl(a.data);

    std::vector<int> ids;
    std::vector<const std::string*> texts;
    const bool questions = a.what == "questions";
    if (questions) {
        for (const Question& q : ds.questions) {
            ids.push_back(q.id);
            texts.push_back(&q.text);
        }
    } else {
        for (const AnswerSentence& s : ds.answers) {
            ids.push_back(s.id);
            texts.push_back(&s.text);
        }
    }
    if (ids.empty()) fail(a.data + ": no " + a.what + " to embed");

    Mat<float> embeddings;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        Mat<float> row = embed_text_dual(*texts[i], ckpt, vocab, questions);
        if (i == 0)
            embeddings.resize(static_cast<Eigen::Index>(texts.size()),
                              row.cols());
        embeddings.row(static_cast<Eigen::Index>(i)) = row;
    }
    const std::string csv = similarity_csv(ids, similarity_matrix(embeddings));
    {
        std::ofstream f(a.output, std::ios::binary);
        if (!f) fail(a.output + ": cannot open for writing");
        f << csv;
        if (!f) fail(a.output + ": write failed");
    }

    nlohmann::json doc;
    doc["output"] = a.output;
    doc["rows"] = ids.size();
    doc["what"] = a.what;
    out << doc.dump(2) << "\n";
    return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out,
            std::ostream& err) {
    CLI::App app{"Sentence-level answer retrieval: dual encoders with a "
                 "cross-encoder teacher and geometry alignment"};
    app.name("endx");
    app.require_subcommand(1);

    IngestArgs ingest_args;
    auto* ingest = app.add_subcommand(
        "ingest", "Build a retrieval dataset from reading-comprehension JSON");
    ingest->add_option("--input", ingest_args.input,
                       "Reading-comprehension JSON file")
        ->required()
        ->check(CLI::ExistingFile);
    ingest->add_option("--output", ingest_args.output,
                       "Dataset JSON-lines file to write")
        ->required();
    ingest->add_option("--candidates", ingest_args.candidates,
                       "Candidate pool: matched answer sentences only, or "
                       "every context sentence")
        ->check(CLI::IsMember({"answers", "all-sentences"}))
        ->capture_default_str();

    TrainArgs train_args;
    auto* train_cmd =
        app.add_subcommand("train", "Train a model on an ingested dataset");
    train_cmd->add_option("--data", train_args.data, "Training dataset")
        ->required()
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--config", train_args.config,
                          "Training configuration JSON")
        ->required()
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--out", train_args.out_dir, "Run directory")
        ->required();
    train_cmd->add_option("--val-data", train_args.val_data,
                          "Explicit validation dataset (default: a seeded "
                          "9:1 split of --data)")
        ->check(CLI::ExistingFile);

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand(
        "eval", "Score a checkpoint on a dataset with retrieval metrics");
    eval_cmd->add_option("--data", eval_args.data, "Evaluation dataset")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--vocab", eval_args.vocab,
                         "Vocabulary file from the training run")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd
        ->add_option("--min-questions", eval_args.min_questions,
                     "Keep only answers with at least this many questions "
                     "(and their questions) before scoring")
        ->check(CLI::PositiveNumber);
    eval_cmd->add_option("--index,--build-index", eval_args.index,
                         "Answer-index cache file: reused when its "
                         "fingerprint matches, rebuilt otherwise");

    QueryArgs query_args;
    auto* query_cmd = app.add_subcommand(
        "query", "Rank the indexed answers for one question");
    query_cmd->add_option("--checkpoint", query_args.checkpoint, "Checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    query_cmd->add_option("--vocab", query_args.vocab,
                          "Vocabulary file from the training run")
        ->required()
        ->check(CLI::ExistingFile);
    query_cmd->add_option("--index", query_args.index,
                          "Prebuilt answer index (see eval --build-index)")
        ->required();
    query_cmd->add_option("--question", query_args.question, "Question text")
        ->required();
    query_cmd->add_option("--top", query_args.top, "How many answers to print")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    StatsArgs stats_args;
    auto* stats_cmd =
        app.add_subcommand("stats", "Print dataset statistics as JSON");
    stats_cmd->add_option("--data", stats_args.data, "Dataset")
        ->required()
        ->check(CLI::ExistingFile);
    stats_cmd->add_option("--output", stats_args.output,
                          "Also write the statistics to this file");

    AblateArgs ablate_args;
    auto* ablate_cmd = app.add_subcommand(
        "ablate",
        "Train the six loss configurations and tabulate their metrics");
    ablate_cmd->add_option("--data", ablate_args.data, "Training dataset")
        ->required()
        ->check(CLI::ExistingFile);
    ablate_cmd->add_option("--config", ablate_args.config,
                           "Training configuration JSON (must enable the "
                           "cross tower)")
        ->required()
        ->check(CLI::ExistingFile);
    ablate_cmd->add_option("--out", ablate_args.out_dir, "Run directory")
        ->required();
    ablate_cmd->add_option("--eval-data", ablate_args.eval_data,
                           "Dataset for the reported metrics (default: the "
                           "validation split)")
        ->check(CLI::ExistingFile);

    SimmatrixArgs sim_args;
    auto* sim_cmd = app.add_subcommand(
        "simmatrix", "Write the pairwise inner-product matrix of dual-tower "
                     "embeddings as CSV");
    sim_cmd->add_option("--data", sim_args.data, "Dataset")
        ->required()
        ->check(CLI::ExistingFile);
    sim_cmd->add_option("--checkpoint", sim_args.checkpoint, "Checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    sim_cmd->add_option("--vocab", sim_args.vocab,
                        "Vocabulary file from the training run")
        ->required()
        ->check(CLI::ExistingFile);
    sim_cmd->add_option("--out", sim_args.output, "CSV file to write")
        ->required();
    sim_cmd->add_option("--what", sim_args.what,
                        "Embed the questions or the answers")
        ->check(CLI::IsMember({"questions", "answers"}))
        ->capture_default_str();

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (ingest->parsed()) return cmd_ingest(ingest_args, out, err);
        if (train_cmd->parsed()) return cmd_train(train_args, out, err);
        if (eval_cmd->parsed()) return cmd_eval(eval_args, out, err);
        if (query_cmd->parsed()) return cmd_query(query_args, out, err);
        if (stats_cmd->parsed()) return cmd_stats(stats_args, out, err);
        if (ablate_cmd->parsed()) return cmd_ablate(ablate_args, out, err);
        if (sim_cmd->parsed()) return cmd_simmatrix(sim_args, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace endx
