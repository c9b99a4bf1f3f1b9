#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "endx/checkpoint.hpp"
#include "endx/cli.hpp"
#include "endx/data.hpp"
#include "endx/instrumentation.hpp"
#include "endx/trainer.hpp"

using namespace endx;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = 0;
    std::string out;
    std::string err;
    nlohmann::json json() const { return nlohmann::json::parse(out); }
};

CliResult run(std::vector<std::string> args) {
    std::ostringstream out, err;
    CliResult r;
    r.code = run_cli(std::move(args), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string fixture_path() {
    return std::string(ENDX_TEST_FIXTURE_DIR) + "/squad_small.json";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(std::string("endx_cli_") + name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const {
        return (path / name).string();
    }
};

/// A tiny but complete training configuration, written through the same
/// serializer the loader validates against.
TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.model.encoder.layers = 1;
    cfg.model.encoder.model_dim = 8;
    cfg.model.encoder.heads = 2;
    cfg.model.encoder.max_question_len = 16;
    cfg.model.encoder.max_answer_len = 16;
    cfg.model.vocab_size = 64;
    cfg.model.gam.warmup_epochs = 2;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = 7;
    return cfg;
}

void write_config(const TrainConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    REQUIRE(out.good());
    out << cfg.to_json().dump(2) << "\n";
}

/// Shared end-to-end scenario: ingested fixture + one trained run.
struct CliFixture {
    TempDir dir{"fixture"};
    std::string dataset, config, run_dir;

    CliFixture() {
        dataset = dir.file("ds.jsonl");
        config = dir.file("train.json");
        run_dir = dir.file("run");
        CliResult ingest = run({"ingest", "--input", fixture_path(),
                                "--output", dataset});
        REQUIRE(ingest.code == 0);
        write_config(tiny_config(), config);
        CliResult train = run({"train", "--data", dataset, "--config", config,
                               "--out", run_dir});
        REQUIRE(train.code == 0);
    }

    std::string best_checkpoint() const { return run_dir + "/best.ckpt"; }
    std::string vocab_file() const { return run_dir + "/vocab.txt"; }
};

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("usage errors exit with code 2 and say nothing on stdout") {
    CliResult none = run({});
    CHECK(none.code == 2);
    CHECK(none.out.empty());
    CHECK_FALSE(none.err.empty());

    CliResult unknown = run({"frobnicate"});
    CHECK(unknown.code == 2);
    CHECK(unknown.out.empty());

    CliResult missing_opt = run({"ingest", "--input", fixture_path()});
    CHECK(missing_opt.code == 2);

    CliResult missing_file =
        run({"stats", "--data", "definitely_not_here.jsonl"});
    CHECK(missing_file.code == 2);
    CHECK(missing_file.err.find("does not exist") != std::string::npos);

    CliResult bad_choice = run({"ingest", "--input", fixture_path(),
                                "--output", "x.jsonl", "--candidates",
                                "everything"});
    CHECK(bad_choice.code == 2);

    CliResult help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("ingest") != std::string::npos);
    CHECK(help.out.find("simmatrix") != std::string::npos);
}

TEST_CASE("ingest writes the dataset, the stats sidecar, and a JSON report") {
    TempDir dir("ingest");
    const std::string ds_path = dir.file("ds.jsonl");
    CliResult r = run({"ingest", "--input", fixture_path(), "--output",
                       ds_path});
    REQUIRE(r.code == 0);

    // Hand counts for the fixture: six questions, five matched sentences,
    // six pairs, and the two-decimal ratios 1.00 and 1.20.
    nlohmann::json doc = r.json();
    CHECK(doc.at("questions") == 6);
    CHECK(doc.at("answers") == 5);
    CHECK(doc.at("pairs") == 6);
    CHECK(doc.at("skipped") == 0);
    CHECK(doc.at("answers_per_question").get<double>() == 1.0);
    CHECK(doc.at("questions_per_answer").get<double>() == 1.2);

    const std::string stats_path = doc.at("stats").get<std::string>();
    REQUIRE(fs::exists(stats_path));
    nlohmann::json sidecar = nlohmann::json::parse(read_file(stats_path));
    CHECK(sidecar.at("questions") == 6);
    CHECK(sidecar.at("answers") == 5);
    CHECK(sidecar.at("pairs") == 6);

    RetrievalDataset ds = read_reqa_jsonl(ds_path);
    auto in_process = build_reqa(parse_rc_json(fixture_path()));
    CHECK(ds.content_hash() == in_process.dataset.content_hash());

    // Rerunning the ingestion produces byte-identical artifacts.
    const std::string first = read_file(ds_path);
    CliResult again = run({"ingest", "--input", fixture_path(), "--output",
                           ds_path});
    REQUIRE(again.code == 0);
    CHECK(read_file(ds_path) == first);
    CHECK(again.out == r.out);
}

TEST_CASE("ingest can widen the candidate pool to every sentence") {
    TempDir dir("ingest_wide");
    const std::string ds_path = dir.file("wide.jsonl");
    CliResult r = run({"ingest", "--input", fixture_path(), "--output",
                       ds_path, "--candidates", "all-sentences"});
    REQUIRE(r.code == 0);
    CHECK(r.json().at("answers") == 6);  // one unmatched distractor sentence
    CHECK(r.json().at("pairs") == 6);
    RetrievalDataset ds = read_reqa_jsonl(ds_path);
    CHECK(ds.answers.size() == 6);
}

TEST_CASE("train runs end to end and is reproducible") {
    CliFixture fx;
    CHECK(fs::exists(fx.best_checkpoint()));
    CHECK(fs::exists(fx.vocab_file()));
    CHECK(fs::exists(fx.run_dir + "/config.json"));
    CHECK(fs::exists(fx.run_dir + "/train_log.jsonl"));

    // The dumped configuration reparses to the exact same settings.
    nlohmann::json dumped =
        nlohmann::json::parse(read_file(fx.run_dir + "/config.json"));
    CHECK(TrainConfig::from_json(dumped).to_json() == tiny_config().to_json());

    // Same data, config, and seed → byte-identical final checkpoint.
    TempDir dir2("train_again");
    CliResult again = run({"train", "--data", fx.dataset, "--config",
                           fx.config, "--out", dir2.file("run")});
    REQUIRE(again.code == 0);
    CHECK(read_file(dir2.file("run") + "/final.ckpt") ==
          read_file(fx.run_dir + "/final.ckpt"));

    nlohmann::json doc = again.json();
    CHECK(doc.at("epochs") == 3);
    CHECK(doc.at("best_epoch").get<int>() >= 0);
    CHECK(fs::exists(doc.at("best_checkpoint").get<std::string>()));
    CHECK(fs::exists(doc.at("final_checkpoint").get<std::string>()));
}

TEST_CASE("train reports configuration problems before any compute") {
    CliFixture fx;
    TempDir dir("train_badcfg");

    const std::string bad_json = dir.file("bad.json");
    {
        std::ofstream f(bad_json);
        f << "{ definitely not json";
    }
    CliResult r1 = run({"train", "--data", fx.dataset, "--config", bad_json,
                        "--out", dir.file("r1")});
    CHECK(r1.code == 1);
    CHECK(r1.err.find("not valid JSON") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.file("r1")));  // nothing was written

    const std::string bad_key = dir.file("bad_key.json");
    {
        nlohmann::json doc = tiny_config().to_json();
        doc["model"]["gam"]["sigma"] = 1.0;  // misspelled key
        std::ofstream f(bad_key);
        f << doc.dump(2);
    }
    CliResult r2 = run({"train", "--data", fx.dataset, "--config", bad_key,
                        "--out", dir.file("r2")});
    CHECK(r2.code == 1);
    CHECK(r2.err.find("unknown key") != std::string::npos);

    const std::string bad_value = dir.file("bad_value.json");
    {
        TrainConfig cfg = tiny_config();
        cfg.epochs = 0;
        std::ofstream f(bad_value);
        f << cfg.to_json().dump(2);
    }
    CliResult r3 = run({"train", "--data", fx.dataset, "--config", bad_value,
                        "--out", dir.file("r3")});
    CHECK(r3.code == 1);
    CHECK(r3.err.find("epochs") != std::string::npos);
}

TEST_CASE("eval reports metrics and reuses a fingerprint-matched index") {
    CliFixture fx;
    const std::string index = fx.dir.file("answers.idx");

    reset_instrumentation_counters();
    CliResult first = run({"eval", "--data", fx.dataset, "--checkpoint",
                           fx.best_checkpoint(), "--vocab", fx.vocab_file(),
                           "--build-index", index});
    REQUIRE(first.code == 0);
    // The inference path never touches cross attention.
    CHECK(cross_attention_calls() == 0);

    nlohmann::json doc = first.json();
    CHECK(doc.at("num_questions") == 6);
    CHECK(doc.at("mrr").get<double>() > 0.0);
    CHECK(doc.at("mrr").get<double>() <= 1.0);
    CHECK(doc.at("recall").contains("1"));
    CHECK(doc.at("recall").contains("5"));
    CHECK(doc.at("recall").contains("10"));
    REQUIRE(fs::exists(index));

    // Second run hits the cache: only the six questions are encoded.
    reset_instrumentation_counters();
    CliResult second = run({"eval", "--data", fx.dataset, "--checkpoint",
                            fx.best_checkpoint(), "--vocab", fx.vocab_file(),
                            "--index", index});
    REQUIRE(second.code == 0);
    CHECK(second.err.find("cache hit") != std::string::npos);
    CHECK(encoder_calls() == 6);
    CHECK(cross_attention_calls() == 0);
    CHECK(second.out == first.out);
}

TEST_CASE("eval restricts to the one-to-many subset on request") {
    CliFixture fx;
    // One fixture sentence answers two questions; no answer reaches five.
    CliResult sub = run({"eval", "--data", fx.dataset, "--checkpoint",
                         fx.best_checkpoint(), "--vocab", fx.vocab_file(),
                         "--min-questions", "2"});
    REQUIRE(sub.code == 0);
    CHECK(sub.json().at("num_questions") == 2);
    CHECK(sub.json().at("subset_min_questions") == 2);

    CliResult empty = run({"eval", "--data", fx.dataset, "--checkpoint",
                           fx.best_checkpoint(), "--vocab", fx.vocab_file(),
                           "--min-questions", "5"});
    CHECK(empty.code == 1);
    CHECK(empty.err.find("empty subset") != std::string::npos);
}

TEST_CASE("query ranks the indexed pool for a single question") {
    CliFixture fx;
    const std::string index = fx.dir.file("pool.idx");
    REQUIRE(run({"eval", "--data", fx.dataset, "--checkpoint",
                 fx.best_checkpoint(), "--vocab", fx.vocab_file(),
                 "--build-index", index})
                .code == 0);

    reset_instrumentation_counters();
    CliResult r = run({"query", "--checkpoint", fx.best_checkpoint(),
                       "--vocab", fx.vocab_file(), "--index", index,
                       "--question", "Where do glass frogs live?", "--top",
                       "3"});
    REQUIRE(r.code == 0);
    CHECK(cross_attention_calls() == 0);
    CHECK(encoder_calls() == 1);  // exactly the one question

    nlohmann::json doc = r.json();
    CHECK(doc.at("question") == "Where do glass frogs live?");
    REQUIRE(doc.at("results").size() == 3);
    double prev = doc.at("results")[0].at("score").get<double>();
    for (const auto& row : doc.at("results")) {
        CHECK(row.contains("answer_id"));
        CHECK(row.contains("text"));
        const double s = row.at("score").get<double>();
        CHECK(s <= prev);
        prev = s;
    }

    // --top beyond the pool prints the whole pool (five answers).
    CliResult all = run({"query", "--checkpoint", fx.best_checkpoint(),
                         "--vocab", fx.vocab_file(), "--index", index,
                         "--question", "Where do glass frogs live?", "--top",
                         "50"});
    REQUIRE(all.code == 0);
    CHECK(all.json().at("results").size() == 5);

    // A missing index is a runtime error with build instructions.
    CliResult missing = run({"query", "--checkpoint", fx.best_checkpoint(),
                             "--vocab", fx.vocab_file(), "--index",
                             fx.dir.file("nope.idx"), "--question", "x"});
    CHECK(missing.code == 1);
    CHECK(missing.err.find("eval --build-index") != std::string::npos);
}

TEST_CASE("stats prints the dataset statistics as JSON") {
    CliFixture fx;
    CliResult r = run({"stats", "--data", fx.dataset});
    REQUIRE(r.code == 0);
    nlohmann::json doc = r.json();
    CHECK(doc.at("questions") == 6);
    CHECK(doc.at("answers") == 5);
    CHECK(doc.at("pairs") == 6);
    CHECK(doc.at("answers_per_question").get<double>() == 1.0);
    CHECK(doc.at("questions_per_answer").get<double>() == 1.2);

    const std::string copy = fx.dir.file("stats.json");
    CliResult with_file = run({"stats", "--data", fx.dataset, "--output",
                               copy});
    REQUIRE(with_file.code == 0);
    CHECK(nlohmann::json::parse(read_file(copy)) == doc);
}

TEST_CASE("simmatrix writes a square CSV over the chosen embeddings") {
    CliFixture fx;
    const std::string csv_path = fx.dir.file("sim.csv");
    CliResult r = run({"simmatrix", "--data", fx.dataset, "--checkpoint",
                       fx.best_checkpoint(), "--vocab", fx.vocab_file(),
                       "--out", csv_path});
    REQUIRE(r.code == 0);
    CHECK(r.json().at("rows") == 6);  // six questions → 6×6 matrix

    const std::string csv = read_file(csv_path);
    std::istringstream lines(csv);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(lines, line)) rows.push_back(line);
    REQUIRE(rows.size() == 7);  // header + 6 rows
    CHECK(rows[0] == "id,0,1,2,3,4,5");
    for (std::size_t i = 1; i < rows.size(); ++i)
        CHECK(std::count(rows[i].begin(), rows[i].end(), ',') == 6);

    // The answer-side matrix covers the five answers instead.
    CliResult ans = run({"simmatrix", "--data", fx.dataset, "--checkpoint",
                         fx.best_checkpoint(), "--vocab", fx.vocab_file(),
                         "--out", fx.dir.file("sim_a.csv"), "--what",
                         "answers"});
    REQUIRE(ans.code == 0);
    CHECK(ans.json().at("rows") == 5);
}

TEST_CASE("ablate trains the six configurations and writes the table") {
    CliFixture fx;
    TempDir dir("ablate");
    TrainConfig cfg = tiny_config();
    cfg.epochs = 2;
    const std::string config = dir.file("cfg.json");
    write_config(cfg, config);

    CliResult r = run({"ablate", "--data", fx.dataset, "--config", config,
                       "--out", dir.file("runs")});
    REQUIRE(r.code == 0);
    nlohmann::json doc = r.json();
    REQUIRE(doc.at("rows").size() == 6);
    const std::vector<std::string> names{"full",   "-L_q|q",  "-L_a|a",
                                         "-L_q|a", "-L_a|q", "dual-only"};
    for (std::size_t i = 0; i < names.size(); ++i)
        CHECK(doc.at("rows")[i].at("name") == names[i]);

    const std::string csv = read_file(doc.at("csv").get<std::string>());
    CHECK(csv.rfind("name,mrr,r1,r5\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

    // A dual-only base configuration cannot be ablated.
    TrainConfig dual = cfg;
    dual.model.weights.cross = 0.0;
    dual.model.weights.gam = 0.0;
    const std::string dual_cfg = dir.file("dual.json");
    write_config(dual, dual_cfg);
    CliResult bad = run({"ablate", "--data", fx.dataset, "--config", dual_cfg,
                         "--out", dir.file("runs2")});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("cross tower") != std::string::npos);
}

TEST_SUITE_END();
