#include "endx/evaluation.hpp"

#include <json.hpp>

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "endx/common.hpp"
#include "endx/parallel.hpp"

namespace endx {
namespace {

constexpr char kIndexMagic[4] = {'E', 'N', 'D', 'I'};
constexpr std::uint32_t kIndexVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) fail(path + ": truncated answer index");
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
    std::uint64_t lo = get_u32(in, path);
    std::uint64_t hi = get_u32(in, path);
    return lo | (hi << 32);
}

int expected_embedding_dim(const Checkpoint& ckpt) {
    return ckpt.config.aggregator.out_dim_or(ckpt.config.encoder.model_dim);
}

std::vector<int> distinct_sorted(const std::vector<int>& ids) {
    std::set<int> s(ids.begin(), ids.end());
    return {s.begin(), s.end()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

Mat<float> embed_text_dual(const std::string& text, const Checkpoint& ckpt,
                           const Vocabulary& vocab, bool is_question) {
    const std::size_t max_len = is_question
                                    ? static_cast<std::size_t>(
                                          ckpt.config.encoder.max_question_len)
                                    : static_cast<std::size_t>(
                                          ckpt.config.encoder.max_answer_len);
    const std::vector<int> ids = tokenize(text, vocab, max_len);
    Tape<float> t;
    TapeBinding<float> p(t, ckpt.params);
    Var out = is_question ? embed_question_dual(t, ids, ckpt.config, p)
                          : embed_answer_dual(t, ids, ckpt.config, p);
    return t.value(out);
}

AnswerIndex embed_corpus(const std::vector<AnswerSentence>& answers,
                         const Checkpoint& ckpt, const Vocabulary& vocab,
                         std::uint64_t checkpoint_hash,
                         std::uint64_t dataset_hash) {
    AnswerIndex index;
    index.checkpoint_hash = checkpoint_hash;
    index.dataset_hash = dataset_hash;
    const int d_e = expected_embedding_dim(ckpt);
    index.embeddings.resize(static_cast<Eigen::Index>(answers.size()), d_e);
    index.answer_ids.resize(answers.size());
    index.texts.resize(answers.size());
    parallel_for(answers.size(), [&](std::size_t i) {
        index.answer_ids[i] = answers[i].id;
        index.texts[i] = answers[i].text;
        Mat<float> row = embed_text_dual(answers[i].text, ckpt, vocab,
                                         /*is_question=*/false);
        index.embeddings.row(static_cast<Eigen::Index>(i)) = row.row(0);
    });
    return index;
}

AnswerIndex ensure_answer_index(const std::vector<AnswerSentence>& answers,
                                const Checkpoint& ckpt, const Vocabulary& vocab,
                                std::uint64_t checkpoint_hash,
                                std::uint64_t dataset_hash,
                                const std::string& cache_path, bool* hit) {
    if (hit) *hit = false;
    if (std::ifstream(cache_path).good()) {
        AnswerIndex cached = load_answer_index(cache_path);
        if (cached.same_fingerprint(checkpoint_hash, dataset_hash)) {
            if (cached.embeddings.cols() != expected_embedding_dim(ckpt))
                fail(cache_path + ": cached index dimension " +
                     std::to_string(cached.embeddings.cols()) +
                     " does not match the checkpoint's " +
                     std::to_string(expected_embedding_dim(ckpt)));
            if (hit) *hit = true;
            return cached;
        }
    }
    AnswerIndex fresh =
        embed_corpus(answers, ckpt, vocab, checkpoint_hash, dataset_hash);
    save_answer_index(fresh, cache_path);
    return fresh;
}

void save_answer_index(const AnswerIndex& index, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path + ": cannot open for writing");
    out.write(kIndexMagic, 4);
    put_u32(out, kIndexVersion);
    put_u64(out, index.checkpoint_hash);
    put_u64(out, index.dataset_hash);
    put_u64(out, index.size());
    put_u64(out, static_cast<std::uint64_t>(index.embeddings.cols()));
    for (std::size_t i = 0; i < index.size(); ++i) {
        put_u64(out, static_cast<std::uint64_t>(
                         static_cast<std::int64_t>(index.answer_ids[i])));
        put_u32(out, static_cast<std::uint32_t>(index.texts[i].size()));
        out.write(index.texts[i].data(),
                  static_cast<std::streamsize>(index.texts[i].size()));
    }
    for (Eigen::Index i = 0; i < index.embeddings.rows(); ++i)
        for (Eigen::Index j = 0; j < index.embeddings.cols(); ++j) {
            std::uint32_t bits;
            float v = index.embeddings(i, j);
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    out.flush();
    if (!out) fail(path + ": write failed");
}

AnswerIndex load_answer_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path + ": cannot open file");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kIndexMagic, 4) != 0)
        fail(path + ": not an answer index");
    const std::uint32_t version = get_u32(in, path);
    if (version != kIndexVersion)
        fail(path + ": answer index version " + std::to_string(version) +
             " is not supported (expected " + std::to_string(kIndexVersion) +
             ")");
    AnswerIndex index;
    index.checkpoint_hash = get_u64(in, path);
    index.dataset_hash = get_u64(in, path);
    const std::uint64_t count = get_u64(in, path);
    const std::uint64_t dim = get_u64(in, path);
    index.answer_ids.resize(count);
    index.texts.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        index.answer_ids[i] =
            static_cast<int>(static_cast<std::int64_t>(get_u64(in, path)));
        const std::uint32_t len = get_u32(in, path);
        index.texts[i].resize(len);
        in.read(index.texts[i].data(), len);
        if (!in) fail(path + ": truncated answer index");
    }
    index.embeddings.resize(static_cast<Eigen::Index>(count),
                            static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < index.embeddings.rows(); ++i)
        for (Eigen::Index j = 0; j < index.embeddings.cols(); ++j) {
            std::uint32_t bits = get_u32(in, path);
            float v;
            std::memcpy(&v, &bits, 4);
            index.embeddings(i, j) = v;
        }
    return index;
}

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

void sort_ranked(std::vector<ScoredAnswer>& scored) {
    std::stable_sort(scored.begin(), scored.end(),
                     [](const ScoredAnswer& x, const ScoredAnswer& y) {
                         if (x.score != y.score) return x.score > y.score;
                         return x.id < y.id;
                     });
}

std::vector<ScoredAnswer> rank_answers(const std::string& question,
                                       const AnswerIndex& index,
                                       const Checkpoint& ckpt,
                                       const Vocabulary& vocab) {
    if (index.size() == 0) fail("rank_answers: empty index");
    Mat<float> q = embed_text_dual(question, ckpt, vocab, /*is_question=*/true);
    if (q.cols() != index.embeddings.cols())
        fail("rank_answers: question dimension " + std::to_string(q.cols()) +
             " does not match index dimension " +
             std::to_string(index.embeddings.cols()));
    std::vector<ScoredAnswer> scored(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        float s = index.embeddings.row(static_cast<Eigen::Index>(i))
                      .dot(q.row(0));
        scored[i] = {index.answer_ids[i], static_cast<double>(s)};
    }
    sort_ranked(scored);
    return scored;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

int first_correct_rank(const std::vector<int>& ranked,
                       const std::vector<int>& correct) {
    if (correct.empty()) fail("first_correct_rank: empty correct set");
    const std::set<int> want(correct.begin(), correct.end());
    for (std::size_t i = 0; i < ranked.size(); ++i)
        if (want.count(ranked[i])) return static_cast<int>(i) + 1;
    fail("first_correct_rank: no correct answer in the candidate pool");
}

double mrr_from_ranks(const std::vector<int>& ranks) {
    if (ranks.empty()) fail("mrr: no questions");
    double sum = 0.0;
    for (int r : ranks) {
        if (r < 1) fail("mrr: ranks are 1-based");
        sum += 1.0 / static_cast<double>(r);
    }
    return sum / static_cast<double>(ranks.size());
}

double recall_at_n(const std::vector<std::vector<int>>& ranked,
                   const std::vector<std::vector<int>>& correct, int n) {
    if (n < 1) fail("recall_at_n: N must be >= 1");
    if (ranked.size() != correct.size())
        fail("recall_at_n: ranked and correct list counts differ");
    if (ranked.empty()) fail("recall_at_n: no questions");
    double sum = 0.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const std::set<int> want(correct[i].begin(), correct[i].end());
        if (want.empty()) fail("recall_at_n: empty correct set");
        const std::size_t top =
            std::min(ranked[i].size(), static_cast<std::size_t>(n));
        std::size_t hits = 0;
        for (std::size_t j = 0; j < top; ++j)
            if (want.count(ranked[i][j])) ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(want.size());
    }
    return sum / static_cast<double>(ranked.size());
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["mrr"] = mrr;
    nlohmann::json rec;
    for (const auto& [n, value] : recall) rec[std::to_string(n)] = value;
    j["recall"] = rec;
    j["num_questions"] = num_questions;
    j["subset_min_questions"] = subset_min_questions;
    return j.dump(2);
}

MetricsReport evaluate_retrieval(const RetrievalDataset& ds,
                                 const AnswerIndex& index,
                                 const Checkpoint& ckpt,
                                 const Vocabulary& vocab) {
    if (ds.questions.empty()) fail("evaluate: dataset has no questions");
    const std::vector<int> ns{1, 5, 10};

    struct PerQuestion {
        int rank = 0;
        std::array<double, 3> recall{};
    };
    std::vector<PerQuestion> slots(ds.questions.size());

    parallel_for(ds.questions.size(), [&](std::size_t qi) {
        const Question& q = ds.questions[qi];
        const std::vector<int> correct =
            distinct_sorted(ds.matched_answer_ids(q.id));
        auto scored = rank_answers(q.text, index, ckpt, vocab);
        std::vector<int> ranked(scored.size());
        for (std::size_t i = 0; i < scored.size(); ++i) ranked[i] = scored[i].id;
        slots[qi].rank = first_correct_rank(ranked, correct);
        const std::set<int> want(correct.begin(), correct.end());
        for (std::size_t k = 0; k < ns.size(); ++k) {
            const std::size_t top =
                std::min(ranked.size(), static_cast<std::size_t>(ns[k]));
            std::size_t hits = 0;
            for (std::size_t j = 0; j < top; ++j)
                if (want.count(ranked[j])) ++hits;
            slots[qi].recall[k] =
                static_cast<double>(hits) / static_cast<double>(want.size());
        }
    });

    // Deterministic reduction in question order.
    MetricsReport report;
    report.num_questions = ds.questions.size();
    report.first_ranks.reserve(slots.size());
    std::array<double, 3> recall_sums{};
    double mrr_sum = 0.0;
    for (const PerQuestion& s : slots) {
        report.first_ranks.push_back(s.rank);
        mrr_sum += 1.0 / static_cast<double>(s.rank);
        for (std::size_t k = 0; k < ns.size(); ++k)
            recall_sums[k] += s.recall[k];
    }
    report.mrr = mrr_sum / static_cast<double>(slots.size());
    for (std::size_t k = 0; k < ns.size(); ++k)
        report.recall[ns[k]] =
            recall_sums[k] / static_cast<double>(slots.size());
    return report;
}

RetrievalDataset one_to_many_subset(const RetrievalDataset& ds,
                                    int min_questions) {
    if (min_questions < 1) fail("one_to_many_subset: min questions must be >= 1");
    std::map<int, std::set<int>> questions_of_answer;
    for (const QAPair& p : ds.pairs)
        questions_of_answer[p.answer_id].insert(p.question_id);

    std::set<int> kept_answers;
    for (const auto& [aid, qset] : questions_of_answer)
        if (qset.size() >= static_cast<std::size_t>(min_questions))
            kept_answers.insert(aid);

    RetrievalDataset out;
    std::set<int> kept_questions;
    for (const QAPair& p : ds.pairs)
        if (kept_answers.count(p.answer_id)) {
            out.pairs.push_back(p);
            kept_questions.insert(p.question_id);
        }
    for (const Question& q : ds.questions)
        if (kept_questions.count(q.id)) out.questions.push_back(q);
    for (const AnswerSentence& a : ds.answers)
        if (kept_answers.count(a.id)) out.answers.push_back(a);
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

Bm25Index::Bm25Index(const std::vector<AnswerSentence>& corpus, Bm25Config cfg)
    : cfg_(cfg) {
    if (corpus.empty()) fail("bm25: empty corpus");
    if (cfg_.k1 < 0 || cfg_.b < 0 || cfg_.b > 1)
        fail("bm25: k1 must be >= 0 and b in [0, 1]");
    std::size_t total_len = 0;
    for (const AnswerSentence& doc : corpus) {
        ids_.push_back(doc.id);
        std::map<std::string, int> tf;
        const auto tokens = split_tokens(doc.text);
        for (const std::string& tok : tokens) ++tf[tok];
        for (const auto& [term, _] : tf) ++doc_freq_[term];
        doc_len_.push_back(tokens.size());
        total_len += tokens.size();
        term_freq_.push_back(std::move(tf));
    }
    avg_len_ = static_cast<double>(total_len) /
               static_cast<double>(corpus.size());
}

std::vector<ScoredAnswer> Bm25Index::rank(const std::string& query) const {
    const auto query_tokens = split_tokens(query);
    const double n_docs = static_cast<double>(ids_.size());
    std::vector<ScoredAnswer> scored(ids_.size());
    for (std::size_t d = 0; d < ids_.size(); ++d) {
        double score = 0.0;
        const double norm =
            1.0 - cfg_.b +
            cfg_.b * (avg_len_ > 0
                          ? static_cast<double>(doc_len_[d]) / avg_len_
                          : 0.0);
        for (const std::string& term : query_tokens) {
            auto df_it = doc_freq_.find(term);
            if (df_it == doc_freq_.end()) continue;  // absent everywhere → 0
            auto tf_it = term_freq_[d].find(term);
            if (tf_it == term_freq_[d].end()) continue;
            const double df = static_cast<double>(df_it->second);
            const double tf = static_cast<double>(tf_it->second);
            const double idf = std::log((n_docs - df + 0.5) / (df + 0.5) + 1.0);
            score += idf * tf * (cfg_.k1 + 1.0) / (tf + cfg_.k1 * norm);
        }
        scored[d] = {ids_[d], score};
    }
    sort_ranked(scored);
    return scored;
}

// ---------------------------------------------------------------------------
// Analysis exports
// ---------------------------------------------------------------------------

Mat<float> similarity_matrix(const Mat<float>& embeddings) {
    if (embeddings.rows() < 1) fail("similarity_matrix: empty input");
    return embeddings * embeddings.transpose();
}

std::string similarity_csv(const std::vector<int>& ids, const Mat<float>& m) {
    if (static_cast<Eigen::Index>(ids.size()) != m.rows() || m.rows() != m.cols())
        fail("similarity_csv: matrix must be n x n with n ids");
    std::string out = "id";
    for (int id : ids) out += "," + std::to_string(id);
    out += "\n";
    char buf[64];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out += std::to_string(ids[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof buf, ",%.9g",
                          static_cast<double>(m(i, j)));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Significance testing
// ---------------------------------------------------------------------------

TTestResult significance_test(const std::vector<double>& a,
                              const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2)
        fail("significance test: need at least 2 samples per side");
    auto mean = [](const std::vector<double>& xs) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s / static_cast<double>(xs.size());
    };
    auto var = [&](const std::vector<double>& xs, double m) {
        double s = 0.0;
        for (double x : xs) s += (x - m) * (x - m);
        return s / static_cast<double>(xs.size() - 1);
    };
    const double ma = mean(a), mb = mean(b);
    const double va = var(a, ma), vb = var(b, mb);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double se2 = va / na + vb / nb;

    TTestResult result;
    if (se2 == 0.0) {
        // No spread on either side: identical means are indistinguishable,
        // different means are separated with certainty.
        if (ma == mb) return {0.0, 1.0};
        return {ma > mb ? std::numeric_limits<double>::infinity()
                        : -std::numeric_limits<double>::infinity(),
                0.0};
    }
    result.t = (ma - mb) / std::sqrt(se2);
    const double df = se2 * se2 /
                      ((va / na) * (va / na) / (na - 1.0) +
                       (vb / nb) * (vb / nb) / (nb - 1.0));
    boost::math::students_t dist(df);
    result.p = 2.0 * boost::math::cdf(boost::math::complement(
                         dist, std::fabs(result.t)));
    return result;
}

}  // namespace endx
