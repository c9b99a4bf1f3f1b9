#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "endx/checkpoint.hpp"
#include "endx/data.hpp"
#include "endx/model.hpp"
#include "endx/vocab.hpp"

namespace endx {

// ---------------------------------------------------------------------------
// Answer index: the corpus side is embedded once, offline, and reused for
// every query — answering needs one question encoding plus one matrix-vector
// product.
// ---------------------------------------------------------------------------

struct AnswerIndex {
    std::vector<int> answer_ids;      // row order of the embedding matrix
    std::vector<std::string> texts;   // aligned with answer_ids
    Mat<float> embeddings;            // num_answers x d_e
    std::uint64_t checkpoint_hash = 0;
    std::uint64_t dataset_hash = 0;

    std::size_t size() const { return answer_ids.size(); }
    bool same_fingerprint(std::uint64_t ckpt_hash, std::uint64_t ds_hash) const {
        return checkpoint_hash == ckpt_hash && dataset_hash == ds_hash;
    }
};

/// Embeds one text with the frozen dual tower (inference path: no cross
/// attention runs). Returns a 1 x d_e row.
Mat<float> embed_text_dual(const std::string& text, const Checkpoint& ckpt,
                           const Vocabulary& vocab, bool is_question);

/// Embeds every answer independently with the dual tower. The fingerprint
/// hashes are stored verbatim for cache keying.
AnswerIndex embed_corpus(const std::vector<AnswerSentence>& answers,
                         const Checkpoint& ckpt, const Vocabulary& vocab,
                         std::uint64_t checkpoint_hash = 0,
                         std::uint64_t dataset_hash = 0);

/// Cache wrapper: loads `cache_path` when it holds an index with the same
/// fingerprint (embedding nothing), otherwise rebuilds and overwrites it.
/// `hit` (when non-null) reports which branch ran.
AnswerIndex ensure_answer_index(const std::vector<AnswerSentence>& answers,
                                const Checkpoint& ckpt, const Vocabulary& vocab,
                                std::uint64_t checkpoint_hash,
                                std::uint64_t dataset_hash,
                                const std::string& cache_path,
                                bool* hit = nullptr);

void save_answer_index(const AnswerIndex& index, const std::string& path);
AnswerIndex load_answer_index(const std::string& path);

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

struct ScoredAnswer {
    int id = 0;
    double score = 0.0;
};

/// Descending score; ties broken by ascending answer id so rankings are
/// reproducible (and pessimistic for the later id).
void sort_ranked(std::vector<ScoredAnswer>& scored);

/// Scores every index row against the question embedding (inner product)
/// and returns the full ranking.
std::vector<ScoredAnswer> rank_answers(const std::string& question,
                                       const AnswerIndex& index,
                                       const Checkpoint& ckpt,
                                       const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// 1-based rank of the best-ranked member of `correct` inside `ranked`.
/// Errors when no member is present: the candidate pool is built from the
/// dataset, so every question's answers must be in it.
int first_correct_rank(const std::vector<int>& ranked,
                       const std::vector<int>& correct);

/// Mean reciprocal rank over per-question first-correct ranks.
double mrr_from_ranks(const std::vector<int>& ranks);

/// Mean over questions of |top_N(ranked_i) ∩ correct_i| / |correct_i|.
/// `correct` entries are treated as sets. A question with two correct
/// answers caps at 0.5 for N=1 — the denominator is |A*|, not min(N, |A*|).
double recall_at_n(const std::vector<std::vector<int>>& ranked,
                   const std::vector<std::vector<int>>& correct, int n);

struct MetricsReport {
    double mrr = 0.0;
    std::map<int, double> recall;         // N -> R@N for N in {1, 5, 10}
    std::vector<int> first_ranks;         // per question, 1-based
    std::size_t num_questions = 0;
    int subset_min_questions = 1;         // 1 = no one-to-many filtering

    std::string to_json() const;
};

/// Ranks every dataset question against the index and aggregates MRR and
/// R@{1,5,10}. Ranking parallelizes over questions (ENDX_THREADS); the
/// reduction always runs in question order.
MetricsReport evaluate_retrieval(const RetrievalDataset& ds,
                                 const AnswerIndex& index,
                                 const Checkpoint& ckpt,
                                 const Vocabulary& vocab);

/// Restricts the dataset to answers matched by at least `min_questions`
/// distinct questions; keeps exactly the pairs into surviving answers and
/// the questions owning such pairs.
RetrievalDataset one_to_many_subset(const RetrievalDataset& ds,
                                    int min_questions);

// ---------------------------------------------------------------------------
// BM25 baseline (retrieval without any learned parameters)
// ---------------------------------------------------------------------------

struct Bm25Config {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over the module tokenizer's tokens.
///   score(q, d) = Σ_t∈q IDF(t) · tf·(k1+1) / (tf + k1·(1−b+b·len/avglen))
///   IDF(t) = ln((N − df + 0.5)/(df + 0.5) + 1)
/// Query tokens contribute once per occurrence.
class Bm25Index {
public:
    Bm25Index(const std::vector<AnswerSentence>& corpus, Bm25Config cfg = {});

    /// Full ranking, descending score, ties by ascending id.
    std::vector<ScoredAnswer> rank(const std::string& query) const;

    double average_doc_len() const { return avg_len_; }

private:
    Bm25Config cfg_;
    std::vector<int> ids_;
    std::vector<std::map<std::string, int>> term_freq_;  // per doc
    std::vector<std::size_t> doc_len_;
    std::map<std::string, int> doc_freq_;
    double avg_len_ = 0.0;
};

// ---------------------------------------------------------------------------
// Analysis exports
// ---------------------------------------------------------------------------

/// Pairwise inner products of the rows (n x d_e -> n x n).
Mat<float> similarity_matrix(const Mat<float>& embeddings);

/// CSV with the ids as both header row and leading column.
std::string similarity_csv(const std::vector<int>& ids, const Mat<float>& m);

// ---------------------------------------------------------------------------
// Multi-seed significance testing
// ---------------------------------------------------------------------------

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
};

/// Welch two-sample t-test with a two-sided p-value. Degenerate cases:
/// zero variance on both sides resolves to p=1 for equal means and p=0
/// otherwise.
TTestResult significance_test(const std::vector<double>& a,
                              const std::vector<double>& b);

}  // namespace endx
