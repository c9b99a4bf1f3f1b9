#pragma once

// ReQA dataset construction: parse reading-comprehension JSON, split contexts
// into sentences, link each question to the sentence containing its answer
// span, and serve deterministic in-batch-negative batches.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "endx/common.hpp"

namespace endx {

// ---------------------------------------------------------------------------
// Parsed reading-comprehension records
// ---------------------------------------------------------------------------

struct ParsedQA {
    std::string question;
    std::size_t answer_start = 0;  // character offset of the first answer
};

struct ParsedParagraph {
    std::string context;
    std::vector<ParsedQA> qas;
};

/// Reads a SQuAD-v1.1-schema file (data → paragraphs → qas → answers).
/// Errors name the path into the document, e.g. "data[0].paragraphs[2].qas[1]".
std::vector<ParsedParagraph> parse_rc_json(const std::string& path);

/// Same parse applied to an in-memory document (used by tests and ingestion).
std::vector<ParsedParagraph> parse_rc_text(const std::string& text,
                                           const std::string& origin);

// ---------------------------------------------------------------------------
// Sentence splitting
// ---------------------------------------------------------------------------

struct SentenceSpan {
    std::string text;
    std::size_t begin = 0;  // [begin, end) character range in the context
    std::size_t end = 0;
};

/// Splits at '.', '!' or '?' followed by whitespace and an uppercase letter,
/// or by end of text. A fixed abbreviation list (Mr., Mrs., Dr., St., U.S.,
/// e.g., i.e., etc., vs., No.) suppresses splits. Ranges are ordered,
/// non-overlapping, and cover every non-whitespace character.
std::vector<SentenceSpan> split_sentences(const std::string& context);

// ---------------------------------------------------------------------------
// Retrieval dataset
// ---------------------------------------------------------------------------

struct Question {
    int id = 0;
    std::string text;
};

struct AnswerSentence {
    int id = 0;
    std::string text;
};

/// A matched (question, answer-sentence) link; the label is implicitly true,
/// negatives come from the rest of the batch.
struct QAPair {
    int question_id = 0;
    int answer_id = 0;
};

struct DatasetStats {
    std::size_t questions = 0;
    std::size_t answers = 0;
    std::size_t pairs = 0;
    double answers_per_question = 0.0;  // pairs / questions, 2 decimals
    double questions_per_answer = 0.0;  // pairs / answers, 2 decimals
};

struct RetrievalDataset {
    std::vector<Question> questions;       // unique question strings
    std::vector<AnswerSentence> answers;   // unique answer sentences
    std::vector<QAPair> pairs;             // many-to-many links

    const Question& question_by_id(int id) const;
    const AnswerSentence& answer_by_id(int id) const;
    /// Ids of answers matched to this question, in pair order.
    std::vector<int> matched_answer_ids(int question_id) const;
    /// Hash over all texts and links (split/fingerprint identity).
    std::uint64_t content_hash() const;

    void validate() const;  // every pair must reference existing ids
};

struct ReqaBuild {
    RetrievalDataset dataset;
    std::size_t skipped = 0;  // QA records whose offset matched no sentence
};

/// Links every question to the sentence whose range contains its answer
/// offset. Answer sentences and question strings are deduplicated by exact
/// string; each parsed QA record contributes one pair. Records with offsets
/// outside every sentence are counted in `skipped`. With all_sentences the
/// candidate pool additionally holds every context sentence (deduplicated)
/// as an unlinked distractor; ids of matched answers are the same in both
/// modes.
ReqaBuild build_reqa(const std::vector<ParsedParagraph>& paragraphs,
                     bool all_sentences = false);

/// Seeded 9:1 split by question. Questions keep their original ids; each
/// side keeps exactly the pairs (and referenced answers) of its questions,
/// so an answer sentence may appear in both splits.
std::pair<RetrievalDataset, RetrievalDataset> make_splits(
    const RetrievalDataset& ds, std::uint64_t seed);

/// Aligned in-batch-negative batches for one epoch: pairs are shuffled with
/// a seed derived from (seed, epoch); a pair whose question or answer is
/// already in the forming batch is deferred to a later batch; the final
/// incomplete batch is dropped.
std::vector<std::vector<QAPair>> batch_iter(const RetrievalDataset& ds, int b,
                                            std::uint64_t seed, int epoch);

DatasetStats dataset_stats(const RetrievalDataset& ds);

// ---------------------------------------------------------------------------
// Serialization: JSON-lines of pairs plus a sidecar stats document
// ---------------------------------------------------------------------------

void write_reqa_jsonl(const RetrievalDataset& ds, const std::string& path);
RetrievalDataset read_reqa_jsonl(const std::string& path);
void write_stats_json(const DatasetStats& stats, const std::string& path);
std::string stats_to_json(const DatasetStats& stats);

}  // namespace endx
