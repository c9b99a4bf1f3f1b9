#pragma once

#include <cstdint>
#include <map>
#include <set>

#include "endx/data.hpp"

namespace endx {

/// Controls for the synthetic one-to-many corpus: template answers whose
/// content words are unique pseudo-words, each matched by 1–8 structurally
/// different question paraphrases built from the same content words. A
/// seeded fraction of each answer's paraphrases is held out as the test set
/// while every answer stays in the candidate pool.
struct SynthConfig {
    int num_answers = 200;
    int min_questions = 1;
    int max_questions = 8;
    double holdout_fraction = 0.25;  // of each answer's questions, >=1 kept
    int noise_words = 150;           // shared filler pool appended to questions
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticData {
    RetrievalDataset full;   // every question
    RetrievalDataset train;  // full minus held-out paraphrases
    RetrievalDataset test;   // held-out paraphrases; pool = all answers
    std::map<int, int> questions_per_answer;  // full-corpus fan-out
};

SyntheticData make_synthetic_one_to_many(const SynthConfig& cfg);

/// Keeps only pairs into `keep`, the questions owning such pairs, and the
/// kept answers themselves (candidate pool restricted accordingly).
RetrievalDataset restrict_to_answers(const RetrievalDataset& ds,
                                     const std::set<int>& keep);

}  // namespace endx
