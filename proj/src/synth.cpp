#include "endx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "endx/common.hpp"

namespace endx {
namespace {

/// Pronounceable pseudo-words keep the corpus readable while guaranteeing
/// that content words never collide with template scaffolding.
std::string make_word(std::mt19937_64& rng) {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                   "p", "r", "s", "t", "v", "z", "ch", "sh"};
    static const char* vowels[] = {"a", "e", "i", "o", "u"};
    std::uniform_int_distribution<int> onset_dist(0, 15);
    std::uniform_int_distribution<int> vowel_dist(0, 4);
    std::uniform_int_distribution<int> syllable_dist(2, 3);
    std::string word;
    const int syllables = syllable_dist(rng);
    for (int s = 0; s < syllables; ++s) {
        word += onsets[onset_dist(rng)];
        word += vowels[vowel_dist(rng)];
    }
    return word;
}

std::vector<std::string> unique_words(std::mt19937_64& rng, std::size_t count,
                                      std::set<std::string>& taken) {
    std::vector<std::string> out;
    out.reserve(count);
    while (out.size() < count) {
        std::string w = make_word(rng);
        if (taken.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

struct ContentWords {
    std::string adj, noun, verb, place;
};

/// Eight structurally distinct paraphrase templates, each anchored on at
/// least two of the answer's content words.
std::string render_question(int tpl, const ContentWords& w) {
    switch (tpl) {
        case 0: return "where does the " + w.adj + " " + w.noun + " " + w.verb;
        case 1: return "what " + w.verb + " in the " + w.place;
        case 2:
            return "does the " + w.adj + " " + w.noun + " " + w.verb +
                   " in the " + w.place;
        case 3: return "which " + w.noun + " can " + w.verb;
        case 4: return "tell me about the " + w.adj + " " + w.noun;
        case 5:
            return "who knows why the " + w.noun + " " + w.verb + " in the " +
                   w.place;
        case 6: return "is there a " + w.noun + " that " + w.verb;
        case 7:
            return "how often does the " + w.noun + " " + w.verb + " near the " +
                   w.place;
    }
    fail("synth: unknown template " + std::to_string(tpl));
}

}  // namespace

void SynthConfig::validate() const {
    if (num_answers < 1) fail("synth: num_answers must be >= 1");
    if (min_questions < 1) fail("synth: min_questions must be >= 1");
    if (max_questions < min_questions || max_questions > 8)
        fail("synth: max_questions must lie in [min_questions, 8]");
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
        fail("synth: holdout_fraction must lie in [0, 1)");
    if (noise_words < 1) fail("synth: noise_words must be >= 1");
}

SyntheticData make_synthetic_one_to_many(const SynthConfig& cfg) {
    cfg.validate();
    // Template scaffolding words can never be generated as content words.
    std::set<std::string> taken = {
        "where", "does",  "the",  "what", "in",    "which", "can", "tell",
        "me",    "about", "who",  "knows", "why",  "is",    "there", "a",
        "that",  "how",   "often", "near"};

    auto word_rng = seeded_rng(cfg.seed, "synth.words");
    const auto n = static_cast<std::size_t>(cfg.num_answers);
    std::vector<std::string> adjs = unique_words(word_rng, n, taken);
    std::vector<std::string> nouns = unique_words(word_rng, n, taken);
    std::vector<std::string> verbs = unique_words(word_rng, n, taken);
    std::vector<std::string> places = unique_words(word_rng, n, taken);
    std::vector<std::string> noise = unique_words(
        word_rng, static_cast<std::size_t>(cfg.noise_words), taken);

    auto fan_rng = seeded_rng(cfg.seed, "synth.fan");
    auto template_rng = seeded_rng(cfg.seed, "synth.templates");
    auto noise_rng = seeded_rng(cfg.seed, "synth.noise");
    std::uniform_int_distribution<int> fan_dist(cfg.min_questions,
                                                cfg.max_questions);
    std::uniform_int_distribution<int> noise_dist(0, cfg.noise_words - 1);

    SyntheticData data;
    int question_id = 0;
    for (int aid = 0; aid < cfg.num_answers; ++aid) {
        const auto ai = static_cast<std::size_t>(aid);
        const ContentWords words{adjs[ai], nouns[ai], verbs[ai], places[ai]};
        const std::string answer_text = "the " + words.adj + " " + words.noun +
                                        " " + words.verb + " in the " +
                                        words.place;
        data.full.answers.push_back({aid, answer_text});
        data.train.answers.push_back({aid, answer_text});
        data.test.answers.push_back({aid, answer_text});

        const int fan = fan_dist(fan_rng);
        data.questions_per_answer[aid] = fan;
        std::vector<int> templates{0, 1, 2, 3, 4, 5, 6, 7};
        std::shuffle(templates.begin(), templates.end(), template_rng);
        // Held-out paraphrases: a seeded fraction, at least one when the
        // answer has a spare, never the answer's only question.
        const int holdout =
            fan >= 2 ? std::max(1, static_cast<int>(std::floor(
                                        fan * cfg.holdout_fraction)))
                     : 0;
        for (int k = 0; k < fan; ++k) {
            std::string text = render_question(templates[static_cast<std::size_t>(k)], words) +
                               " " + noise[static_cast<std::size_t>(noise_dist(noise_rng))];
            const Question q{question_id, text};
            data.full.questions.push_back(q);
            data.full.pairs.push_back({question_id, aid});
            const bool held_out = k >= fan - holdout;
            RetrievalDataset& side = held_out ? data.test : data.train;
            side.questions.push_back(q);
            side.pairs.push_back({question_id, aid});
            ++question_id;
        }
    }
    data.full.validate();
    data.train.validate();
    data.test.validate();
    return data;
}

RetrievalDataset restrict_to_answers(const RetrievalDataset& ds,
                                     const std::set<int>& keep) {
    RetrievalDataset out;
    std::set<int> kept_questions;
    for (const QAPair& p : ds.pairs)
        if (keep.count(p.answer_id)) {
            out.pairs.push_back(p);
            kept_questions.insert(p.question_id);
        }
    for (const Question& q : ds.questions)
        if (kept_questions.count(q.id)) out.questions.push_back(q);
    for (const AnswerSentence& a : ds.answers)
        if (keep.count(a.id)) out.answers.push_back(a);
    out.validate();
    return out;
}

}  // namespace endx
