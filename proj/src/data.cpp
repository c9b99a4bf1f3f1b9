#include "endx/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <deque>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace endx {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void parse_fail(const std::string& origin, const std::string& at,
                             const std::string& what) {
    fail(origin + ": " + at + " " + what);
}

std::string idx(const std::string& base, std::size_t i) {
    return base + "[" + std::to_string(i) + "]";
}

}  // namespace

std::vector<ParsedParagraph> parse_rc_text(const std::string& text,
                                           const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(origin + ": not valid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("data"))
        parse_fail(origin, "$", "missing 'data' array");
    const json& data = doc["data"];
    if (!data.is_array()) parse_fail(origin, "data", "is not an array");

    std::vector<ParsedParagraph> out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::string at_article = idx("data", i);
        const json& article = data[i];
        if (!article.is_object() || !article.contains("paragraphs"))
            parse_fail(origin, at_article, "missing 'paragraphs' array");
        const json& paragraphs = article["paragraphs"];
        if (!paragraphs.is_array())
            parse_fail(origin, at_article + ".paragraphs", "is not an array");

        for (std::size_t j = 0; j < paragraphs.size(); ++j) {
            const std::string at_para = at_article + "." + idx("paragraphs", j);
            const json& para = paragraphs[j];
            if (!para.is_object() || !para.contains("context") ||
                !para["context"].is_string())
                parse_fail(origin, at_para, "missing string 'context'");
            if (!para.contains("qas") || !para["qas"].is_array())
                parse_fail(origin, at_para, "missing 'qas' array");

            ParsedParagraph parsed;
            parsed.context = para["context"].get<std::string>();
            const json& qas = para["qas"];
            for (std::size_t k = 0; k < qas.size(); ++k) {
                const std::string at_qa = at_para + "." + idx("qas", k);
                const json& qa = qas[k];
                if (!qa.is_object() || !qa.contains("question") ||
                    !qa["question"].is_string())
                    parse_fail(origin, at_qa, "missing string 'question'");
                if (!qa.contains("answers") || !qa["answers"].is_array())
                    parse_fail(origin, at_qa, "missing 'answers' array");
                const json& answers = qa["answers"];
                if (answers.empty())
                    parse_fail(origin, at_qa + ".answers", "is empty");
                const json& first = answers[0];
                if (!first.is_object() || !first.contains("answer_start") ||
                    !first["answer_start"].is_number_integer())
                    parse_fail(origin, at_qa + ".answers[0]",
                               "missing integer 'answer_start'");
                long long start = first["answer_start"].get<long long>();
                if (start < 0)
                    parse_fail(origin, at_qa + ".answers[0].answer_start",
                               "is negative");

                ParsedQA rec;
                rec.question = qa["question"].get<std::string>();
                rec.answer_start = static_cast<std::size_t>(start);
                if (rec.question.empty())
                    parse_fail(origin, at_qa + ".question", "is empty");
                parsed.qas.push_back(std::move(rec));
            }
            out.push_back(std::move(parsed));
        }
    }
    return out;
}

std::vector<ParsedParagraph> parse_rc_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path + ": cannot open file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_rc_text(buf.str(), path);
}

// ---------------------------------------------------------------------------
// Sentence splitting
// ---------------------------------------------------------------------------

namespace {

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

/// True when the '.' at dot_pos ends one of the guarded abbreviations.
bool abbreviation_at(const std::string& text, std::size_t dot_pos) {
    static const std::array<const char*, 10> kGuards{
        "Mr.", "Mrs.", "Dr.", "St.", "U.S.", "e.g.",
        "i.e.", "etc.", "vs.", "No."};
    // The token is everything from the previous whitespace up to the dot.
    std::size_t tok_begin = dot_pos;
    while (tok_begin > 0 && !is_ws(text[tok_begin - 1])) --tok_begin;
    const std::string token = text.substr(tok_begin, dot_pos - tok_begin + 1);
    for (const char* g : kGuards)
        if (token == g) return true;
    return false;
}

}  // namespace

std::vector<SentenceSpan> split_sentences(const std::string& context) {
    std::vector<SentenceSpan> out;
    const std::size_t n = context.size();
    std::size_t start = 0;
    while (start < n && is_ws(context[start])) ++start;

    std::size_t i = start;
    while (i < n) {
        const char c = context[i];
        if (c == '.' || c == '!' || c == '?') {
            const bool guarded = c == '.' && abbreviation_at(context, i);
            std::size_t next = i + 1;
            while (next < n && is_ws(context[next])) ++next;
            const bool at_eot = next >= n;
            const bool ws_then_upper =
                next > i + 1 && next < n &&
                std::isupper(static_cast<unsigned char>(context[next])) != 0;
            if (!guarded && (at_eot || ws_then_upper)) {
                out.push_back({context.substr(start, i + 1 - start), start,
                               i + 1});
                start = next;
                i = next;
                continue;
            }
        }
        ++i;
    }
    if (start < n) {  // trailing material without a terminator
        std::size_t end = n;
        while (end > start && is_ws(context[end - 1])) --end;
        if (end > start)
            out.push_back({context.substr(start, end - start), start, end});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

namespace {

template <typename T>
const T& by_id(const std::vector<T>& items, int id, const char* what) {
    for (const T& item : items)
        if (item.id == id) return item;
    fail(std::string("dataset: unknown ") + what + " id " + std::to_string(id));
}

}  // namespace

const Question& RetrievalDataset::question_by_id(int id) const {
    return by_id(questions, id, "question");
}

const AnswerSentence& RetrievalDataset::answer_by_id(int id) const {
    return by_id(answers, id, "answer");
}

std::vector<int> RetrievalDataset::matched_answer_ids(int question_id) const {
    std::vector<int> out;
    for (const QAPair& p : pairs)
        if (p.question_id == question_id) out.push_back(p.answer_id);
    return out;
}

std::uint64_t RetrievalDataset::content_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix_str = [&h](const std::string& s) {
        h = fnv1a64(s, h);
        const char sep = '\x1f';
        h = fnv1a64_bytes(&sep, 1, h);
    };
    auto mix_int = [&h](std::uint64_t v) { h = fnv1a64_bytes(&v, sizeof v, h); };
    mix_int(questions.size());
    for (const Question& q : questions) {
        mix_int(static_cast<std::uint64_t>(q.id));
        mix_str(q.text);
    }
    mix_int(answers.size());
    for (const AnswerSentence& a : answers) {
        mix_int(static_cast<std::uint64_t>(a.id));
        mix_str(a.text);
    }
    mix_int(pairs.size());
    for (const QAPair& p : pairs) {
        mix_int(static_cast<std::uint64_t>(p.question_id));
        mix_int(static_cast<std::uint64_t>(p.answer_id));
    }
    return h;
}

void RetrievalDataset::validate() const {
    std::unordered_set<int> qids, aids;
    for (const Question& q : questions) {
        if (q.text.empty()) fail("dataset: empty question text");
        if (!qids.insert(q.id).second)
            fail("dataset: duplicate question id " + std::to_string(q.id));
    }
    for (const AnswerSentence& a : answers) {
        if (a.text.empty()) fail("dataset: empty answer text");
        if (!aids.insert(a.id).second)
            fail("dataset: duplicate answer id " + std::to_string(a.id));
    }
    for (const QAPair& p : pairs) {
        if (!qids.count(p.question_id))
            fail("dataset: pair references unknown question id " +
                 std::to_string(p.question_id));
        if (!aids.count(p.answer_id))
            fail("dataset: pair references unknown answer id " +
                 std::to_string(p.answer_id));
    }
}

ReqaBuild build_reqa(const std::vector<ParsedParagraph>& paragraphs,
                     bool all_sentences) {
    ReqaBuild out;
    std::unordered_map<std::string, int> question_ids, answer_ids;

    auto intern = [](std::unordered_map<std::string, int>& index,
                     const std::string& text) {
        auto it = index.find(text);
        if (it != index.end()) return std::make_pair(it->second, false);
        int id = static_cast<int>(index.size());
        index.emplace(text, id);
        return std::make_pair(id, true);
    };

    for (const ParsedParagraph& para : paragraphs) {
        const auto sentences = split_sentences(para.context);
        for (const ParsedQA& qa : para.qas) {
            const SentenceSpan* hit = nullptr;
            for (const SentenceSpan& s : sentences)
                if (qa.answer_start >= s.begin && qa.answer_start < s.end) {
                    hit = &s;
                    break;
                }
            if (!hit) {
                ++out.skipped;
                continue;
            }
            auto [qid, q_new] = intern(question_ids, qa.question);
            if (q_new) out.dataset.questions.push_back({qid, qa.question});
            auto [aid, a_new] = intern(answer_ids, hit->text);
            if (a_new) out.dataset.answers.push_back({aid, hit->text});
            out.dataset.pairs.push_back({qid, aid});
        }
    }
    // The wider candidate pool appends every unmatched sentence as an
    // unlinked distractor; matched ids are unchanged between the two modes.
    if (all_sentences)
        for (const ParsedParagraph& para : paragraphs)
            for (const SentenceSpan& s : split_sentences(para.context)) {
                auto [aid, a_new] = intern(answer_ids, s.text);
                if (a_new) out.dataset.answers.push_back({aid, s.text});
            }
    out.dataset.validate();
    return out;
}

std::pair<RetrievalDataset, RetrievalDataset> make_splits(
    const RetrievalDataset& ds, std::uint64_t seed) {
    if (ds.questions.empty()) fail("make_splits: dataset has no questions");

    std::vector<int> order;
    order.reserve(ds.questions.size());
    for (const Question& q : ds.questions) order.push_back(q.id);
    auto rng = seeded_rng(seed, "splits");
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t train_count = ds.questions.size() * 9 / 10;
    std::unordered_set<int> train_qids(order.begin(),
                                       order.begin() +
                                           static_cast<std::ptrdiff_t>(
                                               train_count));

    auto project = [&](bool want_train) {
        RetrievalDataset side;
        std::unordered_set<int> kept_aids;
        for (const Question& q : ds.questions)
            if (train_qids.count(q.id) == static_cast<std::size_t>(want_train))
                side.questions.push_back(q);
        for (const QAPair& p : ds.pairs)
            if (train_qids.count(p.question_id) ==
                static_cast<std::size_t>(want_train)) {
                side.pairs.push_back(p);
                kept_aids.insert(p.answer_id);
            }
        for (const AnswerSentence& a : ds.answers)
            if (kept_aids.count(a.id)) side.answers.push_back(a);
        side.validate();
        return side;
    };
    return {project(true), project(false)};
}

std::vector<std::vector<QAPair>> batch_iter(const RetrievalDataset& ds, int b,
                                            std::uint64_t seed, int epoch) {
    if (b < 2) fail("batch_iter: batch size must be >= 2");
    if (epoch < 0) fail("batch_iter: negative epoch");
    if (static_cast<std::size_t>(b) > ds.pairs.size())
        fail("batch_iter: batch size " + std::to_string(b) +
             " exceeds pair count " + std::to_string(ds.pairs.size()));

    std::vector<QAPair> shuffled = ds.pairs;
    auto rng = seeded_rng(seed + static_cast<std::uint64_t>(epoch), "batches");
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    std::deque<QAPair> pending(shuffled.begin(), shuffled.end());
    std::vector<QAPair> deferred;
    std::vector<std::vector<QAPair>> out;
    std::vector<QAPair> cur;
    std::unordered_set<int> cur_q, cur_a;

    while (!pending.empty()) {
        QAPair p = pending.front();
        pending.pop_front();
        if (cur_q.count(p.question_id) || cur_a.count(p.answer_id)) {
            deferred.push_back(p);  // retry after this batch closes
            continue;
        }
        cur.push_back(p);
        cur_q.insert(p.question_id);
        cur_a.insert(p.answer_id);
        if (static_cast<int>(cur.size()) == b) {
            out.push_back(std::move(cur));
            cur.clear();
            cur_q.clear();
            cur_a.clear();
            pending.insert(pending.begin(), deferred.begin(), deferred.end());
            deferred.clear();
        }
    }
    return out;  // the final incomplete batch (and stuck leftovers) drop here
}

DatasetStats dataset_stats(const RetrievalDataset& ds) {
    DatasetStats s;
    s.questions = ds.questions.size();
    s.answers = ds.answers.size();
    s.pairs = ds.pairs.size();
    auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
    if (s.questions > 0)
        s.answers_per_question = round2(static_cast<double>(s.pairs) /
                                        static_cast<double>(s.questions));
    if (s.answers > 0)
        s.questions_per_answer = round2(static_cast<double>(s.pairs) /
                                        static_cast<double>(s.answers));
    return s;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void write_reqa_jsonl(const RetrievalDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path + ": cannot open for writing");
    std::unordered_set<int> linked;
    for (const QAPair& p : ds.pairs) {
        json line{{"question_id", p.question_id},
                  {"question", ds.question_by_id(p.question_id).text},
                  {"answer_id", p.answer_id},
                  {"answer", ds.answer_by_id(p.answer_id).text}};
        out << line.dump() << '\n';
        linked.insert(p.answer_id);
    }
    // Candidate-pool answers that no pair references (wider-pool builds)
    // are persisted as answer-only records.
    for (const AnswerSentence& a : ds.answers)
        if (!linked.count(a.id)) {
            json line{{"answer_id", a.id}, {"answer", a.text}};
            out << line.dump() << '\n';
        }
    if (!out) fail(path + ": write failed");
}

RetrievalDataset read_reqa_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path + ": cannot open file");
    RetrievalDataset ds;
    std::unordered_map<int, std::string> qseen, aseen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            fail(path + ":" + std::to_string(lineno) + ": not valid JSON: " +
                 e.what());
        }
        // Pair records carry all four keys; answer-only records (unlinked
        // candidate-pool entries) carry just the answer pair of keys.
        const bool has_question =
            rec.contains("question_id") || rec.contains("question");
        const auto required =
            has_question
                ? std::vector<const char*>{"question_id", "question",
                                           "answer_id", "answer"}
                : std::vector<const char*>{"answer_id", "answer"};
        for (const char* key : required)
            if (!rec.contains(key))
                fail(path + ":" + std::to_string(lineno) + ": missing '" +
                     key + "'");
        const int aid = rec["answer_id"].get<int>();
        const std::string a = rec["answer"].get<std::string>();
        auto a_it = aseen.find(aid);
        if (a_it == aseen.end()) {
            aseen.emplace(aid, a);
            ds.answers.push_back({aid, a});
        } else if (a_it->second != a) {
            fail(path + ":" + std::to_string(lineno) + ": answer id " +
                 std::to_string(aid) + " maps to two different texts");
        }
        if (!has_question) continue;

        const int qid = rec["question_id"].get<int>();
        const std::string q = rec["question"].get<std::string>();
        auto q_it = qseen.find(qid);
        if (q_it == qseen.end()) {
            qseen.emplace(qid, q);
            ds.questions.push_back({qid, q});
        } else if (q_it->second != q) {
            fail(path + ":" + std::to_string(lineno) +
                 ": question id " + std::to_string(qid) +
                 " maps to two different texts");
        }
        ds.pairs.push_back({qid, aid});
    }
    ds.validate();
    return ds;
}

std::string stats_to_json(const DatasetStats& stats) {
    json doc{{"questions", stats.questions},
             {"answers", stats.answers},
             {"pairs", stats.pairs},
             {"answers_per_question", stats.answers_per_question},
             {"questions_per_answer", stats.questions_per_answer}};
    return doc.dump(2);
}

void write_stats_json(const DatasetStats& stats, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path + ": cannot open for writing");
    out << stats_to_json(stats) << '\n';
    if (!out) fail(path + ": write failed");
}

}  // namespace endx
