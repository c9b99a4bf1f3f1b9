#include "endx/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "endx/common.hpp"

namespace endx {

namespace {

bool is_word_byte(unsigned char c) {
    return std::isalnum(c) || c >= 0x80;
}

}  // namespace

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word);
            word.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            flush();
        } else if (is_word_byte(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
            out.emplace_back(1, static_cast<char>(c));
        }
    }
    flush();
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts,
                             std::size_t cap) {
    if (cap < 2) fail("vocabulary: cap must be >= 2 (reserved ids)");
    std::map<std::string, std::size_t> freq;
    for (const auto& text : texts)
        for (auto& tok : split_tokens(text)) ++freq[tok];

    std::vector<std::pair<std::string, std::size_t>> ordered(freq.begin(),
                                                             freq.end());
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary v;
    std::size_t keep = std::min(ordered.size(), cap - 2);
    v.tokens_.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) v.tokens_.push_back(ordered[i].first);
    v.rebuild_index();
    return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("vocabulary: cannot open '" + path.string() + "'");
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty())
            fail("vocabulary: empty token at line " +
                 std::to_string(v.tokens_.size() + 1) + " of '" + path.string() +
                 "'");
        v.tokens_.push_back(line);
    }
    v.rebuild_index();
    return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail("vocabulary: cannot write '" + path.string() + "'");
    for (const auto& tok : tokens_) out << tok << '\n';
    if (!out) fail("vocabulary: write failed for '" + path.string() + "'");
}

void Vocabulary::rebuild_index() {
    index_.clear();
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        auto [_, inserted] = index_.emplace(tokens_[i], static_cast<int>(i) + 2);
        if (!inserted) fail("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unknown_id : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    static const std::string pad = "<pad>", unk = "<unk>";
    if (id == pad_id) return pad;
    if (id == unknown_id) return unk;
    std::size_t i = static_cast<std::size_t>(id) - 2;
    if (id < 0 || i >= tokens_.size())
        fail("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[i];
}

std::uint64_t Vocabulary::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const char sep = '\n';
    for (const auto& tok : tokens_) {
        h = fnv1a64_bytes(tok.data(), tok.size(), h);
        h = fnv1a64_bytes(&sep, 1, h);
    }
    return h;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab,
                          std::size_t max_len) {
    if (max_len < 1) fail("tokenize: max_len must be >= 1");
    bool blank = true;
    for (unsigned char c : text)
        if (!std::isspace(c)) {
            blank = false;
            break;
        }
    if (blank) fail("tokenize: empty input");
    auto tokens = split_tokens(text);
    std::vector<int> ids;
    ids.reserve(std::min(tokens.size(), max_len));
    for (const auto& tok : tokens) {
        if (ids.size() == max_len) break;
        ids.push_back(vocab.id_of(tok));
    }
    return ids;
}

}  // namespace endx
