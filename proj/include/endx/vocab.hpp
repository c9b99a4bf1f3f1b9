#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace endx {

/// Lowercased word/punctuation tokens: maximal runs of alphanumeric bytes
/// (multi-byte UTF-8 sequences count as word bytes) form word tokens; every
/// other non-whitespace byte is a single-character token.
std::vector<std::string> split_tokens(const std::string& text);

/// Token-to-id map with reserved ids pad=0 and unknown=1; real tokens get
/// dense ids starting at 2.
class Vocabulary {
public:
    static constexpr int pad_id = 0;
    static constexpr int unknown_id = 1;

    Vocabulary() = default;

    /// Builds from raw texts: frequency-descending, ties broken
    /// lexicographically, truncated to `cap` total ids (reserved included).
    static Vocabulary build(const std::vector<std::string>& texts,
                            std::size_t cap);

    /// One token per line; line i (0-based) holds the token with id i+2.
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Unknown tokens map to unknown_id.
    int id_of(const std::string& token) const;
    const std::string& token_of(int id) const;
    std::size_t size() const { return tokens_.size() + 2; }

    /// Stable fingerprint of the full token list (checkpoint linkage).
    std::uint64_t content_hash() const;

private:
    std::vector<std::string> tokens_;  // index = id - 2
    std::unordered_map<std::string, int> index_;
    void rebuild_index();
};

/// Lowercase, split, map to ids, truncate to max_len. Errors on text that
/// is empty after trimming.
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab,
                          std::size_t max_len);

}  // namespace endx
