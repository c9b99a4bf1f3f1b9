#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace endx {

/// Error type thrown for all contract violations (bad shapes, bad files,
/// numeric blow-ups). The message is meant to be actionable on its own.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

/// 64-bit FNV-1a. Used for content fingerprints and name-keyed RNG seeding.
inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t n,
                                   std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64_bytes(s.data(), s.size(), h);
}

/// Deterministic per-name RNG: the stream depends on (seed, name) only, so
/// parameter initialization does not depend on creation order.
inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::string_view name) {
    std::uint64_t h = fnv1a64(name);
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h),
                      static_cast<std::uint32_t>(h >> 32)};
    return std::mt19937_64(seq);
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace endx
