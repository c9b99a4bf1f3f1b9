#include "endx/instrumentation.hpp"

#include <atomic>

namespace endx {

namespace {
std::atomic<std::uint64_t> g_cross_attention_calls{0};
std::atomic<std::uint64_t> g_encoder_calls{0};
}  // namespace

std::uint64_t cross_attention_calls() { return g_cross_attention_calls.load(); }
std::uint64_t encoder_calls() { return g_encoder_calls.load(); }
void bump_cross_attention_calls() { ++g_cross_attention_calls; }
void bump_encoder_calls() { ++g_encoder_calls; }
void reset_instrumentation_counters() {
    g_cross_attention_calls = 0;
    g_encoder_calls = 0;
}

}  // namespace endx
