#pragma once

#include <cstdint>

namespace endx {

/// Process-wide counters used to assert architectural properties in tests:
/// answer-corpus embedding and query answering must never touch the
/// cross-attention path, and a query must encode the question exactly once.
std::uint64_t cross_attention_calls();
std::uint64_t encoder_calls();
void bump_cross_attention_calls();
void bump_encoder_calls();
void reset_instrumentation_counters();

}  // namespace endx
