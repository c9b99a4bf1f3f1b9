#pragma once

#include <string>

#include "endx/common.hpp"
#include "endx/encoder.hpp"
#include "endx/params.hpp"
#include "endx/tape.hpp"

namespace endx {

struct AggregatorConfig {
    int hops = 4;          // r
    int att_dim = 0;       // d_att; 0 means model dim
    int out_dim = 0;       // d_e;   0 means model dim
    double ortho_penalty = 0.0;  // Frobenius penalty on A·Aᵀ − I; 0 disables

    int att_dim_or(int d_r) const { return att_dim > 0 ? att_dim : d_r; }
    int out_dim_or(int d_r) const { return out_dim > 0 ? out_dim : d_r; }

    void validate() const {
        if (hops < 1) fail("aggregator: hops must be >= 1");
        if (att_dim < 0 || out_dim < 0) fail("aggregator: dims must be positive");
        if (ortho_penalty < 0) fail("aggregator: penalty must be >= 0");
    }
};

namespace detail {

/// Hop attention over the valid positions: softmax_rows(W2 tanh(W1 Hᵀ)),
/// shape hops x valid_count. Pads are excluded up front, which both masks
/// them and keeps the result independent of pad placement.
template <typename S>
Var hop_attention_compact(Tape<S>& t, const ContextualizedSeq& seq,
                          TapeBinding<S>& p, const std::string& prefix) {
    Var w1 = p(prefix + ".w1");
    Var w2 = p(prefix + ".w2");
    Var logits = matmul(t, w2, tanh_op(t, matmul(t, w1, transpose(t, seq.compact))));
    return softmax_rows(t, logits);
}

}  // namespace detail

/// Full-length view of the hop-attention matrix (hops x length): valid
/// columns carry the softmax weights, pad columns are exactly zero.
template <typename S>
Var hop_attention(Tape<S>& t, const ContextualizedSeq& seq,
                  const AggregatorConfig& cfg, TapeBinding<S>& p,
                  const std::string& prefix) {
    cfg.validate();
    Var a = detail::hop_attention_compact(t, seq, p, prefix);
    Var cols_as_rows = transpose(t, a);
    Var scattered = scatter_rows(t, cols_as_rows, seq.valid_positions,
                                 seq.length);
    return transpose(t, scattered);
}

/// Pools a contextualized sequence into one fixed-length embedding
/// (1 x d_e): multi-hop attention, pooled rows A·H flattened, then an
/// affine projection. If ortho_penalty > 0 and penalty_out is given, the
/// scaled ‖AAᵀ − I‖²_F regularizer is emitted through penalty_out.
template <typename S>
Var aggregate(Tape<S>& t, const ContextualizedSeq& seq,
              const AggregatorConfig& cfg, TapeBinding<S>& p,
              const std::string& prefix, Var* penalty_out = nullptr) {
    cfg.validate();
    if (seq.valid_count() < 1) fail("aggregate: all-pad sequence");
    Var a = detail::hop_attention_compact(t, seq, p, prefix);
    Var pooled = matmul(t, a, seq.compact);
    Var flat = reshape_to_row(t, pooled);
    Var out = add_rowvec(t, matmul(t, flat, p(prefix + ".proj")),
                         p(prefix + ".proj_b"));

    if (penalty_out && cfg.ortho_penalty > 0) {
        Var gram = matmul(t, a, transpose(t, a));
        Var eye = t.constant(Mat<S>::Identity(cfg.hops, cfg.hops));
        Var diff = sub(t, gram, eye);
        *penalty_out = scale(t, sum_all(t, mul(t, diff, diff)),
                             static_cast<S>(cfg.ortho_penalty));
    }
    return out;
}

}  // namespace endx
