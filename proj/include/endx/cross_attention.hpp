#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "endx/aggregator.hpp"
#include "endx/common.hpp"
#include "endx/encoder.hpp"
#include "endx/instrumentation.hpp"
#include "endx/params.hpp"
#include "endx/tape.hpp"

namespace endx {

struct CrossAttentionConfig {
    int heads = 4;    // l_h
    int ffn_dim = 0;  // inner width; 0 means 4 x model dim

    int ffn_dim_or(int d_r) const { return ffn_dim > 0 ? ffn_dim : 4 * d_r; }

    void validate(int d_r) const {
        if (heads < 1) fail("cross-attention: head count must be positive");
        if (d_r % heads != 0)
            fail("cross-attention: model dim " + std::to_string(d_r) +
                 " not divisible by " + std::to_string(heads) + " heads");
        if (ffn_dim < 0) fail("cross-attention: ffn dim must be positive");
    }
};

/// One interaction head: the guide supplies queries, the source supplies
/// keys and values, so the output is indexed by guide positions
/// (guide_valid x d_h). Head projections are column slices of the packed
/// d_r x d_r matrices.
template <typename S>
Var cross_head(Tape<S>& t, const ContextualizedSeq& source,
               const ContextualizedSeq& guide, TapeBinding<S>& p,
               const CrossAttentionConfig& cfg, int head) {
    const Eigen::Index d = t.value(source.compact).cols();
    if (t.value(guide.compact).cols() != d)
        fail("cross_head: source and guide dims differ");
    cfg.validate(static_cast<int>(d));
    if (head < 0 || head >= cfg.heads) fail("cross_head: head index out of range");
    if (guide.valid_count() < 1) fail("cross_head: guide is empty");
    if (source.valid_count() < 1) fail("cross_head: source is empty");

    const Eigen::Index dh = d / cfg.heads;
    Var wq = slice_cols(t, p("cross.attn.wq"), head * dh, dh);
    Var wk = slice_cols(t, p("cross.attn.wk"), head * dh, dh);
    Var wv = slice_cols(t, p("cross.attn.wv"), head * dh, dh);
    Var q = matmul(t, guide.compact, wq);
    Var k = matmul(t, source.compact, wk);
    Var v = matmul(t, source.compact, wv);
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    Var att = softmax_rows(t, scale(t, matmul(t, q, transpose(t, k)), inv_sqrt));
    return matmul(t, att, v);
}

/// Refines the guide under the source: concatenated heads projected by W_o,
/// then LayerNorm(H' + FFN(H')) — the residual wraps only the FFN. The
/// result inherits the guide's positions (guide_len x d_r, pads zero).
template <typename S>
ContextualizedSeq cross_refine(Tape<S>& t, const ContextualizedSeq& source,
                               const ContextualizedSeq& guide,
                               TapeBinding<S>& p,
                               const CrossAttentionConfig& cfg) {
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h)
        heads.push_back(cross_head(t, source, guide, p, cfg, h));
    Var hprime = matmul(t, concat_cols(t, heads), p("cross.attn.wo"));
    Var ff = detail::feed_forward(t, hprime, p("cross.attn.ffn.w1"),
                                  p("cross.attn.ffn.b1"), p("cross.attn.ffn.w2"),
                                  p("cross.attn.ffn.b2"));
    Var out = layer_norm_rows(t, add(t, hprime, ff), p("cross.attn.ln.gain"),
                              p("cross.attn.ln.bias"));

    ContextualizedSeq seq;
    seq.compact = out;
    seq.valid_positions = guide.valid_positions;
    seq.length = guide.length;
    seq.full = scatter_rows(t, out, guide.valid_positions,
                            static_cast<Eigen::Index>(guide.length));
    return seq;
}

/// Cross-embeddings for one (question, answer) pair: each side is refined
/// under the other, then pooled by the cross tower's aggregators. Counts
/// one cross-attention invocation — the inference path must keep this
/// counter at zero.
template <typename S>
std::pair<Var, Var> cross_embed(Tape<S>& t, const ContextualizedSeq& q_seq,
                                const ContextualizedSeq& a_seq,
                                TapeBinding<S>& p,
                                const CrossAttentionConfig& cfg,
                                const AggregatorConfig& agg) {
    bump_cross_attention_calls();
    ContextualizedSeq refined_q = cross_refine(t, q_seq, a_seq, p, cfg);
    ContextualizedSeq refined_a = cross_refine(t, a_seq, q_seq, p, cfg);
    Var rq = aggregate(t, refined_q, agg, p, "cross.agg.q");
    Var ra = aggregate(t, refined_a, agg, p, "cross.agg.a");
    return {rq, ra};
}

}  // namespace endx
