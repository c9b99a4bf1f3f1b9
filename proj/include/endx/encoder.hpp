#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "endx/common.hpp"
#include "endx/instrumentation.hpp"
#include "endx/params.hpp"
#include "endx/tape.hpp"

namespace endx {

enum class EncoderKind { transformer, rnn, gru, lstm };

inline const char* to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::transformer: return "transformer";
        case EncoderKind::rnn: return "rnn";
        case EncoderKind::gru: return "gru";
        case EncoderKind::lstm: return "lstm";
    }
    return "?";
}

inline EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "transformer") return EncoderKind::transformer;
    if (s == "rnn") return EncoderKind::rnn;
    if (s == "gru") return EncoderKind::gru;
    if (s == "lstm") return EncoderKind::lstm;
    fail("encoder: unknown kind '" + s + "'");
}

struct EncoderConfig {
    EncoderKind kind = EncoderKind::transformer;
    int layers = 2;
    int model_dim = 64;  // d_r
    int heads = 4;       // transformer only
    int max_question_len = 64;
    int max_answer_len = 128;
    bool share_towers = false;

    void validate() const {
        if (layers < 1) fail("encoder: layers must be >= 1");
        if (model_dim < 1) fail("encoder: model dim must be positive");
        if (max_question_len < 1 || max_answer_len < 1)
            fail("encoder: max lengths must be positive");
        if (kind == EncoderKind::transformer) {
            if (heads < 1) fail("encoder: head count must be positive");
            if (model_dim % heads != 0)
                fail("encoder: model dim " + std::to_string(model_dim) +
                     " not divisible by " + std::to_string(heads) + " heads");
        }
    }
};

/// Contextualized token representations for one sequence. `full` spans the
/// original length with pad rows exactly zero; `compact` holds only the
/// valid rows (in order), which downstream consumers use so that results do
/// not depend on where pads sit.
struct ContextualizedSeq {
    Var full;
    Var compact;
    std::vector<int> valid_positions;
    int length = 0;

    int valid_count() const { return static_cast<int>(valid_positions.size()); }
};

constexpr int kPadId = 0;
constexpr int kUnknownId = 1;

/// Sinusoidal position table for `count` positions of width dim. Positions
/// index valid (non-pad) tokens only, so pads never consume a position.
template <typename S>
Mat<S> sinusoidal_positions(Eigen::Index count, Eigen::Index dim) {
    Mat<S> pe(count, dim);
    for (Eigen::Index pos = 0; pos < count; ++pos)
        for (Eigen::Index j = 0; j < dim; ++j) {
            double exponent = static_cast<double>(2 * (j / 2)) /
                              static_cast<double>(dim);
            double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            pe(pos, j) = static_cast<S>(j % 2 == 0 ? std::sin(angle)
                                                   : std::cos(angle));
        }
    return pe;
}

namespace detail {

/// Multi-head scaled dot-product attention with guide rows as queries and
/// source rows as keys/values; both inputs are compact (no pads), so the
/// softmax needs no mask. Returns guide_rows x d_r (concatenated heads).
template <typename S>
Var attention_heads(Tape<S>& t, Var guide, Var source, Var wq, Var wk, Var wv,
                    int heads) {
    const Eigen::Index d = t.value(guide).cols();
    if (t.value(source).cols() != d)
        fail("attention: guide and source dims differ");
    const Eigen::Index dh = d / heads;
    Var q = matmul(t, guide, wq);
    Var k = matmul(t, source, wk);
    Var v = matmul(t, source, wv);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int h = 0; h < heads; ++h) {
        Var qh = slice_cols(t, q, h * dh, dh);
        Var kh = slice_cols(t, k, h * dh, dh);
        Var vh = slice_cols(t, v, h * dh, dh);
        Var scores = scale(t, matmul(t, qh, transpose(t, kh)), inv_sqrt);
        Var att = softmax_rows(t, scores);
        outs.push_back(matmul(t, att, vh));
    }
    return concat_cols(t, outs);
}

/// Two-layer position-wise FFN: relu(x W1 + b1) W2 + b2.
template <typename S>
Var feed_forward(Tape<S>& t, Var x, Var w1, Var b1, Var w2, Var b2) {
    Var h = relu(t, add_rowvec(t, matmul(t, x, w1), b1));
    return add_rowvec(t, matmul(t, h, w2), b2);
}

template <typename S>
Var transformer_block(Tape<S>& t, Var x, TapeBinding<S>& p,
                      const std::string& prefix, int heads) {
    Var att = attention_heads(t, x, x, p(prefix + ".attn.wq"),
                              p(prefix + ".attn.wk"), p(prefix + ".attn.wv"),
                              heads);
    Var proj = matmul(t, att, p(prefix + ".attn.wo"));
    Var x1 = layer_norm_rows(t, add(t, x, proj), p(prefix + ".ln1.gain"),
                             p(prefix + ".ln1.bias"));
    Var ff = feed_forward(t, x1, p(prefix + ".ffn.w1"), p(prefix + ".ffn.b1"),
                          p(prefix + ".ffn.w2"), p(prefix + ".ffn.b2"));
    return layer_norm_rows(t, add(t, x1, ff), p(prefix + ".ln2.gain"),
                           p(prefix + ".ln2.bias"));
}

template <typename S>
Var recurrent_cell(Tape<S>& t, EncoderKind kind, Var xt, Var h_prev, Var c_prev,
                   Var& c_next, TapeBinding<S>& p, const std::string& prefix) {
    auto affine = [&](const char* gate, Var input, Var hidden) {
        Var wx = p(prefix + ".wx" + gate);
        Var wh = p(prefix + ".wh" + gate);
        Var b = p(prefix + ".b" + gate);
        return add(t, add(t, matmul(t, input, wx), matmul(t, hidden, wh)),
                   b);
    };
    switch (kind) {
        case EncoderKind::rnn:
            return tanh_op(t, affine("", xt, h_prev));
        case EncoderKind::gru: {
            Var z = sigmoid(t, affine("z", xt, h_prev));
            Var r = sigmoid(t, affine("r", xt, h_prev));
            Var n = tanh_op(t, affine("n", xt, mul(t, r, h_prev)));
            Var ones = t.constant(Mat<S>::Ones(1, t.value(xt).cols()));
            return add(t, mul(t, sub(t, ones, z), n), mul(t, z, h_prev));
        }
        case EncoderKind::lstm: {
            Var i = sigmoid(t, affine("i", xt, h_prev));
            Var f = sigmoid(t, affine("f", xt, h_prev));
            Var o = sigmoid(t, affine("o", xt, h_prev));
            Var g = tanh_op(t, affine("g", xt, h_prev));
            c_next = add(t, mul(t, f, c_prev), mul(t, i, g));
            return mul(t, o, tanh_op(t, c_next));
        }
        case EncoderKind::transformer:
            break;
    }
    fail("recurrent_cell: not a recurrent kind");
}

/// One bidirectional recurrent layer over a compact sequence; the two
/// directions are summed so the width stays d_r.
template <typename S>
Var recurrent_layer(Tape<S>& t, EncoderKind kind, Var x, TapeBinding<S>& p,
                    const std::string& prefix) {
    const Eigen::Index n = t.value(x).rows();
    const Eigen::Index d = t.value(x).cols();
    auto run = [&](bool reverse, const std::string& dir) {
        Var h = t.constant(Mat<S>::Zero(1, d));
        Var c = t.constant(Mat<S>::Zero(1, d));
        std::vector<Var> states(static_cast<std::size_t>(n));
        for (Eigen::Index step = 0; step < n; ++step) {
            Eigen::Index pos = reverse ? n - 1 - step : step;
            Var xt = slice_rows(t, x, pos, 1);
            Var c_next = c;
            h = recurrent_cell(t, kind, xt, h, c, c_next, p, prefix + "." + dir);
            c = c_next;
            states[static_cast<std::size_t>(pos)] = h;
        }
        return concat_rows(t, states);
    };
    return add(t, run(false, "fwd"), run(true, "bwd"));
}

}  // namespace detail

/// Encodes a token-id sequence into contextualized representations. Valid
/// (non-pad) tokens are compacted, embedded, given sinusoidal positions by
/// valid ordinal, and run through the configured blocks; pad rows of the
/// full-length output are exactly zero and carry no gradient.
template <typename S>
ContextualizedSeq encode_sequence(Tape<S>& t, const std::vector<int>& ids,
                                  const EncoderConfig& cfg, TapeBinding<S>& p,
                                  const std::string& tower, int max_len) {
    cfg.validate();
    if (tower != "dual" && tower != "cross")
        fail("encode_sequence: tower must be 'dual' or 'cross'");
    if (static_cast<int>(ids.size()) > max_len)
        fail("encode_sequence: sequence length " + std::to_string(ids.size()) +
             " exceeds max " + std::to_string(max_len));
    if (ids.empty()) fail("encode_sequence: empty sequence");
    bump_encoder_calls();

    const std::string prefix = cfg.share_towers ? "dual" : tower;
    Var table = p(prefix + ".embed");
    const Eigen::Index vocab_rows = t.value(table).rows();

    std::vector<int> valid_ids, positions;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= vocab_rows)
            fail("encode_sequence: token id " + std::to_string(ids[i]) +
                 " outside vocabulary of size " + std::to_string(vocab_rows));
        if (ids[i] != kPadId) {
            valid_ids.push_back(ids[i]);
            positions.push_back(static_cast<int>(i));
        }
    }
    if (valid_ids.empty())
        fail("encode_sequence: all-pad sequence");

    Var x = gather_rows(t, table, valid_ids);
    Var pe = t.constant(sinusoidal_positions<S>(
        static_cast<Eigen::Index>(valid_ids.size()), cfg.model_dim));
    x = add(t, x, pe);

    for (int l = 0; l < cfg.layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        if (cfg.kind == EncoderKind::transformer)
            x = detail::transformer_block(t, x, p, lp, cfg.heads);
        else
            x = detail::recurrent_layer(t, cfg.kind, x, p, lp);
    }

    ContextualizedSeq seq;
    seq.compact = x;
    seq.valid_positions = positions;
    seq.length = static_cast<int>(ids.size());
    seq.full = scatter_rows(t, x, positions,
                            static_cast<Eigen::Index>(ids.size()));
    return seq;
}

}  // namespace endx
