#pragma once

#include <json.hpp>

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "endx/aggregator.hpp"
#include "endx/common.hpp"
#include "endx/cross_attention.hpp"
#include "endx/encoder.hpp"
#include "endx/losses.hpp"
#include "endx/params.hpp"
#include "endx/vocab.hpp"

namespace endx {

/// Everything needed to rebuild the network from a checkpoint header.
struct ModelConfig {
    EncoderConfig encoder;
    AggregatorConfig aggregator;
    CrossAttentionConfig cross;
    GAMConfig gam;
    LossWeights weights;
    int vocab_size = 0;

    /// The cross tower exists only when some loss term consumes it.
    bool uses_cross_tower() const { return weights.cross > 0 || weights.gam > 0; }

    void validate() const {
        encoder.validate();
        aggregator.validate();
        if (uses_cross_tower()) cross.validate(encoder.model_dim);
        gam.validate();
        weights.validate();
        if (vocab_size < 2) fail("model: vocab size must be >= 2");
    }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const char* where,
                         std::initializer_list<const char*> allowed) {
    if (!j.is_object()) fail(std::string("config: ") + where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok)
            fail(std::string("config: unknown key '") + key + "' in " + where);
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    return it->get<T>();
}

}  // namespace detail

inline nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j;
    j["encoder"] = {{"kind", to_string(encoder.kind)},
                    {"layers", encoder.layers},
                    {"model_dim", encoder.model_dim},
                    {"heads", encoder.heads},
                    {"max_question_len", encoder.max_question_len},
                    {"max_answer_len", encoder.max_answer_len},
                    {"share_towers", encoder.share_towers}};
    j["aggregator"] = {{"hops", aggregator.hops},
                       {"att_dim", aggregator.att_dim},
                       {"out_dim", aggregator.out_dim},
                       {"ortho_penalty", aggregator.ortho_penalty}};
    j["cross"] = {{"heads", cross.heads}, {"ffn_dim", cross.ffn_dim}};
    j["gam"] = {{"kernel", to_string(gam.kernel)},
                {"sigma2_cross", gam.sigma2[0]},
                {"sigma2_dual", gam.sigma2[1]},
                {"targets", gam.targets},
                {"warmup_epochs", gam.warmup_epochs}};
    j["weights"] = {{"dual", weights.dual},
                    {"cross", weights.cross},
                    {"gam", weights.gam}};
    j["vocab_size"] = vocab_size;
    return j;
}

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    using detail::get_or;
    detail::require_keys(j, "model config",
                         {"encoder", "aggregator", "cross", "gam", "weights",
                          "vocab_size"});
    ModelConfig cfg;
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        detail::require_keys(e, "encoder",
                             {"kind", "layers", "model_dim", "heads",
                              "max_question_len", "max_answer_len",
                              "share_towers"});
        cfg.encoder.kind = encoder_kind_from_string(
            get_or<std::string>(e, "kind", "transformer"));
        cfg.encoder.layers = get_or(e, "layers", cfg.encoder.layers);
        cfg.encoder.model_dim = get_or(e, "model_dim", cfg.encoder.model_dim);
        cfg.encoder.heads = get_or(e, "heads", cfg.encoder.heads);
        cfg.encoder.max_question_len =
            get_or(e, "max_question_len", cfg.encoder.max_question_len);
        cfg.encoder.max_answer_len =
            get_or(e, "max_answer_len", cfg.encoder.max_answer_len);
        cfg.encoder.share_towers =
            get_or(e, "share_towers", cfg.encoder.share_towers);
    }
    if (j.contains("aggregator")) {
        const auto& a = j.at("aggregator");
        detail::require_keys(a, "aggregator",
                             {"hops", "att_dim", "out_dim", "ortho_penalty"});
        cfg.aggregator.hops = get_or(a, "hops", cfg.aggregator.hops);
        cfg.aggregator.att_dim = get_or(a, "att_dim", cfg.aggregator.att_dim);
        cfg.aggregator.out_dim = get_or(a, "out_dim", cfg.aggregator.out_dim);
        cfg.aggregator.ortho_penalty =
            get_or(a, "ortho_penalty", cfg.aggregator.ortho_penalty);
    }
    if (j.contains("cross")) {
        const auto& c = j.at("cross");
        detail::require_keys(c, "cross", {"heads", "ffn_dim"});
        cfg.cross.heads = get_or(c, "heads", cfg.cross.heads);
        cfg.cross.ffn_dim = get_or(c, "ffn_dim", cfg.cross.ffn_dim);
    }
    if (j.contains("gam")) {
        const auto& g = j.at("gam");
        detail::require_keys(g, "gam",
                             {"kernel", "sigma2_cross", "sigma2_dual", "targets",
                              "warmup_epochs"});
        cfg.gam.kernel =
            kernel_kind_from_string(get_or<std::string>(g, "kernel", "inner"));
        cfg.gam.sigma2[0] = get_or(g, "sigma2_cross", cfg.gam.sigma2[0]);
        cfg.gam.sigma2[1] = get_or(g, "sigma2_dual", cfg.gam.sigma2[1]);
        cfg.gam.targets = get_or(g, "targets", cfg.gam.targets);
        cfg.gam.warmup_epochs = get_or(g, "warmup_epochs", cfg.gam.warmup_epochs);
    }
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        detail::require_keys(w, "weights", {"dual", "cross", "gam"});
        cfg.weights.dual = get_or(w, "dual", cfg.weights.dual);
        cfg.weights.cross = get_or(w, "cross", cfg.weights.cross);
        cfg.weights.gam = get_or(w, "gam", cfg.weights.gam);
    }
    cfg.vocab_size = get_or(j, "vocab_size", cfg.vocab_size);
    return cfg;
}

// ---------------------------------------------------------------------------
// Parameter registration
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void register_encoder_tower(ParameterStore<S>& ps, const ModelConfig& cfg,
                            const std::string& tower, std::uint64_t seed) {
    const auto d = static_cast<Eigen::Index>(cfg.encoder.model_dim);
    ps.create(tower + ".embed", cfg.vocab_size, d, InitKind::xavier_uniform, seed);
    for (int l = 0; l < cfg.encoder.layers; ++l) {
        const std::string lp = tower + ".layer" + std::to_string(l);
        if (cfg.encoder.kind == EncoderKind::transformer) {
            for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
                ps.create(lp + w, d, d, InitKind::xavier_uniform, seed);
            ps.create(lp + ".ln1.gain", 1, d, InitKind::ones, seed);
            ps.create(lp + ".ln1.bias", 1, d, InitKind::zeros, seed);
            ps.create(lp + ".ln2.gain", 1, d, InitKind::ones, seed);
            ps.create(lp + ".ln2.bias", 1, d, InitKind::zeros, seed);
            ps.create(lp + ".ffn.w1", d, 4 * d, InitKind::xavier_uniform, seed);
            ps.create(lp + ".ffn.b1", 1, 4 * d, InitKind::zeros, seed);
            ps.create(lp + ".ffn.w2", 4 * d, d, InitKind::xavier_uniform, seed);
            ps.create(lp + ".ffn.b2", 1, d, InitKind::zeros, seed);
        } else {
            std::vector<std::string> gates;
            switch (cfg.encoder.kind) {
                case EncoderKind::rnn: gates = {""}; break;
                case EncoderKind::gru: gates = {"z", "r", "n"}; break;
                case EncoderKind::lstm: gates = {"i", "f", "o", "g"}; break;
                default: break;
            }
            for (const char* dir : {".fwd", ".bwd"})
                for (const auto& gate : gates) {
                    ps.create(lp + dir + ".wx" + gate, d, d,
                              InitKind::xavier_uniform, seed);
                    ps.create(lp + dir + ".wh" + gate, d, d,
                              InitKind::xavier_uniform, seed);
                    ps.create(lp + dir + ".b" + gate, 1, d, InitKind::zeros, seed);
                }
        }
    }
}

template <typename S>
void register_aggregator(ParameterStore<S>& ps, const ModelConfig& cfg,
                         const std::string& prefix, std::uint64_t seed) {
    const int d = cfg.encoder.model_dim;
    const auto att = static_cast<Eigen::Index>(cfg.aggregator.att_dim_or(d));
    const auto out = static_cast<Eigen::Index>(cfg.aggregator.out_dim_or(d));
    const auto hops = static_cast<Eigen::Index>(cfg.aggregator.hops);
    ps.create(prefix + ".w1", att, d, InitKind::xavier_uniform, seed);
    ps.create(prefix + ".w2", hops, att, InitKind::xavier_uniform, seed);
    ps.create(prefix + ".proj", hops * d, out, InitKind::xavier_uniform, seed);
    ps.create(prefix + ".proj_b", 1, out, InitKind::zeros, seed);
}

}  // namespace detail

/// Creates every parameter the configuration calls for. Names are the only
/// coupling between this and the graph builders; initial values depend only
/// on (seed, name).
template <typename S>
void register_parameters(ParameterStore<S>& ps, const ModelConfig& cfg,
                         std::uint64_t seed) {
    cfg.validate();
    detail::register_encoder_tower(ps, cfg, "dual", seed);
    detail::register_aggregator(ps, cfg, "dual.agg.q", seed);
    detail::register_aggregator(ps, cfg, "dual.agg.a", seed);
    if (!cfg.uses_cross_tower()) return;

    if (!cfg.encoder.share_towers)
        detail::register_encoder_tower(ps, cfg, "cross", seed);
    detail::register_aggregator(ps, cfg, "cross.agg.q", seed);
    detail::register_aggregator(ps, cfg, "cross.agg.a", seed);

    const auto d = static_cast<Eigen::Index>(cfg.encoder.model_dim);
    const auto ffn = static_cast<Eigen::Index>(cfg.cross.ffn_dim_or(
        cfg.encoder.model_dim));
    for (const char* w : {"cross.attn.wq", "cross.attn.wk", "cross.attn.wv",
                          "cross.attn.wo"})
        ps.create(w, d, d, InitKind::xavier_uniform, seed);
    ps.create("cross.attn.ffn.w1", d, ffn, InitKind::xavier_uniform, seed);
    ps.create("cross.attn.ffn.b1", 1, ffn, InitKind::zeros, seed);
    ps.create("cross.attn.ffn.w2", ffn, d, InitKind::xavier_uniform, seed);
    ps.create("cross.attn.ffn.b2", 1, d, InitKind::zeros, seed);
    ps.create("cross.attn.ln.gain", 1, d, InitKind::ones, seed);
    ps.create("cross.attn.ln.bias", 1, d, InitKind::zeros, seed);
}

// ---------------------------------------------------------------------------
// Tower builders
// ---------------------------------------------------------------------------

template <typename S>
Var embed_question_dual(Tape<S>& t, const std::vector<int>& ids,
                        const ModelConfig& cfg, TapeBinding<S>& p,
                        Var* penalty_acc = nullptr) {
    auto seq = encode_sequence(t, ids, cfg.encoder, p, "dual",
                               cfg.encoder.max_question_len);
    Var pen;
    Var out = aggregate(t, seq, cfg.aggregator, p, "dual.agg.q",
                        penalty_acc ? &pen : nullptr);
    if (penalty_acc && pen.valid())
        *penalty_acc = penalty_acc->valid() ? add(t, *penalty_acc, pen) : pen;
    return out;
}

template <typename S>
Var embed_answer_dual(Tape<S>& t, const std::vector<int>& ids,
                      const ModelConfig& cfg, TapeBinding<S>& p,
                      Var* penalty_acc = nullptr) {
    auto seq = encode_sequence(t, ids, cfg.encoder, p, "dual",
                               cfg.encoder.max_answer_len);
    Var pen;
    Var out = aggregate(t, seq, cfg.aggregator, p, "dual.agg.a",
                        penalty_acc ? &pen : nullptr);
    if (penalty_acc && pen.valid())
        *penalty_acc = penalty_acc->valid() ? add(t, *penalty_acc, pen) : pen;
    return out;
}

/// Cross embeddings for one pair (training path only).
template <typename S>
std::pair<Var, Var> embed_pair_cross(Tape<S>& t, const std::vector<int>& q_ids,
                                     const std::vector<int>& a_ids,
                                     const ModelConfig& cfg, TapeBinding<S>& p) {
    auto q_seq = encode_sequence(t, q_ids, cfg.encoder, p, "cross",
                                 cfg.encoder.max_question_len);
    auto a_seq = encode_sequence(t, a_ids, cfg.encoder, p, "cross",
                                 cfg.encoder.max_answer_len);
    return cross_embed(t, q_seq, a_seq, p, cfg.cross, cfg.aggregator);
}

/// Stacks per-sample embeddings (1 x d_e each) into a B x d_e batch.
template <typename S>
Var stack_embeddings(Tape<S>& t, const std::vector<Var>& rows) {
    if (rows.size() < 1) fail("stack_embeddings: empty batch");
    return concat_rows(t, rows);
}

}  // namespace endx
