#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>

#include "endx/common.hpp"
#include "endx/tape.hpp"

namespace endx {

enum class KernelKind { inner, gaussian };

inline const char* to_string(KernelKind k) {
    return k == KernelKind::inner ? "inner" : "gaussian";
}

inline KernelKind kernel_kind_from_string(const std::string& s) {
    if (s == "inner") return KernelKind::inner;
    if (s == "gaussian") return KernelKind::gaussian;
    fail("losses: unknown kernel '" + s + "'");
}

/// The four alignment directions, in the order their weights appear in the
/// combined GAM loss: a|q, q|q, q|a, a|a.
enum class Direction { a_given_q = 0, q_given_q = 1, q_given_a = 2, a_given_a = 3 };

inline const char* to_string(Direction d) {
    switch (d) {
        case Direction::a_given_q: return "a|q";
        case Direction::q_given_q: return "q|q";
        case Direction::q_given_a: return "q|a";
        case Direction::a_given_a: return "a|a";
    }
    return "?";
}

/// Same-type directions exclude the self-pairing from the conditional
/// distribution; cross-type directions keep every column (the matched pair
/// is the signal there).
inline bool excludes_diagonal(Direction d) {
    return d == Direction::q_given_q || d == Direction::a_given_a;
}

enum class Origin { cross = 0, dual = 1 };

struct GAMConfig {
    KernelKind kernel = KernelKind::inner;
    /// Gaussian widths σ² per origin x direction; the kernel denominator
    /// used in the conditionals is 2σ² (the caller applies the factor 2).
    std::array<std::array<double, 4>, 2> sigma2{{{1, 1, 1, 1}, {1, 1, 1, 1}}};
    /// Post-warmup term weights, indexed by Direction.
    std::array<double, 4> targets{0.5, 1e4, 0.5, 1e4};
    int warmup_epochs = 5;

    double sigma2_for(Origin o, Direction d) const {
        return sigma2[static_cast<std::size_t>(o)][static_cast<std::size_t>(d)];
    }

    void validate() const {
        if (warmup_epochs < 1) fail("gam: warmup epochs must be >= 1");
        for (const auto& row : sigma2)
            for (double s : row)
                if (kernel == KernelKind::gaussian && s <= 0)
                    fail("gam: gaussian widths must be positive");
        for (double w : targets)
            if (w < 0) fail("gam: term weights must be >= 0");
    }
};

struct LossWeights {
    double dual = 0.25;
    double cross = 0.25;
    double gam = 0.5;

    void validate() const {
        if (dual < 0 || cross < 0 || gam < 0)
            fail("loss weights must be >= 0");
    }
};

/// Which of the four GAM terms participate (ablation switch).
struct AblationMask {
    std::array<bool, 4> active{true, true, true, true};

    bool on(Direction d) const { return active[static_cast<std::size_t>(d)]; }
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

template <typename D1, typename D2>
double inner_kernel(const Eigen::MatrixBase<D1>& ei,
                    const Eigen::MatrixBase<D2>& ej) {
    if (ei.size() != ej.size()) fail("inner_kernel: dimension mismatch");
    double s = 0;
    for (Eigen::Index k = 0; k < ei.size(); ++k)
        s += static_cast<double>(ei(k)) * static_cast<double>(ej(k));
    return s;
}

/// exp(-‖ei - ej‖² / width). Per the conditional-probability definitions
/// the width argument is 2σ²; this function takes the full denominator.
template <typename D1, typename D2>
double gaussian_kernel(const Eigen::MatrixBase<D1>& ei,
                       const Eigen::MatrixBase<D2>& ej, double width) {
    if (width <= 0) fail("gaussian_kernel: width must be positive");
    if (ei.size() != ej.size()) fail("gaussian_kernel: dimension mismatch");
    double d2 = 0;
    for (Eigen::Index k = 0; k < ei.size(); ++k) {
        double d = static_cast<double>(ei(k)) - static_cast<double>(ej(k));
        d2 += d * d;
    }
    return std::exp(-d2 / width);
}

/// Pairwise kernel values on the tape: out[i][j] = K(rows_i, cols_j).
/// width is the full Gaussian denominator (callers pass 2σ²).
template <typename S>
Var kernel_matrix(Tape<S>& t, Var rows, Var cols, KernelKind kernel,
                  double width) {
    const auto& r = t.value(rows);
    const auto& c = t.value(cols);
    if (r.cols() != c.cols()) fail("kernel_matrix: embedding dims differ");
    Var dots = matmul(t, rows, transpose(t, cols));
    if (kernel == KernelKind::inner) return dots;
    if (width <= 0) fail("kernel_matrix: gaussian width must be positive");
    // ‖x−y‖² = ‖x‖² + ‖y‖² − 2xᵀy, assembled by broadcasting.
    Var rsq = sum_rows(t, mul(t, rows, rows));
    Var csq = sum_rows(t, mul(t, cols, cols));
    Var d2 = add_colvec(t, add_rowvec(t, scale(t, dots, S(-2)), transpose(t, csq)),
                        rsq);
    return exp_op(t, scale(t, d2, static_cast<S>(-1.0 / width)));
}

// ---------------------------------------------------------------------------
// Conditional distributions (Eqs. 6-8 pattern: softmax over kernel values)
// ---------------------------------------------------------------------------

/// probs[i][j] = exp(K(row_i, col_j)) / Σ_k exp(K(row_i, col_k)); same-type
/// directions drop the diagonal from the support (probs[i][i] = 0).
template <typename S>
Var conditional_distribution(Tape<S>& t, Var rows, Var cols, KernelKind kernel,
                             double width, Direction direction) {
    const Eigen::Index b = t.value(rows).rows();
    if (t.value(cols).rows() != b)
        fail("conditional_distribution: batch sizes differ");
    if (b < 2) fail("conditional_distribution: batch size must be >= 2");
    Var km = kernel_matrix(t, rows, cols, kernel, width);
    if (!excludes_diagonal(direction)) return softmax_rows(t, km);
    Mat<S> keep = Mat<S>::Ones(b, b);
    keep.diagonal().setZero();
    return softmax_rows(t, km, &keep);
}

// ---------------------------------------------------------------------------
// Retrieval losses (in-batch negatives)
// ---------------------------------------------------------------------------

/// −(1/B) Σ_i log softmax_row_i(Q·Aᵀ)[i], computed as mean(logsumexp − diag)
/// so extreme scores stay stable.
template <typename S>
Var retrieval_loss(Tape<S>& t, Var q, Var a) {
    const auto& vq = t.value(q);
    const auto& va = t.value(a);
    if (vq.rows() != va.rows() || vq.cols() != va.cols())
        fail("retrieval loss: Q and A shapes differ");
    if (vq.rows() < 2)
        fail("retrieval loss: batch size must be >= 2 for in-batch negatives");
    Var scores = matmul(t, q, transpose(t, a));
    return mean_all(t, sub(t, logsumexp_rows(t, scores), diag_part(t, scores)));
}

template <typename S>
Var dual_loss(Tape<S>& t, Var q_dual, Var a_dual) {
    return retrieval_loss(t, q_dual, a_dual);
}

template <typename S>
Var cross_loss(Tape<S>& t, Var q_cross, Var a_cross) {
    return retrieval_loss(t, q_cross, a_cross);
}

// ---------------------------------------------------------------------------
// GAM alignment
// ---------------------------------------------------------------------------

/// Mean-over-batch KL(teacher ‖ student): (1/B) Σ_i Σ_j p_c log(p_c/p_d).
/// The teacher distribution must be detached.
template <typename S>
Var kl_alignment(Tape<S>& t, Var p_cross, Var p_dual) {
    const Eigen::Index rows = t.value(p_cross).rows();
    if (rows != t.value(p_dual).rows() ||
        t.value(p_cross).cols() != t.value(p_dual).cols())
        fail("kl_alignment: distribution shapes differ");
    Var total = kl_div(t, p_cross, p_dual, S(1e-12));
    return scale(t, total, static_cast<S>(1.0 / static_cast<double>(rows)));
}

struct GamBreakdown {
    Var total;                  // weighted sum of active terms (invalid if none)
    std::array<Var, 4> terms;   // unweighted KL per direction (invalid if off)
};

/// The four-way alignment loss. Cross-side embeddings are detached inside,
/// making the cross tower a pure teacher: its parameters receive exactly
/// zero gradient from this term. Terms with weight 0 or masked off are not
/// built at all.
template <typename S>
GamBreakdown gam_loss(Tape<S>& t, Var q_dual, Var a_dual, Var q_cross,
                      Var a_cross, const GAMConfig& cfg,
                      const std::array<double, 4>& weights,
                      const AblationMask& mask = {}) {
    cfg.validate();
    Var qc = detach(t, q_cross);
    Var ac = detach(t, a_cross);

    auto endpoints = [&](Direction d, Var q, Var a) -> std::pair<Var, Var> {
        switch (d) {
            case Direction::a_given_q: return {q, a};
            case Direction::q_given_a: return {a, q};
            case Direction::q_given_q: return {q, q};
            case Direction::a_given_a: return {a, a};
        }
        fail("gam_loss: bad direction");
    };

    GamBreakdown out;
    for (int i = 0; i < 4; ++i) {
        auto d = static_cast<Direction>(i);
        if (!mask.on(d) || weights[static_cast<std::size_t>(i)] == 0.0) continue;
        auto [tr, tc] = endpoints(d, qc, ac);
        auto [sr, sc] = endpoints(d, q_dual, a_dual);
        Var teacher = conditional_distribution(
            t, tr, tc, cfg.kernel, 2.0 * cfg.sigma2_for(Origin::cross, d), d);
        Var student = conditional_distribution(
            t, sr, sc, cfg.kernel, 2.0 * cfg.sigma2_for(Origin::dual, d), d);
        Var term = kl_alignment(t, teacher, student);
        out.terms[static_cast<std::size_t>(i)] = term;
        Var weighted =
            scale(t, term, static_cast<S>(weights[static_cast<std::size_t>(i)]));
        out.total = out.total.valid() ? add(t, out.total, weighted) : weighted;
    }
    return out;
}

/// α_dual·L_dual + α_cross·L_cross + α_ga·L_ga. Invalid component vars are
/// treated as absent (their towers were not built).
template <typename S>
Var total_loss(Tape<S>& t, Var l_dual, Var l_cross, Var l_gam,
               const LossWeights& w) {
    w.validate();
    Var acc;
    auto mix = [&](Var v, double alpha) {
        if (!v.valid() || alpha == 0.0) return;
        Var scaled = scale(t, v, static_cast<S>(alpha));
        acc = acc.valid() ? add(t, acc, scaled) : scaled;
    };
    mix(l_dual, w.dual);
    mix(l_cross, w.cross);
    mix(l_gam, w.gam);
    if (!acc.valid()) return t.scalar(S(0));
    return acc;
}

/// Linear warmup at epoch granularity: 0 at epoch 0, the full target from
/// warmup_epochs onward.
inline double warmup_weight(int epoch, int warmup_epochs, double target) {
    if (warmup_epochs < 1) fail("warmup_weight: warmup epochs must be >= 1");
    if (epoch < 0) fail("warmup_weight: negative epoch");
    double frac = std::min(static_cast<double>(epoch) /
                               static_cast<double>(warmup_epochs),
                           1.0);
    return frac * target;
}

// ---------------------------------------------------------------------------
// Plain-value wrappers (scratch tape; shared single implementation path)
// ---------------------------------------------------------------------------

template <typename S>
Mat<S> conditional_distribution_values(const Mat<S>& rows, const Mat<S>& cols,
                                       KernelKind kernel, double width,
                                       Direction direction) {
    Tape<S> t;
    Var v = conditional_distribution(t, t.constant(rows), t.constant(cols),
                                     kernel, width, direction);
    return t.value(v);
}

template <typename S>
double retrieval_loss_value(const Mat<S>& q, const Mat<S>& a) {
    Tape<S> t;
    return static_cast<double>(
        t.value(retrieval_loss(t, t.constant(q), t.constant(a)))(0, 0));
}

template <typename S>
double kl_alignment_value(const Mat<S>& p_cross, const Mat<S>& p_dual) {
    Tape<S> t;
    return static_cast<double>(
        t.value(kl_alignment(t, t.constant(p_cross), t.constant(p_dual)))(0, 0));
}

}  // namespace endx
