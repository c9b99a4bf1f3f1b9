#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "endx/tape.hpp"

namespace endx::testing {

using DMat = Mat<double>;

inline DMat random_mat(Eigen::Index rows, Eigen::Index cols,
                       std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    DMat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

inline DMat random_mat(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                       double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    return random_mat(rows, cols, rng, lo, hi);
}

/// Builder receives a fresh tape plus leaves holding the current input
/// values and must return a scalar loss var.
using GraphBuilder =
    std::function<Var(Tape<double>&, const std::vector<Var>&)>;

/// Central-difference gradient check. Returns the worst relative error
///     |analytic - numeric| / max(1, |analytic|, |numeric|)
/// over every element of every input.
inline double gradcheck_max_err(const GraphBuilder& build,
                                std::vector<DMat> inputs, double h = 1e-4) {
    Tape<double> tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& m : inputs) leaves.push_back(tape.leaf(m, true));
    Var loss = build(tape, leaves);
    tape.backward(loss);
    std::vector<DMat> analytic;
    analytic.reserve(leaves.size());
    for (Var v : leaves) analytic.push_back(tape.grad(v));

    auto eval = [&](const std::vector<DMat>& vals) {
        Tape<double> t;
        std::vector<Var> ls;
        ls.reserve(vals.size());
        for (const auto& m : vals) ls.push_back(t.leaf(m, true));
        return t.value(build(t, ls))(0, 0);
    };

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (Eigen::Index i = 0; i < inputs[k].rows(); ++i) {
            for (Eigen::Index j = 0; j < inputs[k].cols(); ++j) {
                auto plus = inputs;
                auto minus = inputs;
                plus[k](i, j) += h;
                minus[k](i, j) -= h;
                double fd = (eval(plus) - eval(minus)) / (2.0 * h);
                double an = analytic[k](i, j);
                double err =
                    std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
                worst = std::max(worst, err);
            }
        }
    }
    return worst;
}

}  // namespace endx::testing
