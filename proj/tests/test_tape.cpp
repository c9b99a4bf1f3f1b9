#include <doctest.h>

#include <cmath>
#include <random>

#include "endx/tape.hpp"
#include "support/gradcheck.hpp"

using namespace endx;
using endx::testing::DMat;
using endx::testing::gradcheck_max_err;
using endx::testing::random_mat;

namespace {
constexpr double kGradTol = 1e-6;
}

TEST_SUITE_BEGIN("tape");

TEST_CASE("forward values of basic ops") {
    Tape<double> t;
    DMat a(2, 2), b(2, 2);
    a << 1, 2, 3, 4;
    b << 5, 6, 7, 8;
    Var va = t.constant(a), vb = t.constant(b);
    CHECK(t.value(add(t, va, vb))(1, 1) == 12.0);
    CHECK(t.value(sub(t, va, vb))(0, 0) == -4.0);
    CHECK(t.value(mul(t, va, vb))(0, 1) == 12.0);
    CHECK(t.value(matmul(t, va, vb))(0, 0) == doctest::Approx(19.0));
    CHECK(t.value(transpose(t, va))(0, 1) == 3.0);
    CHECK(t.value(scale(t, va, 2.0))(1, 0) == 6.0);
    CHECK(t.value(sum_all(t, va))(0, 0) == 10.0);
    CHECK(t.value(mean_all(t, va))(0, 0) == 2.5);
}

TEST_CASE("shape mismatches are errors") {
    Tape<double> t;
    Var a = t.constant(DMat::Zero(2, 3));
    Var b = t.constant(DMat::Zero(3, 2));
    CHECK_THROWS_AS(add(t, a, b), Error);
    CHECK_THROWS_AS(mul(t, a, b), Error);
    CHECK_THROWS_AS(matmul(t, a, a), Error);
    CHECK_THROWS_AS(diag_part(t, a), Error);
    CHECK_THROWS_AS(slice_rows(t, a, 1, 5), Error);
    CHECK_THROWS_AS(gather_rows(t, a, {0, 2}), Error);
}

TEST_CASE("non-finite forward values name the op") {
    Tape<double> t;
    DMat big = DMat::Constant(1, 1, 1e308);
    Var v = t.constant(big);
    try {
        exp_op(t, v);  // overflows to inf
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("exp") != std::string::npos);
    }
    CHECK_THROWS_AS(log_op(t, t.constant(DMat::Constant(1, 1, -1.0))), Error);
}

TEST_CASE("backward requires a scalar root that needs gradients") {
    Tape<double> t;
    Var a = t.leaf(DMat::Zero(2, 2), true);
    CHECK_THROWS_AS(t.backward(a), Error);
    Var c = t.constant(DMat::Zero(1, 1));
    CHECK_THROWS_AS(t.backward(c), Error);
}

TEST_CASE("gradcheck: arithmetic and linear algebra") {
    std::mt19937_64 rng(7);
    auto a = random_mat(3, 4, rng);
    auto b = random_mat(3, 4, rng);
    auto m = random_mat(4, 5, rng);

    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, mul(t, add(t, in[0], in[1]), sub(t, in[0], in[1])));
              },
              {a, b}) < kGradTol);

    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, matmul(t, in[0], in[1]));
              },
              {a, m}) < kGradTol);

    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return mean_all(t, matmul(t, transpose(t, in[0]), in[0]));
              },
              {a}) < kGradTol);

    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, scale(t, reshape_to_row(t, in[0]), 0.7));
              },
              {a}) < kGradTol);
}

TEST_CASE("gradcheck: nonlinearities") {
    std::mt19937_64 rng(11);
    auto a = random_mat(3, 3, rng, -2.0, 2.0);
    // Keep relu/clamp inputs away from their kinks.
    for (Eigen::Index i = 0; i < a.size(); ++i)
        if (std::abs(a.data()[i]) < 0.05) a.data()[i] = 0.3;

    for (auto unary : {+[](Tape<double>& t, Var v) { return relu(t, v); },
                       +[](Tape<double>& t, Var v) { return tanh_op(t, v); },
                       +[](Tape<double>& t, Var v) { return sigmoid(t, v); },
                       +[](Tape<double>& t, Var v) { return exp_op(t, v); },
                       +[](Tape<double>& t, Var v) { return clamp_min(t, v, 0.0); }}) {
        CHECK(gradcheck_max_err(
                  [unary](Tape<double>& t, const std::vector<Var>& in) {
                      return sum_all(t, unary(t, in[0]));
                  },
                  {a}) < kGradTol);
    }

    auto pos = random_mat(2, 4, rng, 0.5, 3.0);
    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, log_op(t, in[0]));
              },
              {pos}) < kGradTol);
}

TEST_CASE("softmax_rows matches a naive reference and normalizes") {
    std::mt19937_64 rng(13);
    auto x = random_mat(4, 6, rng, -3.0, 3.0);
    Tape<double> t;
    Var y = softmax_rows(t, t.constant(x));
    const auto& p = t.value(y);
    for (Eigen::Index i = 0; i < 4; ++i) {
        double denom = 0;
        for (Eigen::Index j = 0; j < 6; ++j) denom += std::exp(x(i, j));
        for (Eigen::Index j = 0; j < 6; ++j)
            CHECK(p(i, j) == doctest::Approx(std::exp(x(i, j)) / denom).epsilon(1e-12));
        CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax_rows honors the keep-mask and rejects empty support") {
    Tape<double> t;
    DMat x(2, 3);
    x << 1, 2, 3, 4, 5, 6;
    Mat<double> mask(2, 3);
    mask << 1, 0, 1, 1, 1, 1;
    Var y = softmax_rows(t, t.constant(x), &mask);
    const auto& p = t.value(y);
    CHECK(p(0, 1) == 0.0);
    CHECK(p(0, 0) + p(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
    // Masked column must not influence the kept ones.
    CHECK(p(0, 2) == doctest::Approx(std::exp(3.0) / (std::exp(1.0) + std::exp(3.0))));

    Mat<double> dead(2, 3);
    dead << 1, 1, 1, 0, 0, 0;
    try {
        softmax_rows(t, t.constant(x), &dead);
        FAIL("expected empty-support error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
}

TEST_CASE("softmax_rows is stable at extreme logits") {
    Tape<double> t;
    DMat x(1, 3);
    x << 1000.0, 999.0, -1000.0;
    const auto& p = t.value(softmax_rows(t, t.constant(x)));
    CHECK(p(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(p(0, 2) == 0.0);
}

TEST_CASE("gradcheck: softmax, logsumexp, layer norm, structure ops") {
    std::mt19937_64 rng(17);
    auto x = random_mat(3, 5, rng, -2.0, 2.0);
    auto w = random_mat(3, 5, rng);

    CHECK(gradcheck_max_err(
              [&](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, mul(t, softmax_rows(t, in[0]), in[1]));
              },
              {x, w}) < kGradTol);

    Mat<double> mask = Mat<double>::Ones(3, 5);
    mask(0, 1) = 0;
    mask(2, 4) = 0;
    CHECK(gradcheck_max_err(
              [&](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, mul(t, softmax_rows(t, in[0], &mask), in[1]));
              },
              {x, w}) < kGradTol);

    auto wr = random_mat(3, 1, rng);
    CHECK(gradcheck_max_err(
              [&](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, mul(t, logsumexp_rows(t, in[0]), in[1]));
              },
              {x, wr}) < kGradTol);

    auto g = random_mat(1, 5, rng, 0.5, 1.5);
    auto b = random_mat(1, 5, rng);
    CHECK(gradcheck_max_err(
              [&](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t,
                                 mul(t, layer_norm_rows(t, in[0], in[1], in[2]), in[3]));
              },
              {x, g, b, w}) < kGradTol);

    auto sq = random_mat(4, 4, rng);
    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, diag_part(t, in[0]));
              },
              {sq}) < kGradTol);

    CHECK(gradcheck_max_err(
              [&](Tape<double>& t, const std::vector<Var>& in) {
                  Var c = concat_rows(t, {in[0], in[1]});
                  Var s = slice_rows(t, c, 1, 3);
                  return sum_all(t, mul(t, s, s));
              },
              {x, x}) < kGradTol);

    CHECK(gradcheck_max_err(
              [&](Tape<double>& t, const std::vector<Var>& in) {
                  Var c = concat_cols(t, {in[0], in[1]});
                  Var s = slice_cols(t, c, 2, 6);
                  return mean_all(t, mul(t, s, s));
              },
              {x, x}) < kGradTol);

    auto v = random_mat(1, 5, rng);
    auto cv = random_mat(3, 1, rng);
    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, mul(t, add_rowvec(t, in[0], in[1]), in[0]));
              },
              {x, v}) < kGradTol);
    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, mul(t, add_colvec(t, in[0], in[1]), in[0]));
              },
              {x, cv}) < kGradTol);

    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  Var g = gather_rows(t, in[0], {2, 0, 2, 1});
                  return sum_all(t, mul(t, g, g));
              },
              {x}) < kGradTol);

    CHECK(gradcheck_max_err(
              [](Tape<double>& t, const std::vector<Var>& in) {
                  return sum_all(t, mul(t, sum_rows(t, in[0]), sum_rows(t, in[0])));
              },
              {x}) < kGradTol);
}

TEST_CASE("gradcheck: kl_div w.r.t. the student") {
    std::mt19937_64 rng(23);
    // Teacher: fixed row-stochastic matrix with one exact zero.
    DMat p = random_mat(3, 4, rng, 0.1, 1.0);
    p(1, 2) = 0.0;
    for (Eigen::Index i = 0; i < 3; ++i) p.row(i) /= p.row(i).sum();
    DMat q = random_mat(3, 4, rng, 0.1, 1.0);
    for (Eigen::Index i = 0; i < 3; ++i) q.row(i) /= q.row(i).sum();

    CHECK(gradcheck_max_err(
              [&](Tape<double>& t, const std::vector<Var>& in) {
                  Var teacher = t.constant(p);
                  return kl_div(t, teacher, in[0]);
              },
              {q}) < kGradTol);
}

TEST_CASE("kl_div basics") {
    Tape<double> t;
    DMat p(2, 2);
    p << 0.25, 0.75, 0.5, 0.5;
    Var vp = t.constant(p);
    Var vq = t.constant(p);
    CHECK(t.value(kl_div(t, vp, vq))(0, 0) == doctest::Approx(0.0).epsilon(1e-15));

    // Teacher that needs gradients is rejected.
    Var trainable = t.leaf(p, true);
    CHECK_THROWS_AS(kl_div(t, trainable, vq), Error);

    // 0 * log 0 contributes nothing even against a tiny student.
    DMat p0(1, 2), q0(1, 2);
    p0 << 0.0, 1.0;
    q0 << 0.0, 1.0;
    CHECK(t.value(kl_div(t, t.constant(p0), t.constant(q0)))(0, 0) ==
          doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("gradients accumulate across shared subexpressions") {
    // f = sum(a*a) + sum(a) -> df/da = 2a + 1
    Tape<double> t;
    DMat a(2, 2);
    a << 1, -2, 3, 0.5;
    Var va = t.leaf(a, true);
    Var loss = add(t, sum_all(t, mul(t, va, va)), sum_all(t, va));
    t.backward(loss);
    const auto& g = t.grad(va);
    for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 2; ++j)
            CHECK(g(i, j) == doctest::Approx(2.0 * a(i, j) + 1.0).epsilon(1e-12));
}

TEST_CASE("detach blocks gradient flow") {
    Tape<double> t;
    DMat a(1, 2);
    a << 2.0, 3.0;
    Var va = t.leaf(a, true);
    Var d = detach(t, va);
    CHECK_FALSE(t.needs_grad(d));
    Var loss = add(t, sum_all(t, mul(t, va, va)), sum_all(t, d));
    t.backward(loss);
    const auto& g = t.grad(va);
    CHECK(g(0, 0) == doctest::Approx(4.0));  // only the 2a path
    CHECK(g(0, 1) == doctest::Approx(6.0));
}

TEST_SUITE_END();
