#pragma once

// Self-contained statistics oracle for the significance-test checks: Welch's
// t statistic, Welch–Satterthwaite degrees of freedom, and a two-sided
// p-value computed through the regularized incomplete beta function with a
// Lentz continued fraction. Deliberately shares no code with the library.

#include <cmath>
#include <vector>

namespace endx::testing::stats {

inline double beta_cf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double eps = 1e-15;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

/// Regularized incomplete beta I_x(a, b).
inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x);
    const double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cf(a, b, x) / a;
    return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
};

inline WelchResult welch(const std::vector<double>& a,
                         const std::vector<double>& b) {
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    double ma = 0.0, mb = 0.0;
    for (double x : a) ma += x;
    for (double x : b) mb += x;
    ma /= na;
    mb /= nb;
    double va = 0.0, vb = 0.0;
    for (double x : a) va += (x - ma) * (x - ma);
    for (double x : b) vb += (x - mb) * (x - mb);
    va /= na - 1.0;
    vb /= nb - 1.0;
    WelchResult r;
    const double se2 = va / na + vb / nb;
    if (se2 == 0.0) {
        r.t = 0.0;
        r.df = na + nb - 2.0;
        r.p = ma == mb ? 1.0 : 0.0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(se2);
    r.df = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) +
                        (vb / nb) * (vb / nb) / (nb - 1.0));
    // P(|T| > t) for Student's t: I_x(df/2, 1/2) at x = df/(df + t^2).
    r.p = reg_inc_beta(r.df / 2.0, 0.5, r.df / (r.df + r.t * r.t));
    return r;
}

}  // namespace endx::testing::stats
