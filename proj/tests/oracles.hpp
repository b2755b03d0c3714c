#pragma once

// Independent brute-force re-implementations used only to cross-check the
// library. Written as plain long-double loops on purpose; they must not
// share code with the implementation they check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace oracle {

inline long double vec_sum(const std::vector<double>& v) {
    long double s = 0.0L;
    for (double x : v) s += x;
    return s;
}

// Chi-square on the percent convention: both vectors rescaled to sum 100,
// expected floored at 1e-9 of mass and renormalized.
inline long double chi_square_percent(const std::vector<double>& observed,
                                      const std::vector<double>& expected) {
    const long double o_sum = vec_sum(observed);
    const long double e_sum = vec_sum(expected);
    std::vector<long double> e(expected.size());
    long double floored = 0.0L;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        e[i] = expected[i] / e_sum;
        if (e[i] < 1e-9L) e[i] = 1e-9L;
        floored += e[i];
    }
    long double chi = 0.0L;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const long double o_scaled = observed[i] / o_sum * 100.0L;
        const long double e_scaled = e[i] / floored * 100.0L;
        const long double d = o_scaled - e_scaled;
        chi += d * d / e_scaled;
    }
    return chi;
}

inline long double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    long double dot = 0.0L, na = 0.0L, nb = 0.0L;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<long double>(a[i]) * b[i];
        na += static_cast<long double>(a[i]) * a[i];
        nb += static_cast<long double>(b[i]) * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline long double weighted_jaccard(const std::vector<double>& a, const std::vector<double>& b) {
    long double mins = 0.0L, maxs = 0.0L;
    for (std::size_t i = 0; i < a.size(); ++i) {
        mins += std::min<long double>(a[i], b[i]);
        maxs += std::max<long double>(a[i], b[i]);
    }
    return mins / maxs;
}

inline long double kl(const std::vector<double>& p, const std::vector<double>& q,
                      long double epsilon = 1e-9L) {
    const long double ps = vec_sum(p);
    const long double qs = vec_sum(q);
    std::vector<long double> pf(p.size()), qf(q.size());
    long double pfs = 0.0L, qfs = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) {
        pf[i] = std::max<long double>(p[i] / ps, epsilon);
        qf[i] = std::max<long double>(q[i] / qs, epsilon);
        pfs += pf[i];
        qfs += qf[i];
    }
    long double d = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const long double pi = pf[i] / pfs;
        const long double qi = qf[i] / qfs;
        d += pi * std::log(pi / qi);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Regularized upper incomplete gamma by adaptive Simpson quadrature.
// Independent of the series/continued-fraction implementation path.
// ---------------------------------------------------------------------------

namespace detail {

inline long double simpson_slice(const std::function<long double(long double)>& f, long double a,
                                 long double fa, long double b, long double fb, long double m,
                                 long double fm) {
    return (b - a) / 6.0L * (fa + 4.0L * fm + fb);
}

inline long double adaptive_simpson(const std::function<long double(long double)>& f,
                                    long double a, long double fa, long double b, long double fb,
                                    long double m, long double fm, long double whole,
                                    long double tol, int depth) {
    const long double lm = (a + m) / 2.0L;
    const long double rm = (m + b) / 2.0L;
    const long double flm = f(lm);
    const long double frm = f(rm);
    const long double left = simpson_slice(f, a, fa, m, fm, lm, flm);
    const long double right = simpson_slice(f, m, fm, b, fb, rm, frm);
    const long double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0L * tol) {
        return left + right + delta / 15.0L;
    }
    return adaptive_simpson(f, a, fa, m, fm, lm, flm, left, tol / 2.0L, depth - 1) +
           adaptive_simpson(f, m, fm, b, fb, rm, frm, right, tol / 2.0L, depth - 1);
}

inline long double integrate(const std::function<long double(long double)>& f, long double a,
                             long double b, long double tol) {
    if (b <= a) return 0.0L;
    const long double m = (a + b) / 2.0L;
    const long double fa = f(a);
    const long double fb = f(b);
    const long double fm = f(m);
    return adaptive_simpson(f, a, fa, b, fb, m, fm, simpson_slice(f, a, fa, b, fb, m, fm), tol,
                            60);
}

} // namespace detail

/// Q(a, x) by quadrature. The lower integral substitutes u = t^a when a < 1
/// so the endpoint singularity disappears; for a >= 1 the integrand is
/// already bounded. The upper integral truncates where the tail is orders of
/// magnitude below the comparison tolerance.
inline long double regularized_gamma_q_quadrature(long double a, long double x) {
    if (x <= 0.0L) return 1.0L;
    const long double log_gamma = std::lgammal(a);
    if (x < a + 1.0L) {
        long double integral;
        if (a < 1.0L) {
            // P(a,x) = (1/(a Gamma(a))) * Integral_0^{x^a} exp(-u^{1/a}) du
            const long double upper = std::pow(x, a);
            auto integrand = [a](long double u) { return std::exp(-std::pow(u, 1.0L / a)); };
            integral = detail::integrate(integrand, 0.0L, upper, 1e-15L) / a;
        } else {
            auto integrand = [a](long double t) { return std::pow(t, a - 1.0L) * std::exp(-t); };
            integral = detail::integrate(integrand, 0.0L, x, 1e-15L);
        }
        return 1.0L - integral / std::exp(log_gamma);
    }
    // Q(a,x) = (1/Gamma(a)) * Integral_x^{cut} t^{a-1} e^{-t} dt, tail ~ e^-45
    const long double cut = x + 45.0L + 6.0L * a;
    auto integrand = [a, log_gamma](long double t) {
        return std::exp((a - 1.0L) * std::log(t) - t - log_gamma);
    };
    return detail::integrate(integrand, x, cut, 1e-15L);
}

} // namespace oracle
