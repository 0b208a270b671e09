#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace cyclelab {

/* Finite measure on [0,1]: point masses plus an optional density tabulated
 * at evenly spaced nodes spanning the whole interval. */
struct BoundaryMeasure {
    std::vector<std::pair<double, double>> atoms; /* (location, weight) */
    std::vector<double> ac_part;

    static BoundaryMeasure delta(double at) {
        BoundaryMeasure m;
        m.atoms = {{at, 1.0}};
        return m;
    }
    static BoundaryMeasure uniform() {
        BoundaryMeasure m;
        m.ac_part = {1.0, 1.0};
        return m;
    }
};

namespace detail {

inline void check_measure(const BoundaryMeasure& mu) {
    for (const auto& [x, w] : mu.atoms) {
        if (x < 0.0 || x > 1.0)
            throw PreconditionViolated("measure atom lies outside [0,1]");
        if (!(w > 0.0)) throw PreconditionViolated("measure atom weight must be positive");
    }
    if (mu.ac_part.size() == 1)
        throw PreconditionViolated("measure density needs at least two nodes");
    for (double v : mu.ac_part)
        if (v < 0.0) throw PreconditionViolated("measure density must be nonnegative");
}

/* moments of the panel kernel: Mk = int_0^h tau^k e^{-lambda tau} dtau */
struct ExpMoments {
    double m0, m1, m2;
};

inline ExpMoments exp_moments(double lambda, double h) {
    const double z = lambda * h;
    ExpMoments r;
    if (z < 0.02) {
        double c0 = 0.0, c1 = 0.0, c2 = 0.0, term = 1.0;
        for (int k = 0; k <= 9; ++k) {
            c0 += term / static_cast<double>(k + 1);
            c1 += term / static_cast<double>(k + 2);
            c2 += term / static_cast<double>(k + 3);
            term *= -z / static_cast<double>(k + 1);
        }
        r.m0 = h * c0;
        r.m1 = h * h * c1;
        r.m2 = h * h * h * c2;
    } else {
        const double e = std::exp(-z);
        r.m0 = (1.0 - e) / lambda;
        r.m1 = (1.0 - (1.0 + z) * e) / (lambda * lambda);
        r.m2 = (2.0 - (2.0 + 2.0 * z + z * z) * e) / (lambda * lambda * lambda);
    }
    return r;
}

/* u0(x) = int_x^1 e^{lambda(x-s)} f(s) ds by a descending recurrence with a
 * quadratic panel model; the backbone of the high-precision oracle. */
inline std::vector<double> interval_u0(const std::vector<double>& f, double lambda) {
    const std::size_t n = f.size();
    const double h = 1.0 / static_cast<double>(n - 1);
    const auto mo = exp_moments(lambda, h);
    const double decay = std::exp(-lambda * h);
    std::vector<double> u(n, 0.0);
    for (std::size_t i = n - 1; i-- > 0;) {
        double d1, d2;
        if (i + 2 < n) {
            d1 = (-3.0 * f[i] + 4.0 * f[i + 1] - f[i + 2]) / (2.0 * h);
            d2 = (f[i] - 2.0 * f[i + 1] + f[i + 2]) / (2.0 * h * h);
        } else {
            d1 = (f[i + 1] - f[i - 1]) / (2.0 * h);
            d2 = (f[i - 1] - 2.0 * f[i] + f[i + 1]) / (2.0 * h * h);
        }
        u[i] = decay * u[i + 1] + f[i] * mo.m0 + d1 * mo.m1 + d2 * mo.m2;
    }
    return u;
}

/* cubic 4-point interpolation of a tabulated profile */
inline double interp4(const std::vector<double>& v, double x) {
    const std::size_t n = v.size();
    const double pos = x * static_cast<double>(n - 1);
    auto i0 = static_cast<std::ptrdiff_t>(std::floor(pos)) - 1;
    i0 = std::clamp<std::ptrdiff_t>(i0, 0, static_cast<std::ptrdiff_t>(n) - 4);
    double out = 0.0;
    for (int a = 0; a < 4; ++a) {
        double la = 1.0;
        const double xa = static_cast<double>(i0 + a);
        for (int b = 0; b < 4; ++b) {
            if (b == a) continue;
            la *= (pos - static_cast<double>(i0 + b)) / (xa - static_cast<double>(i0 + b));
        }
        out += la * v[static_cast<std::size_t>(i0 + a)];
    }
    return out;
}

/* int v dmu for a profile tabulated on [0,1]; Simpson panels with a 3/8
 * closer when the interval count is odd. */
inline double measure_integral(const BoundaryMeasure& mu, const std::vector<double>& v) {
    long double acc = 0.0L;
    for (const auto& [x, w] : mu.atoms) acc += w * interp4(v, x);
    if (!mu.ac_part.empty()) {
        const std::size_t n = v.size();
        const double h = 1.0 / static_cast<double>(n - 1);
        const std::size_t m = mu.ac_part.size();
        auto dens = [&](std::size_t i) {
            const double p = static_cast<double>(i) * h * static_cast<double>(m - 1);
            const std::size_t k =
                std::min(static_cast<std::size_t>(p), m - 2);
            const double t = p - static_cast<double>(k);
            return mu.ac_part[k] * (1.0 - t) + mu.ac_part[k + 1] * t;
        };
        const std::size_t intervals = n - 1;
        const std::size_t body = intervals % 2 == 0 ? intervals : intervals - 3;
        long double s = 0.0L;
        for (std::size_t k = 0; k + 2 <= body; k += 2)
            s += v[k] * dens(k) + 4.0 * v[k + 1] * dens(k + 1) + v[k + 2] * dens(k + 2);
        s *= h / 3.0;
        if (body != intervals) {
            const std::size_t b = body;
            s += 3.0 * h / 8.0 *
                 (v[b] * dens(b) + 3.0 * v[b + 1] * dens(b + 1) +
                  3.0 * v[b + 2] * dens(b + 2) + v[b + 3] * dens(b + 3));
        }
        acc += s;
    }
    return static_cast<double>(acc);
}

}  // namespace detail

inline std::vector<double> interval_psi_lambda(double f_boundary, double lambda,
                                               std::size_t npts) {
    if (!(lambda > 0.0)) throw PreconditionViolated("rate must be positive");
    if (npts < 3) throw PreconditionViolated("need at least three nodes");
    std::vector<double> v(npts);
    for (std::size_t i = 0; i < npts; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(npts - 1);
        v[i] = std::exp(lambda * (x - 1.0)) * f_boundary;
    }
    return v;
}

/* scalar feedback int e^{lambda(x-1)} dmu; exact on piecewise-linear density */
inline double interval_psi_psi(const BoundaryMeasure& mu, double lambda) {
    detail::check_measure(mu);
    if (!(lambda > 0.0)) throw PreconditionViolated("rate must be positive");
    long double acc = 0.0L;
    for (const auto& [x, w] : mu.atoms) acc += w * std::exp(lambda * (x - 1.0));
    const std::size_t m = mu.ac_part.size();
    if (m >= 2) {
        const double hd = 1.0 / static_cast<double>(m - 1);
        for (std::size_t k = 0; k + 1 < m; ++k) {
            const double a = static_cast<double>(k) * hd;
            const double ea = std::exp(lambda * (a - 1.0));
            const double eb = std::exp(lambda * (a + hd - 1.0));
            const double i0 = (eb - ea) / lambda;
            const double i1 = eb / lambda - i0 / (lambda * hd);
            acc += mu.ac_part[k] * (i0 - i1) + mu.ac_part[k + 1] * i1;
        }
    }
    return static_cast<double>(acc);
}

inline std::vector<double> interval_resolvent(const std::vector<double>& f, double lambda,
                                              const BoundaryMeasure& mu) {
    detail::check_measure(mu);
    if (!(lambda > 0.0)) throw PreconditionViolated("rate must be positive");
    if (f.size() < 5) throw PreconditionViolated("need at least five nodes");
    const double kappa = interval_psi_psi(mu, lambda);
    if (!(kappa < 1.0))
        throw NotInvertible("boundary feedback is not a strict contraction");
    auto u = detail::interval_u0(f, lambda);
    const double c = detail::measure_integral(mu, u) / (1.0 - kappa);
    const std::size_t n = f.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(n - 1);
        u[i] += c * std::exp(lambda * (x - 1.0));
    }
    return u;
}

struct IntervalReport {
    double kappa = 0.0;
    double ode_residual = 0.0;
    double boundary_residual = 0.0;
};

/* residuals of lu - u' = f (fourth-order differencing) and of the coupling
 * u(1) = int u dmu */
inline IntervalReport interval_residuals(const std::vector<double>& u,
                                         const std::vector<double>& f, double lambda,
                                         const BoundaryMeasure& mu) {
    if (u.size() != f.size()) throw GridMismatch("profiles differ in length");
    if (u.size() < 5) throw PreconditionViolated("need at least five nodes");
    const std::size_t n = u.size();
    const double h = 1.0 / static_cast<double>(n - 1);

    IntervalReport rep;
    rep.kappa = interval_psi_psi(mu, lambda);
    auto du = [&](std::size_t i) {
        if (i >= 2 && i + 2 < n)
            return (u[i - 2] - 8.0 * u[i - 1] + 8.0 * u[i + 1] - u[i + 2]) / (12.0 * h);
        if (i == 0)
            return (-25.0 * u[0] + 48.0 * u[1] - 36.0 * u[2] + 16.0 * u[3] - 3.0 * u[4]) /
                   (12.0 * h);
        if (i == 1)
            return (-3.0 * u[0] - 10.0 * u[1] + 18.0 * u[2] - 6.0 * u[3] + u[4]) /
                   (12.0 * h);
        if (i == n - 1)
            return (25.0 * u[n - 1] - 48.0 * u[n - 2] + 36.0 * u[n - 3] -
                    16.0 * u[n - 4] + 3.0 * u[n - 5]) /
                   (12.0 * h);
        return (3.0 * u[n - 1] + 10.0 * u[n - 2] - 18.0 * u[n - 3] + 6.0 * u[n - 4] -
                u[n - 5]) /
               (12.0 * h);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(lambda * u[i] - du(i) - f[i]));
    rep.ode_residual = worst;
    rep.boundary_residual = std::abs(u.back() - detail::measure_integral(mu, u));
    return rep;
}

}  // namespace cyclelab
