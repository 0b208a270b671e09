#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "boundary_ops.hpp"
#include "growth.hpp"

namespace cyclelab {

enum class SteadyVerdict { exists, exists_unique, not_exists, inconclusive };

struct FixedPointResult {
    std::vector<double> density;
    double residual = 0.0;
    std::size_t iterations = 0;
};

struct DriftDiagnostic {
    std::vector<double> mean, variance;
    double var_slope = 0.0;
    double var_r2 = 0.0;
    bool dispersive = false;
};

struct ExistenceReport {
    MeanDuration mean_phase_a;
    double tail_liminf = 0.0;
    double tail_sup = 0.0;
    bool q_zero_finite = true;
    SteadyVerdict verdict = SteadyVerdict::inconclusive;
    std::string note;
};

struct SteadyResidualReport {
    double generator_resid = 0.0;
    double trace_gap = 0.0;
    double one_sided_violation = 0.0;
    double fixed_point_gap = 0.0;
};

namespace detail {

inline void require_edge(const ModelOperators& ops, const std::vector<double>& f) {
    if (f.size() != ops.grid->ns)
        throw GridMismatch("edge array length does not match operator grid");
}

/* per-cell exit masses of the clock phase; the window top folds the tail so
 * the weights sum to one exactly */
inline std::vector<double> phase_exit_masses(const ModelOperators& ops) {
    const std::size_t na = ops.grid->na;
    std::vector<double> w(na);
    for (std::size_t i = 0; i < na; ++i)
        w[i] = ops.survival_node(i) - ops.survival_node(i + 1);
    w[na - 1] += ops.survival_node(na);
    return w;
}

}  // namespace detail

/* Size profile at clock entry: births smeared by the duration law. */
inline std::vector<double> second_boundary(const ModelOperators& ops,
                                           const std::vector<double>& f1) {
    detail::require_edge(ops, f1);
    const CharGrid& g = *ops.grid;
    const std::size_t ns = g.ns;
    auto w = detail::phase_exit_masses(ops);
    std::vector<double> out(ns, 0.0);
    for (std::size_t i = 0; i < g.na && i < ns; ++i) {
        if (w[i] == 0.0) continue;
        for (std::size_t j = i; j < ns; ++j) {
            const std::size_t k = j - i;
            out[j] += w[i] * 0.5 * ((k >= 1 ? f1[k - 1] : 0.0) + f1[k]);
        }
    }
    return out;
}

/* One generation of the birth-size map: duration smearing, the fixed clock
 * phase, then the size-halving pushforward.  Mass-preserving by construction
 * up to window truncation, independent of the tracking variant. */
inline std::vector<double> apply_p(const ModelOperators& ops, const std::vector<double>& f) {
    const CharGrid& g = *ops.grid;
    auto b2 = second_boundary(ops, f);
    std::vector<double> shifted(g.ns, 0.0);
    for (std::size_t j = g.nb; j < g.ns; ++j) shifted[j] = b2[j - g.nb];
    return divide_remap(g, shifted, 0.0, 0.0).values;
}

inline DriftDiagnostic drift_diagnostic(const ModelOperators& ops, std::vector<double> f,
                                        std::size_t n_iter) {
    detail::require_edge(ops, f);
    const CharGrid& g = *ops.grid;
    DriftDiagnostic d;
    auto record = [&]() {
        long double m0 = 0.0L, m1 = 0.0L, m2 = 0.0L;
        for (std::size_t j = 0; j < g.ns; ++j) {
            const double s = g.s_center(j);
            m0 += f[j];
            m1 += f[j] * s;
            m2 += f[j] * s * s;
        }
        if (m0 <= 0.0L) {
            d.mean.push_back(0.0);
            d.variance.push_back(0.0);
            return;
        }
        const double mu = static_cast<double>(m1 / m0);
        d.mean.push_back(mu);
        d.variance.push_back(std::max(0.0, static_cast<double>(m2 / m0) - mu * mu));
    };
    record();
    for (std::size_t k = 0; k < n_iter; ++k) {
        f = apply_p(ops, f);
        long double m = 0.0L;
        for (double v : f) m += v;
        if (m > 0.0L)
            for (double& v : f) v = static_cast<double>(v / m / g.h);
        record();
    }

    const std::size_t n = d.variance.size();
    double xb = 0.0, vb = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        xb += static_cast<double>(k);
        vb += d.variance[k];
    }
    xb /= static_cast<double>(n);
    vb /= static_cast<double>(n);
    double sxx = 0.0, sxy = 0.0, svv = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double dx = static_cast<double>(k) - xb;
        const double dv = d.variance[k] - vb;
        sxx += dx * dx;
        sxy += dx * dv;
        svv += dv * dv;
    }
    d.var_slope = (sxx > 0.0) ? sxy / sxx : 0.0;
    d.var_r2 = (sxx > 0.0 && svv > 0.0) ? (sxy * sxy) / (sxx * svv) : 0.0;
    /* linear growth across the window, not a settling transient */
    d.dispersive = d.var_slope > 0.0 && d.var_r2 >= 0.9 &&
                   d.var_slope * static_cast<double>(n - 1) > 0.5 * vb;
    return d;
}

inline FixedPointResult find_fixed_point(const ModelOperators& ops, std::vector<double> f0,
                                         double tol, std::size_t max_iter) {
    detail::require_edge(ops, f0);
    const double h = ops.grid->h;
    long double m = 0.0L;
    for (double v : f0) {
        if (v < 0.0) throw PreconditionViolated("starting profile must be nonnegative");
        m += v;
    }
    if (!(m > 0.0L)) throw PreconditionViolated("starting profile carries no mass");
    std::vector<double> f = f0;
    for (double& v : f) v = static_cast<double>(v / m / h);

    /* Power iteration on the renormalized map: on a finite window the raw
     * generation operator can shed a little mass through the edges, so the
     * meaningful target is the fixed shape, not a literally fixed vector. */
    for (std::size_t it = 0;; ++it) {
        auto pf = apply_p(ops, f);
        long double pm = 0.0L;
        for (double v : pf) pm += v;
        if (!(pm > 0.0L))
            throw NoConvergence("generation iterates lost all mass to the window edges");
        for (std::size_t j = 0; j < pf.size(); ++j)
            pf[j] = static_cast<double>(pf[j] / pm / h);
        long double r = 0.0L;
        for (std::size_t j = 0; j < f.size(); ++j) r += std::abs(pf[j] - f[j]);
        const double resid = static_cast<double>(r) * h;
        if (resid <= tol) return {std::move(f), resid, it};
        if (it >= max_iter) break;
        f = std::move(pf);
    }

    auto diag = drift_diagnostic(ops, std::move(f0), 20);
    std::string msg = "no fixed point within the iteration budget";
    if (diag.dispersive)
        msg += "; iterates are dispersive (size variance grows linearly, slope " +
               std::to_string(diag.var_slope) + ", R2 " + std::to_string(diag.var_r2) + ")";
    throw NoConvergence(msg);
}

/* Mean clock delay versus the per-generation gain of the size coordinate,
 * surveyed over the top quarter of the window. */
inline ExistenceReport existence_report(const ModelOperators& ops) {
    const CharGrid& g = *ops.grid;
    const GrowthModel& gm = g.growth;
    ExistenceReport rep;
    rep.mean_phase_a = mean_duration(ops.duration);
    rep.q_zero_finite = gm.convention.finite;

    const double inf = std::numeric_limits<double>::infinity();
    double lo = inf, hi = -inf;
    bool any = false;
    double conv_surv = 0.0;
    const std::size_t step = std::max<std::size_t>(1, g.ns / 256);
    for (std::size_t j = (3 * g.ns) / 4; j < g.ns; j += step) {
        const double s = g.s_center(j);
        double gap;
        try {
            const double x = q_inverse(gm, s);
            const double lx = lambda_cut(gm, g.t_b, x);
            if (lx <= gm.floor_size) continue;
            gap = q(gm, lx) - s;
            if (!any) conv_surv = survival(ops.duration, std::max(0.0, q(gm, lx)));
        } catch (const Error&) {
            continue;
        }
        lo = std::min(lo, gap);
        hi = std::max(hi, gap);
        any = true;
    }
    rep.tail_liminf = any ? lo : inf;
    rep.tail_sup = any ? hi : -inf;
    const bool conv_ok = any && conv_surv > 0.0;

    if (!rep.q_zero_finite) {
        rep.verdict = SteadyVerdict::inconclusive;
        rep.note = "size coordinate is unbounded below; the mean-delay criterion does not apply";
        if (gm.kind == GrowthModel::Kind::linear)
            rep.note += " (proportional growth admits no stationary birth-size density)";
        return rep;
    }
    if (!rep.mean_phase_a.finite) {
        if (conv_ok) {
            rep.verdict = SteadyVerdict::not_exists;
            rep.note = "mean clock delay diverges; descendants outgrow every window gap";
        } else {
            rep.verdict = SteadyVerdict::inconclusive;
        }
        return rep;
    }
    if (rep.mean_phase_a.value < rep.tail_liminf) {
        const double probe_age = 1.5 * g.a_max() + 1.0;
        rep.verdict = (psi(ops.duration, probe_age) > 0.0) ? SteadyVerdict::exists_unique
                                                           : SteadyVerdict::exists;
        if (gm.kind == GrowthModel::Kind::constant)
            rep.note = "for size-independent growth the criterion reduces to a finite mean delay";
        return rep;
    }
    if (conv_ok && rep.mean_phase_a.value > rep.tail_sup) {
        rep.verdict = SteadyVerdict::not_exists;
        rep.note = "mean clock delay exceeds the window's size gain per generation";
        return rep;
    }
    rep.verdict = SteadyVerdict::inconclusive;
    return rep;
}

/* Interior stationary profile from a fixed birth profile; written as direct
 * loops so it can be cross-checked against the lift operator. */
inline StateDensity build_steady_density(const ModelOperators& ops,
                                         const std::vector<double>& f1, double tol = 1e-6) {
    detail::require_edge(ops, f1);
    const CharGrid& g = *ops.grid;
    auto pf = apply_p(ops, f1);
    long double pm = 0.0L, fm = 0.0L;
    for (double v : pf) pm += v;
    for (double v : f1) fm += v;
    if ((pm > 0.0L) != (fm > 0.0L))
        throw PreconditionViolated("edge profile is not a fixed point of the generation map");
    if (fm > 0.0L) {
        long double r = 0.0L;
        for (std::size_t j = 0; j < f1.size(); ++j)
            r += std::abs(pf[j] / pm - f1[j] / fm);
        if (static_cast<double>(r) > tol)
            throw PreconditionViolated(
                "edge profile is not a fixed point of the generation map");
    }

    auto b2 = second_boundary(ops, f1);
    StateDensity out = StateDensity::zero(ops.grid);
    const std::size_t ns = g.ns;
    for (std::size_t i = 0; i < g.na && i < ns; ++i) {
        const double sc = ops.survival_center(i);
        double* row = out.f1.data() + i * ns;
        for (std::size_t j = i; j < ns; ++j) {
            const std::size_t k = j - i;
            row[j] = sc * 0.5 * ((k >= 1 ? f1[k - 1] : 0.0) + f1[k]);
        }
    }
    for (std::size_t i = 0; i < g.nb && i < ns; ++i) {
        double* row = out.f2.data() + i * ns;
        for (std::size_t j = i; j < ns; ++j) {
            const std::size_t k = j - i;
            row[j] = 0.5 * ((k >= 1 ? b2[k - 1] : 0.0) + b2[k]);
        }
    }
    return out;
}

inline SteadyResidualReport verify_steady(const ModelOperators& ops, const StateDensity& fs) {
    detail::require_same(ops, fs);
    SteadyResidualReport rep;
    auto b = apply_psi(ops, fs);
    auto av = apply_generator(ops, fs, &b);
    rep.generator_resid = l1_norm(av);

    auto tr = apply_psi0(ops, fs);
    BoundaryPair d1 = tr;
    axpy(d1, b, -1.0);
    rep.trace_gap = l1_norm(d1, ops.grid->h);

    auto p0 = apply_psi_psi_lambda(ops, b, 0.0);
    BoundaryPair d2 = p0;
    axpy(d2, b, -1.0);
    rep.fixed_point_gap = l1_norm(d2, ops.grid->h);

    double viol = 0.0;
    for (double lam : {0.5, 1.0}) {
        auto pl = apply_psi_psi_lambda(ops, b, lam);
        for (std::size_t j = 0; j < pl.b1.size(); ++j) {
            viol = std::max(viol, pl.b1[j] - b.b1[j]);
            viol = std::max(viol, pl.b2[j] - b.b2[j]);
        }
    }
    rep.one_sided_violation = std::max(0.0, viol);
    return rep;
}

}  // namespace cyclelab
