#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "boundary_ops.hpp"

namespace cyclelab {

/* Physical-mass bookkeeping for one step of length h. */
struct StepLedger {
    double truncated = 0.0;  /* left through the top of the size window */
    double captured = 0.0;   /* moved from the variable phase into the clock phase */
    double divided = 0.0;    /* planted in the entry row (newborn mass, factor included) */
};

namespace detail {

/* Workspace form of the step: `out` is overwritten wholesale and the scratch
 * vectors are recycled, so a long evolution never touches the allocator. */
inline StepLedger step_into(const ModelOperators& ops, const StateDensity& f,
                            StateDensity& out, std::vector<double>& capture,
                            std::vector<double>& divrow) {
    const CharGrid& g = *ops.grid;
    const std::size_t na = g.na, nb = g.nb, ns = g.ns;
    const double h = g.h;

    std::fill(out.f1.begin(), out.f1.end(), 0.0);
    std::fill(out.f2.begin(), out.f2.end(), 0.0);
    capture.assign(ns, 0.0);
    long double lost = 0.0L, grabbed = 0.0L;

    for (std::size_t i = 0; i < na; ++i) {
        const bool top = (i + 1 == na);
        const double r =
            top ? 0.0 : ops.survival_center(i + 1) * ops.inv_survival_center(i);
        for (std::size_t j = 0; j < ns; ++j) {
            const double v = f.at1(i, j);
            if (v == 0.0) continue;
            if (j + 1 >= ns) {
                lost += v;
                continue;
            }
            const double kept = r * v;
            if (!top) out.at1(i + 1, j + 1) = kept;
            capture[j + 1] += v - kept;
            grabbed += v - kept;
        }
    }
    for (std::size_t j = 0; j < ns; ++j) out.at2(0, j) = capture[j];

    for (std::size_t i = 0; i + 1 < nb; ++i)
        for (std::size_t j = 0; j < ns; ++j) {
            const double v = f.at2(i, j);
            if (v == 0.0) continue;
            if (j + 1 >= ns) {
                lost += v;
                continue;
            }
            out.at2(i + 1, j + 1) = v;
        }

    /* dividing slice: advance half a cell to the handoff age, halve the
     * size, advance half a cell into the daughter's life */
    divrow.assign(f.f2.begin() + static_cast<std::ptrdiff_t>((nb - 1) * ns),
                  f.f2.begin() + static_cast<std::ptrdiff_t>(nb * ns));
    auto rem = divide_remap(g, divrow, 0.5 * h, 0.5 * h);
    const double fac = ops.division_factor();
    long double born = 0.0L;
    for (std::size_t j = 0; j < ns; ++j) {
        const double v = fac * rem.values[j];
        out.at1(0, j) = v;
        born += v;
    }

    StepLedger led;
    led.truncated = static_cast<double>(lost) * h * h + rem.truncated * h;
    led.captured = static_cast<double>(grabbed) * h * h;
    led.divided = static_cast<double>(born) * h * h;
    return led;
}

}  // namespace detail

/* One unit-CFL step of the upwind flow.  Cells slide one lattice diagonal;
 * the variable phase sheds its hazard decrement into the fresh clock row,
 * the last clock row divides through the size-halving remap, and whatever
 * crosses the top of the size window is written off in the ledger. */
inline std::pair<StateDensity, StepLedger> step(const ModelOperators& ops,
                                                const StateDensity& f) {
    detail::require_same(ops, f);
    StateDensity out = StateDensity::zero(ops.grid);
    std::vector<double> capture, divrow;
    StepLedger led = detail::step_into(ops, f, out, capture, divrow);
    return {std::move(out), led};
}

struct EvolveResult {
    StateDensity density;
    StepLedger total;
    std::vector<double> mass_trace;  /* population mass after 0, 1, ..., n steps */
    std::vector<double> trunc_trace; /* cumulative window loss, same alignment */
};

inline EvolveResult evolve(const ModelOperators& ops, StateDensity f, double t_end) {
    detail::require_same(ops, f);
    if (!(t_end >= 0.0)) throw PreconditionViolated("evolution horizon must be nonnegative");
    const double h = ops.grid->h;
    const long long n = std::llround(t_end / h);
    if (std::abs(static_cast<double>(n) * h - t_end) > 1e-9 * std::max(1.0, t_end))
        throw PreconditionViolated("evolution horizon is not a whole number of steps");

    EvolveResult res;
    res.mass_trace.reserve(static_cast<std::size_t>(n) + 1);
    res.trunc_trace.reserve(static_cast<std::size_t>(n) + 1);
    res.mass_trace.push_back(l1_norm(f));
    res.trunc_trace.push_back(0.0);
    long double cum_t = 0.0L, cum_c = 0.0L, cum_d = 0.0L;
    StateDensity buf = StateDensity::zero(ops.grid);
    std::vector<double> capture, divrow;
    for (long long k = 0; k < n; ++k) {
        StepLedger led = detail::step_into(ops, f, buf, capture, divrow);
        f.f1.swap(buf.f1);
        f.f2.swap(buf.f2);
        cum_t += led.truncated;
        cum_c += led.captured;
        cum_d += led.divided;
        res.mass_trace.push_back(l1_norm(f));
        res.trunc_trace.push_back(static_cast<double>(cum_t));
    }
    res.total.truncated = static_cast<double>(cum_t);
    res.total.captured = static_cast<double>(cum_c);
    res.total.divided = static_cast<double>(cum_d);
    res.density = std::move(f);
    return res;
}

/* Malthusian rate from the tail of the mass trace; only meaningful when both
 * daughters are kept, so the single-line variant is rejected outright. */
inline double bell_growth_rate(const ModelOperators& ops, const StateDensity& f,
                               double horizon) {
    if (ops.tracking != Tracking::bell)
        throw PreconditionViolated("population growth rate requires the bell variant");
    auto ev = evolve(ops, f, horizon);
    const auto& m = ev.mass_trace;
    const std::size_t n = m.size();
    const std::size_t k0 = n / 2;
    if (n < k0 + 2) throw PreconditionViolated("horizon too short for a rate fit");
    const double h = ops.grid->h;
    long double sx = 0.0L, sy = 0.0L, sxx = 0.0L, sxy = 0.0L;
    for (std::size_t k = k0; k < n; ++k) {
        const double x = static_cast<double>(k) * h;
        const double y = std::log(std::max(m[k], 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const auto cnt = static_cast<long double>(n - k0);
    const long double det = cnt * sxx - sx * sx;
    return static_cast<double>((cnt * sxy - sx * sy) / det);
}

}  // namespace cyclelab
