#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "growth.hpp"

namespace cyclelab {

/* Rectangular cell-centred lattice in characteristic coordinates (age,
 * cumulative flow time).  Transport is a unit-speed diagonal shift on it,
 * which is why the two axes share one spacing.  The spacing is snapped so
 * that the phase handoff age falls exactly on a node. */
class CharGrid {
  public:
    GrowthModel growth;
    double t_b = 0.0;       /* deterministic phase length */
    double h = 0.0;         /* shared spacing, equals t_b / nb */
    std::size_t na = 0;     /* variable-phase age cells */
    std::size_t nb = 0;     /* deterministic-phase age cells */
    std::size_t ns = 0;     /* flow-time cells */
    double s_min = 0.0;

    CharGrid(GrowthModel gm, double t_b_, double h_request, double a_max_request,
             double s_min_, double s_max_request)
        : growth(std::move(gm)), t_b(t_b_), s_min(s_min_) {
        if (t_b < 0.0) throw NegativeAge("phase handoff age is negative");
        if (t_b == 0.0) throw NonPositiveSize("phase handoff age must be positive");
        if (!(h_request > 0.0)) throw NonPositiveSize("grid spacing must be positive");
        if (!(a_max_request > 0.0)) throw NonPositiveSize("age extent must be positive");
        if (!(s_max_request > s_min)) throw NonPositiveSize("size window is empty");

        nb = static_cast<std::size_t>(std::max<long long>(1, std::llround(t_b / h_request)));
        h = t_b / static_cast<double>(nb);
        na = static_cast<std::size_t>(std::ceil(a_max_request / h - 1e-9));
        na = std::max<std::size_t>(na, 1);
        ns = static_cast<std::size_t>(std::ceil((s_max_request - s_min) / h - 1e-9));
        ns = std::max<std::size_t>(ns, 1);

        if (growth.convention.finite) {
            const double q0 = growth.convention.q_at_zero;
            if (s_min < q0 - 1e-12 * std::max(1.0, std::abs(q0)))
                throw OutOfRange("size window starts below the smallest size");
            diag_thr_ = (q0 - s_min) / h + 1e-9;
        } else {
            diag_thr_ = -std::numeric_limits<double>::infinity();
        }
    }

    double a_max() const { return static_cast<double>(na) * h; }
    double s_max() const { return s_min + static_cast<double>(ns) * h; }
    double a_node(std::size_t i) const { return static_cast<double>(i) * h; }
    double a_center(std::size_t i) const { return (static_cast<double>(i) + 0.5) * h; }
    double s_node(std::size_t j) const { return s_min + static_cast<double>(j) * h; }
    double s_center(std::size_t j) const { return s_min + (static_cast<double>(j) + 0.5) * h; }
    double x_center(std::size_t j) const { return q_inverse(growth, s_center(j)); }

    /* A cell is reachable only if its flow time exceeds its age by more than
     * the flow time of the smallest size; everything below that diagonal is
     * structurally empty. */
    bool active(std::size_t i, std::size_t j) const {
        return static_cast<double>(j) - static_cast<double>(i) > diag_thr_;
    }

    bool same_shape(const CharGrid& o) const {
        return na == o.na && nb == o.nb && ns == o.ns && h == o.h && s_min == o.s_min;
    }

  private:
    double diag_thr_ = 0.0;
};

/* Two age-stratified density blocks sharing the flow-time axis.  Entries are
 * coordinate densities: physical mass of a cell is value * h^2 and the
 * physical density at (a, x) divides out the growth speed. */
struct StateDensity {
    std::shared_ptr<const CharGrid> grid;
    std::vector<double> f1;  /* na x ns */
    std::vector<double> f2;  /* nb x ns */

    double& at1(std::size_t i, std::size_t j) { return f1[i * grid->ns + j]; }
    double& at2(std::size_t i, std::size_t j) { return f2[i * grid->ns + j]; }
    double at1(std::size_t i, std::size_t j) const { return f1[i * grid->ns + j]; }
    double at2(std::size_t i, std::size_t j) const { return f2[i * grid->ns + j]; }

    static StateDensity zero(std::shared_ptr<const CharGrid> g) {
        StateDensity f;
        f.f1.assign(g->na * g->ns, 0.0);
        f.f2.assign(g->nb * g->ns, 0.0);
        f.grid = std::move(g);
        return f;
    }

    /* Fill from coordinate-space callables f(a, s); unreachable cells stay 0. */
    template <class F1, class F2>
    static StateDensity from_coordinate(std::shared_ptr<const CharGrid> g, F1&& c1, F2&& c2) {
        StateDensity f = zero(g);
        const CharGrid& gr = *f.grid;
        for (std::size_t i = 0; i < gr.na; ++i)
            for (std::size_t j = 0; j < gr.ns; ++j)
                if (gr.active(i, j)) f.at1(i, j) = checked(c1(gr.a_center(i), gr.s_center(j)));
        for (std::size_t i = 0; i < gr.nb; ++i)
            for (std::size_t j = 0; j < gr.ns; ++j)
                if (gr.active(i, j)) f.at2(i, j) = checked(c2(gr.a_center(i), gr.s_center(j)));
        return f;
    }

    /* Fill from physical-space callables p(a, x). */
    template <class P1, class P2>
    static StateDensity from_physical(std::shared_ptr<const CharGrid> g, P1&& p1, P2&& p2) {
        StateDensity f = zero(g);
        const CharGrid& gr = *f.grid;
        std::vector<double> xc(gr.ns), gc(gr.ns);
        for (std::size_t j = 0; j < gr.ns; ++j) {
            xc[j] = gr.x_center(j);
            gc[j] = gr.growth.g_of(xc[j]);
        }
        for (std::size_t i = 0; i < gr.na; ++i)
            for (std::size_t j = 0; j < gr.ns; ++j)
                if (gr.active(i, j)) f.at1(i, j) = checked(p1(gr.a_center(i), xc[j]) * gc[j]);
        for (std::size_t i = 0; i < gr.nb; ++i)
            for (std::size_t j = 0; j < gr.ns; ++j)
                if (gr.active(i, j)) f.at2(i, j) = checked(p2(gr.a_center(i), xc[j]) * gc[j]);
        return f;
    }

  private:
    static double checked(double v) {
        if (v < 0.0) throw PreconditionViolated("density must be nonnegative");
        return v;
    }
};

/* Entry fluxes at age zero of the two phases, one value per flow-time cell. */
struct BoundaryPair {
    std::vector<double> b1;
    std::vector<double> b2;
};

inline double l1_norm(const std::vector<double>& b, double h) {
    long double acc = 0.0L;
    for (double v : b) acc += std::abs(v);
    return static_cast<double>(acc * h);
}

inline double l1_norm(const BoundaryPair& b, double h) {
    long double acc = 0.0L;
    for (double v : b.b1) acc += std::abs(v);
    for (double v : b.b2) acc += std::abs(v);
    return static_cast<double>(acc * h);
}

inline double l1_norm(const StateDensity& f) {
    long double acc = 0.0L;
    for (double v : f.f1) acc += std::abs(v);
    for (double v : f.f2) acc += std::abs(v);
    return static_cast<double>(acc * f.grid->h * f.grid->h);
}

/* Signed cell mass of one block. */
inline double phase_mass(const StateDensity& f, int phase) {
    const std::vector<double>& v = (phase == 1) ? f.f1 : f.f2;
    if (phase != 1 && phase != 2) throw OutOfRange("phase must be 1 or 2");
    long double acc = 0.0L;
    for (double x : v) acc += x;
    return static_cast<double>(acc * f.grid->h * f.grid->h);
}

namespace detail {

/* Bilinear interpolation on cell centres with constant continuation in the
 * outer half-cells; u and w are in centre-index units. */
inline double bilinear_centers(const std::vector<double>& v, std::size_t rows,
                               std::size_t cols, double u, double w) {
    const double cu = std::clamp(u, 0.0, static_cast<double>(rows - 1));
    const double cw = std::clamp(w, 0.0, static_cast<double>(cols - 1));
    std::size_t i0 = static_cast<std::size_t>(cu);
    std::size_t j0 = static_cast<std::size_t>(cw);
    if (rows >= 2) i0 = std::min(i0, rows - 2);
    if (cols >= 2) j0 = std::min(j0, cols - 2);
    const double wa = cu - static_cast<double>(i0);
    const double wb = cw - static_cast<double>(j0);
    const std::size_t i1 = (rows >= 2) ? i0 + 1 : i0;
    const std::size_t j1 = (cols >= 2) ? j0 + 1 : j0;
    return (1.0 - wa) * ((1.0 - wb) * v[i0 * cols + j0] + wb * v[i0 * cols + j1]) +
           wa * ((1.0 - wb) * v[i1 * cols + j0] + wb * v[i1 * cols + j1]);
}

}  // namespace detail

/* Physical density at (a, x) of the requested phase. */
inline double to_physical(const StateDensity& f, int phase, double a, double x) {
    const CharGrid& g = *f.grid;
    if (phase != 1 && phase != 2) throw OutOfRange("phase must be 1 or 2");
    const std::size_t rows = (phase == 1) ? g.na : g.nb;
    const double amax = static_cast<double>(rows) * g.h;
    if (a < 0.0 || a > amax) throw OutOfRange("age outside the grid");
    const double s = q(g.growth, x);
    if (!(s >= g.s_min) || !(s <= g.s_max())) throw OutOfRange("size outside the grid");
    const double u = a / g.h - 0.5;
    const double w = (s - g.s_min) / g.h - 0.5;
    const double val = detail::bilinear_centers((phase == 1) ? f.f1 : f.f2, rows, g.ns, u, w);
    return val / g.growth.g_of(x);
}

struct RemapResult {
    std::vector<double> values;
    double truncated = 0.0;  /* mass pushed outside the window */
};

/* Conservative pushforward of an edge array under size halving, expressed on
 * the flow-time axis: source mass in cell [s_j, s_{j+1}) is spread uniformly
 * over the image interval of sigma -> q(x(sigma + pre)/2) + post.  The two
 * offsets let callers centre the map inside a transport step. */
inline RemapResult divide_remap(const CharGrid& g, const std::vector<double>& b,
                                double pre_shift, double post_shift) {
    if (b.size() != g.ns) throw GridMismatch("edge array does not match grid");
    const double h = g.h;
    const double smin = g.s_min;
    const double smax = g.s_max();
    const double inf = std::numeric_limits<double>::infinity();

    auto half_map = [&](double sigma) -> double {
        double x;
        try {
            x = q_inverse(g.growth, sigma);
        } catch (const Error&) {
            return inf; /* beyond the tabulated range: mass leaves upward */
        }
        try {
            return q(g.growth, 0.5 * x) + post_shift;
        } catch (const Error&) {
            return -inf; /* daughter size below the representable range */
        }
    };

    std::vector<double> t(g.ns + 1);
    for (std::size_t k = 0; k <= g.ns; ++k) t[k] = half_map(g.s_node(k) + pre_shift);

    RemapResult r;
    r.values.assign(g.ns, 0.0);
    long double trunc = 0.0L;

    for (std::size_t j = 0; j < g.ns; ++j) {
        const double v = b[j];
        if (v == 0.0) continue;
        const double tlo = t[j], thi = t[j + 1];
        const long double mass = static_cast<long double>(v) * h;
        if (!std::isfinite(tlo) || !std::isfinite(thi)) {
            trunc += mass;
            continue;
        }
        const double w = thi - tlo;
        if (!(w > 0.0)) {
            /* collapsed image: deposit as a point */
            const double p = 0.5 * (tlo + thi);
            if (p >= smin && p < smax)
                r.values[static_cast<std::size_t>((p - smin) / h)] += static_cast<double>(mass / h);
            else
                trunc += mass;
            continue;
        }
        const double clo = std::max(tlo, smin);
        const double chi = std::min(thi, smax);
        if (!(chi > clo)) {
            trunc += mass;
            continue;
        }
        trunc += mass * static_cast<long double>(((clo - tlo) + (thi - chi)) / w);
        auto cell = [&](double sv) {
            const double idx = std::floor((sv - smin) / h);
            return static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(g.ns - 1)));
        };
        const std::size_t k0 = cell(clo);
        const std::size_t k1 = cell(std::nextafter(chi, clo));
        for (std::size_t k = k0; k <= k1; ++k) {
            const double lo = std::max(clo, g.s_node(k));
            const double hi = std::min(chi, g.s_node(k + 1));
            if (hi > lo) r.values[k] += v * (hi - lo) / w;
        }
    }
    r.truncated = static_cast<double>(trunc);
    return r;
}

inline std::vector<double> halve_size_pushforward(const CharGrid& g, const std::vector<double>& b) {
    return divide_remap(g, b, 0.0, 0.0).values;
}

}  // namespace cyclelab
