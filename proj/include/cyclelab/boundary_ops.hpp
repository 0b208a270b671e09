#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include "duration.hpp"
#include "errors.hpp"
#include "grid.hpp"

namespace cyclelab {

/* single_line follows one daughter through each division; bell keeps both. */
enum class Tracking { single_line, bell };

struct NeumannStats {
    std::size_t iterations = 0;
    double q = 0.0;
    double final_increment = 0.0;
    bool converged = false;
};

/* Grid + duration law + tracking mode, with per-row survival tables. */
class ModelOperators {
  public:
    std::shared_ptr<const CharGrid> grid;
    DurationModel duration;
    Tracking tracking;

    ModelOperators(std::shared_ptr<const CharGrid> g, DurationModel d, Tracking t)
        : grid(std::move(g)), duration(std::move(d)), tracking(t) {
        const CharGrid& gr = *grid;
        surv_node_.resize(gr.na + 1);
        for (std::size_t i = 0; i <= gr.na; ++i)
            surv_node_[i] = survival(duration, gr.a_node(i));
        surv_c_.resize(gr.na);
        inv_surv_c_.resize(gr.na);
        haz_w_.resize(gr.na);
        for (std::size_t i = 0; i < gr.na; ++i) {
            surv_c_[i] = survival(duration, gr.a_center(i));
            inv_surv_c_[i] = (surv_c_[i] > 1e-300) ? 1.0 / surv_c_[i] : 0.0;
            /* cell capture mass relative to the centre value; exact in the
             * sense that consecutive decrements telescope to the node tail */
            haz_w_[i] = (surv_c_[i] > 1e-300)
                            ? (surv_node_[i] - surv_node_[i + 1]) / (gr.h * surv_c_[i])
                            : 0.0;
        }
    }

    double division_factor() const { return tracking == Tracking::bell ? 2.0 : 1.0; }
    double survival_center(std::size_t i) const { return surv_c_[i]; }
    double inv_survival_center(std::size_t i) const { return inv_surv_c_[i]; }
    double survival_node(std::size_t i) const { return surv_node_[i]; }
    double hazard_weight(std::size_t i) const { return haz_w_[i]; }

  private:
    std::vector<double> surv_node_, surv_c_, inv_surv_c_, haz_w_;
};

namespace detail {

inline void require_same(const ModelOperators& ops, const StateDensity& f) {
    if (!f.grid || !ops.grid->same_shape(*f.grid))
        throw GridMismatch("density grid does not match operator grid");
}

inline void require_pair(const ModelOperators& ops, const BoundaryPair& b) {
    if (b.b1.size() != ops.grid->ns || b.b2.size() != ops.grid->ns)
        throw GridMismatch("edge array length does not match operator grid");
}

}  // namespace detail

inline void axpy(StateDensity& dst, const StateDensity& src, double c) {
    if (!dst.grid || !src.grid || !dst.grid->same_shape(*src.grid))
        throw GridMismatch("axpy on mismatched grids");
    for (std::size_t k = 0; k < dst.f1.size(); ++k) dst.f1[k] += c * src.f1[k];
    for (std::size_t k = 0; k < dst.f2.size(); ++k) dst.f2[k] += c * src.f2[k];
}

inline void axpy(BoundaryPair& dst, const BoundaryPair& src, double c) {
    if (dst.b1.size() != src.b1.size() || dst.b2.size() != src.b2.size())
        throw GridMismatch("axpy on mismatched edge arrays");
    for (std::size_t k = 0; k < dst.b1.size(); ++k) dst.b1[k] += c * src.b1[k];
    for (std::size_t k = 0; k < dst.b2.size(); ++k) dst.b2[k] += c * src.b2[k];
}

inline void axpy(double& dst, double src, double c) { dst += c * src; }

/* Lift of edge data along characteristics: each edge cell feeds the diagonal
 * band it spans, split evenly between the two straddling columns, damped by
 * e^{-lambda a} and (first phase only) by survival. */
inline StateDensity apply_psi_lambda(const ModelOperators& ops, const BoundaryPair& b,
                                     double lambda) {
    detail::require_pair(ops, b);
    const CharGrid& g = *ops.grid;
    StateDensity f = StateDensity::zero(ops.grid);
    const std::size_t ns = g.ns;
    for (std::size_t i = 0; i < g.na && i < ns; ++i) {
        const double pref = std::exp(-lambda * g.a_center(i)) * ops.survival_center(i);
        double* row = f.f1.data() + i * ns;
        for (std::size_t j = i; j < ns; ++j) {
            const std::size_t k = j - i;
            const double v = 0.5 * ((k >= 1 ? b.b1[k - 1] : 0.0) + b.b1[k]);
            row[j] = pref * v;
        }
    }
    for (std::size_t i = 0; i < g.nb && i < ns; ++i) {
        const double pref = std::exp(-lambda * g.a_center(i));
        double* row = f.f2.data() + i * ns;
        for (std::size_t j = i; j < ns; ++j) {
            const std::size_t k = j - i;
            const double v = 0.5 * ((k >= 1 ? b.b2[k - 1] : 0.0) + b.b2[k]);
            row[j] = pref * v;
        }
    }
    return f;
}

namespace detail {

/* Trace at the age-zero edge: extrapolate the first two cells lying on each
 * incoming diagonal down to age zero (node values), then centre-average. */
inline std::vector<double> entry_trace(const CharGrid& g, const std::vector<double>& block,
                                       std::size_t rows) {
    const std::size_t ns = g.ns;
    std::vector<double> tn(ns + 1);
    for (std::size_t j = 0; j <= ns; ++j) {
        const std::size_t jc = (j < ns) ? j : ns - 1;
        if (rows >= 2 && j + 1 < ns)
            tn[j] = 1.5 * block[jc] - 0.5 * block[ns + j + 1];
        else
            tn[j] = block[jc];
    }
    std::vector<double> out(ns);
    for (std::size_t j = 0; j < ns; ++j) out[j] = 0.5 * (tn[j] + tn[j + 1]);
    return out;
}

/* Outgoing trace at the top age edge of a block, same construction. */
inline std::vector<double> exit_trace(const CharGrid& g, const std::vector<double>& block,
                                      std::size_t rows) {
    const std::size_t ns = g.ns;
    const std::size_t r1 = rows - 1;
    std::vector<double> tn(ns + 1, 0.0);
    for (std::size_t j = 0; j <= ns; ++j) {
        const std::size_t j1 = (j >= 1) ? j - 1 : 0;
        if (rows >= 2 && j >= 2 && j1 < ns)
            tn[j] = 1.5 * block[r1 * ns + j1] - 0.5 * block[(r1 - 1) * ns + (j - 2)];
        else if (j1 < ns)
            tn[j] = block[r1 * ns + j1];
    }
    std::vector<double> out(ns);
    for (std::size_t j = 0; j < ns; ++j) out[j] = 0.5 * (tn[j] + tn[j + 1]);
    return out;
}

}  // namespace detail

inline BoundaryPair apply_psi0(const ModelOperators& ops, const StateDensity& f) {
    detail::require_same(ops, f);
    const CharGrid& g = *ops.grid;
    BoundaryPair out;
    out.b1 = detail::entry_trace(g, f.f1, g.na);
    out.b2 = detail::entry_trace(g, f.f2, g.nb);
    return out;
}

/* Feedback functionals: capture flux of the first phase (per-cell survival
 * decrements) and the halved division flux of the second. */
inline BoundaryPair apply_psi(const ModelOperators& ops, const StateDensity& f) {
    detail::require_same(ops, f);
    const CharGrid& g = *ops.grid;
    const std::size_t ns = g.ns;
    BoundaryPair out;
    out.b2.assign(ns, 0.0);
    for (std::size_t i = 0; i < g.na; ++i) {
        const double w = g.h * ops.hazard_weight(i);
        if (w == 0.0) continue;
        const double* row = f.f1.data() + i * ns;
        for (std::size_t j = 0; j < ns; ++j) out.b2[j] += w * row[j];
    }
    auto tr = detail::exit_trace(g, f.f2, g.nb);
    auto rem = divide_remap(g, tr, 0.0, 0.0);
    out.b1 = std::move(rem.values);
    const double fac = ops.division_factor();
    if (fac != 1.0)
        for (double& v : out.b1) v *= fac;
    return out;
}

/* Closed-kernel composition Psi o Psi(lambda): a 1-D convolution against the
 * exact e^{-lambda a}-weighted cell masses of the duration density, and a
 * shift by the handoff age followed by the halving pushforward. */
inline BoundaryPair apply_psi_psi_lambda(const ModelOperators& ops, const BoundaryPair& b,
                                         double lambda) {
    detail::require_pair(ops, b);
    const CharGrid& g = *ops.grid;
    const std::size_t ns = g.ns;
    BoundaryPair out;
    out.b2.assign(ns, 0.0);
    for (std::size_t i = 0; i < g.na && i < ns; ++i) {
        const double w = laplace_weight(ops.duration, lambda, g.a_node(i), g.a_node(i + 1));
        if (w == 0.0) continue;
        for (std::size_t j = i; j < ns; ++j) {
            const std::size_t k = j - i;
            out.b2[j] += w * 0.5 * ((k >= 1 ? b.b1[k - 1] : 0.0) + b.b1[k]);
        }
    }
    std::vector<double> shifted(ns, 0.0);
    for (std::size_t j = g.nb; j < ns; ++j) shifted[j] = b.b2[j - g.nb];
    auto rem = divide_remap(g, shifted, 0.0, 0.0);
    out.b1 = std::move(rem.values);
    const double scale = ops.division_factor() * std::exp(-lambda * g.t_b);
    for (double& v : out.b1) v *= scale;
    return out;
}

inline double norm_bound(const ModelOperators& ops, double lambda) {
    return std::max(ops.division_factor() * std::exp(-lambda * ops.grid->t_b),
                    laplace_psi(ops.duration, lambda));
}

/* Geometric series for (I - K)^{-1} rhs given a contraction bound q on K. */
template <class Vec, class Op, class Norm>
Vec solve_neumann(Op&& apply, Norm&& norm, Vec rhs, double q, double tol,
                  NeumannStats* stats) {
    if (!(q >= 0.0) || q >= 1.0 - 1e-12)
        throw PreconditionViolated("series bound reaches 1, no contraction");
    NeumannStats st;
    st.q = q;
    const double r0 = norm(rhs);
    Vec acc = rhs;
    Vec term = std::move(rhs);
    if (r0 == 0.0) {
        st.converged = true;
        if (stats) *stats = st;
        return acc;
    }
    const double lq = std::log(std::max(q, 1e-12));
    std::size_t cap = static_cast<std::size_t>(
        10.0 * std::ceil(std::log(tol * (1.0 - q)) / lq));
    cap = std::max<std::size_t>(cap, 8);
    for (std::size_t k = 1; k <= cap; ++k) {
        term = apply(term);
        axpy(acc, term, 1.0);
        const double nt = norm(term);
        st.iterations = k;
        st.final_increment = nt;
        if (nt * q / (1.0 - q) <= tol * r0) {
            st.converged = true;
            break;
        }
    }
    if (stats) *stats = st;
    if (!st.converged) throw NoConvergence("boundary series did not converge");
    return acc;
}

inline BoundaryPair solve_boundary(const ModelOperators& ops, const BoundaryPair& rhs,
                                   double lambda, double tol, NeumannStats* stats) {
    detail::require_pair(ops, rhs);
    const double q = norm_bound(ops, lambda);
    if (q >= 1.0 - 1e-12)
        throw PreconditionViolated("feedback bound reaches 1 at this lambda");
    const double h = ops.grid->h;
    return solve_neumann(
        [&](const BoundaryPair& p) { return apply_psi_psi_lambda(ops, p, lambda); },
        [&](const BoundaryPair& p) { return l1_norm(p, h); }, rhs, q, tol, stats);
}

/* Resolvent of the absorbing generator: integrate sources along each diagonal
 * with exact e^{-lambda t} segment masses and centre-to-centre survival
 * ratios.  The rolling recurrence keeps it linear in the cell count. */
inline StateDensity resolvent_a0(const ModelOperators& ops, const StateDensity& f,
                                 double lambda) {
    detail::require_same(ops, f);
    if (lambda < 0.0) throw PreconditionViolated("resolvent needs lambda >= 0");
    const CharGrid& g = *ops.grid;
    const std::size_t ns = g.ns;
    const double h = g.h;
    const double eh = std::exp(-lambda * h);
    const double ehh = std::exp(-0.5 * lambda * h);
    const double eta = (lambda > 0.0) ? (1.0 - eh) / lambda : h;
    const double eta_half = (lambda > 0.0) ? (1.0 - ehh) / lambda : 0.5 * h;

    StateDensity out = StateDensity::zero(ops.grid);
    std::vector<double> G(ns, 0.0);
    for (std::size_t i = 0; i < g.na; ++i) {
        if (i > 0) {
            const double inv = ops.inv_survival_center(i - 1);
            const double* prev = f.f1.data() + (i - 1) * ns;
            for (std::size_t j = ns; j-- > 1;)
                G[j] = eta * prev[j - 1] * inv + eh * G[j - 1];
            G[0] = 0.0;
        }
        const double* src = f.f1.data() + i * ns;
        double* dst = out.f1.data() + i * ns;
        const double sc = ehh * ops.survival_center(i);
        for (std::size_t j = 0; j < ns; ++j) dst[j] = eta_half * src[j] + sc * G[j];
    }
    std::fill(G.begin(), G.end(), 0.0);
    for (std::size_t i = 0; i < g.nb; ++i) {
        if (i > 0) {
            const double* prev = f.f2.data() + (i - 1) * ns;
            for (std::size_t j = ns; j-- > 1;) G[j] = eta * prev[j - 1] + eh * G[j - 1];
            G[0] = 0.0;
        }
        const double* src = f.f2.data() + i * ns;
        double* dst = out.f2.data() + i * ns;
        for (std::size_t j = 0; j < ns; ++j) dst[j] = eta_half * src[j] + ehh * G[j];
    }
    return out;
}

/* Resolvent of the boundary-coupled generator: absorbing resolvent, feedback
 * of its traces, geometric solve on the edge, then one lift. */
inline StateDensity resolvent_a_psi(const ModelOperators& ops, const StateDensity& f,
                                    double lambda, double tol = 1e-10,
                                    NeumannStats* stats = nullptr) {
    auto r0 = resolvent_a0(ops, f, lambda);
    auto rhs = apply_psi(ops, r0);
    auto ub = solve_boundary(ops, rhs, lambda, tol, stats);
    auto lift = apply_psi_lambda(ops, ub, lambda);
    axpy(lift, r0, 1.0);
    return lift;
}

/* Upwind action of the free generator; survival decay is folded into the
 * diagonal ratio so transport-with-death telescopes exactly.  Row zero uses
 * the edge data when it is supplied and stays zero otherwise. */
inline StateDensity apply_generator(const ModelOperators& ops, const StateDensity& f,
                                    const BoundaryPair* bc = nullptr) {
    detail::require_same(ops, f);
    if (bc) detail::require_pair(ops, *bc);
    const CharGrid& g = *ops.grid;
    const std::size_t ns = g.ns;
    const double h = g.h;
    StateDensity out = StateDensity::zero(ops.grid);

    for (std::size_t i = 0; i < g.na; ++i) {
        double* dst = out.f1.data() + i * ns;
        const double* cur = f.f1.data() + i * ns;
        if (i == 0) {
            if (!bc) continue;
            const double ratio = ops.survival_center(0);
            for (std::size_t j = 0; j < ns; ++j) {
                const double ghost =
                    0.5 * ((j >= 1 ? bc->b1[j - 1] : 0.0) + bc->b1[j]);
                dst[j] = (ratio * ghost - cur[j]) / h;
            }
        } else {
            const double ratio = ops.survival_center(i) * ops.inv_survival_center(i - 1);
            const double* prev = f.f1.data() + (i - 1) * ns;
            dst[0] = -cur[0] / h;
            for (std::size_t j = 1; j < ns; ++j)
                dst[j] = (ratio * prev[j - 1] - cur[j]) / h;
        }
    }
    for (std::size_t i = 0; i < g.nb; ++i) {
        double* dst = out.f2.data() + i * ns;
        const double* cur = f.f2.data() + i * ns;
        if (i == 0) {
            if (!bc) continue;
            for (std::size_t j = 0; j < ns; ++j) {
                const double ghost =
                    0.5 * ((j >= 1 ? bc->b2[j - 1] : 0.0) + bc->b2[j]);
                dst[j] = (ghost - cur[j]) / h;
            }
        } else {
            const double* prev = f.f2.data() + (i - 1) * ns;
            dst[0] = -cur[0] / h;
            for (std::size_t j = 1; j < ns; ++j) dst[j] = (prev[j - 1] - cur[j]) / h;
        }
    }
    return out;
}

struct HypothesisReport {
    double h = 0.0;
    double lambda = 0.0;
    double identity_err = 0.0;        /* entry trace after lift vs. the data */
    double generator_err = 0.0;       /* eigenrelation of the lift */
    double feedback_col_bound = 0.0;  /* exact column sums of the composition */
    double feedback_probe_ratio = 0.0;
    double norm_bound_q = 0.0;
    double r0_contraction = 0.0;      /* max probe of lambda|R0 e| / |e| */
    double green_err = 0.0;           /* mass ledger residual of R0 */

    bool ok() const {
        return identity_err < 5.0 * h && generator_err < 0.15 &&
               feedback_col_bound <= norm_bound_q + 1e-12 &&
               feedback_probe_ratio <= norm_bound_q + 1e-12 &&
               r0_contraction <= 1.0 + 1e-12 && green_err < 0.01;
    }
};

inline HypothesisReport check_hypotheses(const ModelOperators& ops, double lambda) {
    const CharGrid& g = *ops.grid;
    const std::size_t ns = g.ns;
    HypothesisReport rep;
    rep.h = g.h;
    rep.lambda = lambda;
    rep.norm_bound_q = norm_bound(ops, lambda);

    const double c = 0.5 * (g.s_min + g.s_max());
    const double w = (g.s_max() - g.s_min) / 8.0;
    BoundaryPair b;
    b.b1.resize(ns);
    b.b2.resize(ns);
    for (std::size_t j = 0; j < ns; ++j) {
        const double u = (g.s_center(j) - c) / w;
        b.b1[j] = std::exp(-u * u);
        b.b2[j] = std::exp(-(u - 0.25) * (u - 0.25));
    }

    auto v = apply_psi_lambda(ops, b, lambda);
    auto tr = apply_psi0(ops, v);
    BoundaryPair d = tr;
    axpy(d, b, -1.0);
    rep.identity_err = l1_norm(d, g.h) / l1_norm(b, g.h);

    auto av = apply_generator(ops, v, &b);
    StateDensity gd = av;
    axpy(gd, v, -lambda);
    rep.generator_err = l1_norm(gd) / (lambda * l1_norm(v));

    long double cap = 0.0L;
    for (std::size_t i = 0; i < g.na; ++i)
        cap += laplace_weight(ops.duration, lambda, g.a_node(i), g.a_node(i + 1));
    rep.feedback_col_bound = std::max(
        ops.division_factor() * std::exp(-lambda * g.t_b), static_cast<double>(cap));
    auto pb = apply_psi_psi_lambda(ops, b, lambda);
    rep.feedback_probe_ratio = l1_norm(pb, g.h) / l1_norm(b, g.h);

    const std::size_t picks[][2] = {{0, ns / 2}, {g.na - 1, ns - 1}, {g.na / 2, 3}};
    double worst = 0.0;
    for (auto& p : picks) {
        auto e = StateDensity::zero(ops.grid);
        e.at1(p[0], p[1]) = 1.0;
        if (p[0] < g.nb) e.at2(p[0], p[1]) = 1.0;
        auto re = resolvent_a0(ops, e, lambda);
        worst = std::max(worst, lambda * l1_norm(re) / l1_norm(e));
    }
    {
        auto one = [](double, double) { return 1.0; };
        auto ones = StateDensity::from_coordinate(ops.grid, one, one);
        auto ro = resolvent_a0(ops, ones, lambda);
        worst = std::max(worst, lambda * l1_norm(ro) / l1_norm(ones));
    }
    rep.r0_contraction = worst;

    const double am = 0.25 * g.a_max();
    const double aw = g.a_max() / 8.0;
    auto probe = [&](double a, double s) {
        const double ua = (a - am) / aw;
        const double us = (s - c) / w;
        return std::exp(-ua * ua - us * us);
    };
    auto f = StateDensity::from_coordinate(ops.grid, probe, probe);
    auto u0 = resolvent_a0(ops, f, lambda);
    auto fb = apply_psi(ops, u0);
    auto top = detail::exit_trace(g, u0.f1, g.na);
    long double ledger = 0.0L;
    for (double x : fb.b2) ledger += x;
    for (double x : fb.b1) ledger += x / ops.division_factor();
    for (double x : top) ledger += x;
    const double total = lambda * l1_norm(u0) + static_cast<double>(ledger) * g.h;
    rep.green_err = std::abs(total - l1_norm(f)) / l1_norm(f);
    return rep;
}

}  // namespace cyclelab
