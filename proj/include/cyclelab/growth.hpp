#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"

namespace cyclelab {

/*
 * Behaviour of the flow map at the zero-size boundary: either Q(0) is finite
 * (trajectories started at 0 enter the domain, backward flows clamp to the
 * floor size) or Q(0) = -inf (zero is never reached; for g(x)=kx it is a
 * fixed point).
 */
struct FlowConvention {
    bool finite = true;
    double q_at_zero = 0.0;  /* meaningful only when finite */
};

/*
 * Size growth law g(x) > 0 together with the cumulative flow time
 * Q(x) = int_{x_bar}^x dr/g(r).  Tabulated laws use piecewise-linear g,
 * which makes every segment integral and its inverse closed-form.
 */
class GrowthModel {
  public:
    enum class Kind { constant, linear, table };

    Kind kind = Kind::constant;
    double k = 1.0;
    double x_bar = 0.0;
    FlowConvention convention;
    double floor_size = 0.0;  /* clamp target of backward flows (finite case) */

    static GrowthModel constant(double k, double x_bar = 0.0) {
        require_pos(k, "growth rate");
        if (x_bar < 0) throw NonPositiveSize("x_bar must be >= 0");
        GrowthModel m;
        m.kind = Kind::constant;
        m.k = k;
        m.x_bar = x_bar;
        m.convention = {true, -x_bar / k};
        m.floor_size = 0.0;
        return m;
    }

    static GrowthModel linear(double k, double x_bar = 1.0) {
        require_pos(k, "growth rate");
        require_pos(x_bar, "x_bar");
        GrowthModel m;
        m.kind = Kind::linear;
        m.k = k;
        m.x_bar = x_bar;
        m.convention = {false, -std::numeric_limits<double>::infinity()};
        m.floor_size = 0.0;
        return m;
    }

    /* Piecewise-linear g on ascending nodes; x_bar defaults to the left edge,
     * which also plays the role of the zero-size boundary. */
    static GrowthModel table(std::vector<double> xs, std::vector<double> gs,
                             double x_bar = std::numeric_limits<double>::quiet_NaN()) {
        if (xs.size() != gs.size() || xs.size() < 2)
            throw OutOfRange("growth table needs >= 2 matching nodes");
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (i && xs[i] <= xs[i - 1]) throw OutOfRange("growth table x must be ascending");
            require_pos(gs[i], "tabulated g");
        }
        GrowthModel m;
        m.kind = Kind::table;
        m.tab_ = std::make_shared<Table>();
        m.tab_->x = std::move(xs);
        m.tab_->g = std::move(gs);
        m.x_bar = std::isnan(x_bar) ? m.tab_->x.front() : x_bar;
        if (m.x_bar < m.tab_->x.front() || m.x_bar > m.tab_->x.back())
            throw OutOfRange("x_bar outside growth table");
        m.tab_->build(m.x_bar);
        m.floor_size = m.tab_->x.front();
        m.convention = {true, m.tab_->q.front()};
        return m;
    }

    double g_of(double x) const {
        switch (kind) {
            case Kind::constant: return k;
            case Kind::linear:
                if (x < 0) throw NonPositiveSize("size must be >= 0");
                return k * x;
            case Kind::table: return tab_->g_at(check_range(x));
        }
        return k;
    }

    double q_of(double x) const {
        switch (kind) {
            case Kind::constant:
                if (x < 0) throw NonPositiveSize("size must be >= 0");
                return (x - x_bar) / k;
            case Kind::linear:
                if (x < 0) throw NonPositiveSize("size must be >= 0");
                if (x == 0) return -std::numeric_limits<double>::infinity();
                return std::log(x / x_bar) / k;
            case Kind::table: return tab_->q_at(check_range(x));
        }
        return 0;
    }

    double q_inv(double t) const {
        switch (kind) {
            case Kind::constant: {
                if (t < convention.q_at_zero)
                    throw OutOfRange("flow time below Q(0)");
                return x_bar + k * t;
            }
            case Kind::linear: return x_bar * std::exp(k * t);
            case Kind::table: return tab_->q_inv(t);
        }
        return 0;
    }

  private:
    struct Table {
        std::vector<double> x, g, q;

        void build(double x_bar) {
            q.assign(x.size(), 0.0);
            for (std::size_t i = 1; i < x.size(); ++i)
                q[i] = q[i - 1] + seg_q(i - 1, x[i]);
            /* renormalize so Q(x_bar) = 0 */
            const double q0 = q_at(x_bar);
            for (auto& v : q) v -= q0;
        }

        std::size_t seg_of_x(double xx) const {
            auto it = std::upper_bound(x.begin(), x.end(), xx);
            std::size_t i = std::size_t(it - x.begin());
            if (i > 0) --i;
            return std::min(i, x.size() - 2);
        }

        double g_at(double xx) const {
            const std::size_t i = seg_of_x(xx);
            const double w = (xx - x[i]) / (x[i + 1] - x[i]);
            return g[i] + w * (g[i + 1] - g[i]);
        }

        /* int_{x_i}^{xx} dr/g with g linear on the segment */
        double seg_q(std::size_t i, double xx) const {
            const double b = (g[i + 1] - g[i]) / (x[i + 1] - x[i]);
            const double d = xx - x[i];
            if (b == 0.0) return d / g[i];
            return std::log1p(b * d / g[i]) / b;
        }

        double q_at(double xx) const {
            const std::size_t i = seg_of_x(xx);
            return q[i] + seg_q(i, xx);
        }

        double q_inv(double t) const {
            if (t < q.front() || t > q.back())
                throw OutOfRange("flow time outside growth table");
            auto it = std::upper_bound(q.begin(), q.end(), t);
            std::size_t i = std::size_t(it - q.begin());
            if (i > 0) --i;
            i = std::min(i, q.size() - 2);
            const double b = (g[i + 1] - g[i]) / (x[i + 1] - x[i]);
            const double dt = t - q[i];
            if (b == 0.0) return x[i] + g[i] * dt;
            return x[i] + g[i] * std::expm1(b * dt) / b;
        }
    };

    std::shared_ptr<Table> tab_;

    double check_range(double xx) const {
        if (xx < tab_->x.front() || xx > tab_->x.back())
            throw OutOfRange("size outside growth table");
        return xx;
    }

    static void require_pos(double v, const char* what) {
        if (!(v > 0))
            throw NonPositiveSize(std::string(what) + " must be > 0");
    }
};

inline double q(const GrowthModel& m, double x) { return m.q_of(x); }

inline double q_inverse(const GrowthModel& m, double t) { return m.q_inv(t); }

/* pi_t x0; backward flows that hit the zero boundary clamp to it. */
inline double flow(const GrowthModel& m, double x0, double t) {
    if (x0 < 0) throw NonPositiveSize("size must be >= 0");
    if (!m.convention.finite) {
        if (x0 == 0) return 0.0;  /* fixed point */
        return m.q_inv(m.q_of(x0) + t);
    }
    const double target = (x0 <= m.floor_size ? m.convention.q_at_zero : m.q_of(x0)) + t;
    if (target <= m.convention.q_at_zero) return m.floor_size;
    return m.q_inv(target);
}

/* lambda(x) = max{pi_{-T_B}(2x), 0}: birth size of a cell dividing at size 2x. */
inline double lambda_cut(const GrowthModel& m, double t_b, double x) {
    if (x < 0) throw NonPositiveSize("size must be >= 0");
    if (t_b < 0) throw NegativeAge("T_B must be >= 0");
    if (x == 0) return m.floor_size;
    return flow(m, 2.0 * x, -t_b);
}

/* lambda'(x) = 2 g(lambda(x)) / g(2x) on {lambda > 0}, else 0. */
inline double lambda_derivative(const GrowthModel& m, double t_b, double x) {
    const double l = lambda_cut(m, t_b, x);
    if (l <= m.floor_size) return 0.0;
    return 2.0 * m.g_of(l) / m.g_of(2.0 * x);
}

}  // namespace cyclelab
