#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "errors.hpp"
#include "rng.hpp"

namespace cyclelab {

/* survival values at or below this are treated as exhausted */
constexpr double kHazardFloor = 1e-12;

struct MeanDuration {
    double value = 0.0;
    bool finite = true;
};

/*
 * Law of the phase-A duration T_A: density psi on [0,inf), survival
 * Hbar(a) = int_a^inf psi, hazard rho = psi/Hbar.  Families with closed-form
 * quantiles sample directly; gamma/lognormal/tabulated sample through a
 * 1024-knot inverse-CDF table with knots exact at Chebyshev-spaced
 * probability levels (dense near both tails).
 */
class DurationModel {
  public:
    enum class Kind { exponential, gamma_f, lognormal, uniform, tabulated };

    Kind kind = Kind::exponential;
    double p = 1.0;                  /* exponential rate */
    double shape = 1.0, rate = 1.0;  /* gamma */
    double mu = 0.0, sigma = 1.0;    /* lognormal */
    double a_lo = 0.0, a_hi = 1.0;   /* uniform */

    static DurationModel exponential(double p) {
        if (!(p > 0)) throw OutOfRange("exponential rate must be > 0");
        DurationModel d;
        d.kind = Kind::exponential;
        d.p = p;
        return d;
    }

    static DurationModel gamma(double shape, double rate) {
        if (!(shape > 0) || !(rate > 0)) throw OutOfRange("gamma parameters must be > 0");
        DurationModel d;
        d.kind = Kind::gamma_f;
        d.shape = shape;
        d.rate = rate;
        d.build_quantile_table();
        return d;
    }

    static DurationModel lognormal(double mu, double sigma) {
        if (!(sigma > 0)) throw OutOfRange("lognormal sigma must be > 0");
        DurationModel d;
        d.kind = Kind::lognormal;
        d.mu = mu;
        d.sigma = sigma;
        d.build_quantile_table();
        return d;
    }

    static DurationModel uniform(double lo, double hi) {
        if (lo < 0) throw NegativeAge("uniform support must be >= 0");
        if (!(lo < hi)) throw OutOfRange("uniform needs a_lo < a_hi (atoms unsupported)");
        DurationModel d;
        d.kind = Kind::uniform;
        d.a_lo = lo;
        d.a_hi = hi;
        return d;
    }

    static DurationModel tabulated(std::vector<double> as, std::vector<double> psis) {
        if (as.size() != psis.size() || as.size() < 2)
            throw OutOfRange("duration table needs >= 2 matching nodes");
        if (as.front() < 0) throw NegativeAge("duration table must start at age >= 0");
        for (std::size_t i = 0; i < as.size(); ++i) {
            if (i && as[i] <= as[i - 1]) throw OutOfRange("duration table ages must ascend");
            if (psis[i] < 0) throw OutOfRange("psi must be >= 0");
        }
        double total = 0;
        for (std::size_t i = 0; i + 1 < as.size(); ++i)
            total += 0.5 * (psis[i] + psis[i + 1]) * (as[i + 1] - as[i]);
        if (std::abs(total - 1.0) > 1e-8)
            throw OutOfRange("tabulated psi must integrate to 1 (within 1e-8)");
        DurationModel d;
        d.kind = Kind::tabulated;
        d.tab_ = std::make_shared<Tab>();
        d.tab_->a = std::move(as);
        d.tab_->psi = std::move(psis);
        for (auto& v : d.tab_->psi) v /= total;
        d.tab_->build_tail();
        d.build_quantile_table();
        return d;
    }

    double psi_at(double a) const {
        if (a < 0) throw NegativeAge("age must be >= 0");
        switch (kind) {
            case Kind::exponential: return p * std::exp(-p * a);
            case Kind::gamma_f:
                if (a == 0) return shape > 1 ? 0.0 : (shape == 1 ? rate : inf());
                return std::exp(shape * std::log(rate) + (shape - 1) * std::log(a) -
                                rate * a - std::lgamma(shape));
            case Kind::lognormal: {
                if (a <= 0) return 0.0;
                const double z = (std::log(a) - mu) / sigma;
                return std::exp(-0.5 * z * z) / (a * sigma * std::sqrt(2.0 * M_PI));
            }
            case Kind::uniform:
                return (a >= a_lo && a < a_hi) ? 1.0 / (a_hi - a_lo) : 0.0;
            case Kind::tabulated: return tab_->psi_at(a);
        }
        return 0;
    }

    double survival_at(double a) const {
        if (a < 0) throw NegativeAge("age must be >= 0");
        switch (kind) {
            case Kind::exponential: return std::exp(-p * a);
            case Kind::gamma_f:
                if (a == 0) return 1.0;
                return boost::math::gamma_q(shape, rate * a);
            case Kind::lognormal: {
                if (a <= 0) return 1.0;
                const double z = (std::log(a) - mu) / (sigma * std::sqrt(2.0));
                return 0.5 * std::erfc(z);
            }
            case Kind::uniform:
                if (a <= a_lo) return 1.0;
                if (a >= a_hi) return 0.0;
                return (a_hi - a) / (a_hi - a_lo);
            case Kind::tabulated: return tab_->survival_at(a);
        }
        return 0;
    }

    /* smallest age with Hbar <= eps */
    double support_upper(double eps) const {
        switch (kind) {
            case Kind::exponential: return -std::log(eps) / p;
            case Kind::gamma_f: return boost::math::gamma_q_inv(shape, eps) / rate;
            case Kind::lognormal:
                return std::exp(mu + sigma * std::sqrt(2.0) *
                                         boost::math::erfc_inv(2.0 * eps));
            case Kind::uniform: return a_hi;
            case Kind::tabulated: return tab_->a.back();
        }
        return 0;
    }

    /* quantile of T_A at probability u in [0,1] */
    double quantile(double u) const {
        u = std::min(1.0, std::max(0.0, u));
        switch (kind) {
            case Kind::exponential: return u >= 1.0 ? support_upper(1e-300)
                                                    : -std::log1p(-u) / p;
            case Kind::uniform: return a_lo + u * (a_hi - a_lo);
            default: break;
        }
        /* table families: linear interp between exact knot quantiles */
        const auto& F = qt_->u;
        const auto& A = qt_->a;
        auto it = std::upper_bound(F.begin(), F.end(), u);
        std::size_t i = std::size_t(it - F.begin());
        if (i > 0) --i;
        i = std::min(i, F.size() - 2);
        const double du = F[i + 1] - F[i];
        const double w = du > 0 ? (u - F[i]) / du : 0.0;
        return A[i] + w * (A[i + 1] - A[i]);
    }

    struct Tab {
        std::vector<double> a, psi, hn;  /* hn: Hbar at nodes */

        void build_tail() {
            hn.assign(a.size(), 0.0);
            for (std::size_t i = a.size() - 1; i-- > 0;)
                hn[i] = hn[i + 1] + 0.5 * (psi[i] + psi[i + 1]) * (a[i + 1] - a[i]);
        }

        std::size_t seg(double x) const {
            auto it = std::upper_bound(a.begin(), a.end(), x);
            std::size_t i = std::size_t(it - a.begin());
            if (i > 0) --i;
            return std::min(i, a.size() - 2);
        }

        double psi_at(double x) const {
            if (x <= a.front() || x >= a.back()) {
                if (x == a.front()) return psi.front();
                return 0.0;
            }
            const std::size_t i = seg(x);
            const double w = (x - a[i]) / (a[i + 1] - a[i]);
            return psi[i] + w * (psi[i + 1] - psi[i]);
        }

        double survival_at(double x) const {
            if (x <= a.front()) return 1.0;
            if (x >= a.back()) return 0.0;
            const std::size_t i = seg(x);
            const double px = psi_at(x);
            return hn[i + 1] + 0.5 * (px + psi[i + 1]) * (a[i + 1] - x);
        }

        /* invert 1 - Hbar inside a segment (quadratic in the offset) */
        double quantile_exact(double u) const {
            if (u <= 0) return a.front();
            if (u >= 1.0 - hn.back()) return a.back();
            /* find node with F(a_i) <= u:  F = 1 - hn */
            std::size_t lo = 0, hi = a.size() - 1;
            while (lo + 1 < hi) {
                const std::size_t m = (lo + hi) / 2;
                if (1.0 - hn[m] <= u) lo = m;
                else hi = m;
            }
            const double need = u - (1.0 - hn[lo]);
            const double d = a[lo + 1] - a[lo];
            const double s = (psi[lo + 1] - psi[lo]) / d;
            double t;
            if (std::abs(s) * d < 1e-14 * std::max(psi[lo], 1e-300)) {
                t = psi[lo] > 0 ? need / psi[lo] : 0.0;
            } else {
                const double disc = psi[lo] * psi[lo] + 2.0 * s * need;
                t = (-psi[lo] + std::sqrt(std::max(0.0, disc))) / s;
            }
            return a[lo] + std::min(std::max(t, 0.0), d);
        }
    };

    const Tab& tab() const { return *tab_; }

  private:
    struct QuantTable {
        std::vector<double> u, a;
    };
    std::shared_ptr<Tab> tab_;
    std::shared_ptr<QuantTable> qt_;

    static double inf() { return std::numeric_limits<double>::infinity(); }

    double quantile_exact_family(double u) const {
        switch (kind) {
            case Kind::gamma_f: return boost::math::gamma_p_inv(shape, u) / rate;
            case Kind::lognormal:
                return std::exp(mu + sigma * std::sqrt(2.0) *
                                         boost::math::erf_inv(2.0 * u - 1.0));
            case Kind::tabulated: return tab_->quantile_exact(u);
            default: return 0;
        }
    }

    void build_quantile_table() {
        const int n = 1024;
        qt_ = std::make_shared<QuantTable>();
        qt_->u.resize(n + 1);
        qt_->a.resize(n + 1);
        for (int j = 0; j <= n; ++j) {
            /* Chebyshev levels: dense near u = 0 and u = 1 */
            const double u = 0.5 * (1.0 - std::cos(M_PI * double(j) / n));
            qt_->u[j] = u;
            if (j == 0) qt_->a[j] = (kind == Kind::tabulated) ? tab_->a.front() : 0.0;
            else if (j == n) qt_->a[j] = support_upper(1e-13);
            else qt_->a[j] = quantile_exact_family(u);
        }
        /* enforce monotonicity against roundoff */
        for (int j = 1; j <= n; ++j)
            qt_->a[j] = std::max(qt_->a[j], qt_->a[j - 1]);
    }
};

inline double psi(const DurationModel& d, double a) { return d.psi_at(a); }

inline double survival(const DurationModel& d, double a) { return d.survival_at(a); }

inline double hazard_rate(const DurationModel& d, double a) {
    const double h = d.survival_at(a);
    if (h <= kHazardFloor) throw SurvivalExhausted("survival at or below floor");
    return d.psi_at(a) / h;
}

inline double duration_support_upper(const DurationModel& d, double eps = kHazardFloor) {
    return d.support_upper(eps);
}

/* int_{a1}^{a2} psi(a) e^{-lambda a} da, exact where the family allows */
inline double laplace_weight(const DurationModel& d, double lambda, double a1, double a2) {
    if (lambda < 0) throw OutOfRange("lambda must be >= 0");
    if (a2 <= a1) return 0.0;
    using K = DurationModel::Kind;
    switch (d.kind) {
        case K::exponential: {
            const double r = d.p + lambda;
            return d.p / r * (std::exp(-r * a1) - std::exp(-r * a2));
        }
        case K::gamma_f: {
            const double r = d.rate + lambda;
            const double scale = std::pow(d.rate / r, d.shape);
            return scale * (boost::math::gamma_p(d.shape, r * a2) -
                            boost::math::gamma_p(d.shape, r * a1));
        }
        case K::uniform: {
            const double lo = std::max(a1, d.a_lo), hi = std::min(a2, d.a_hi);
            if (hi <= lo) return 0.0;
            const double den = d.a_hi - d.a_lo;
            if (lambda == 0) return (hi - lo) / den;
            return std::exp(-lambda * lo) * (-std::expm1(-lambda * (hi - lo))) /
                   (lambda * den);
        }
        case K::lognormal: {
            /* 4-point Gauss-Legendre; psi e^{-la} is smooth on the cell */
            static const double xg[2] = {0.3399810435848563, 0.8611363115940526};
            static const double wg[2] = {0.6521451548625461, 0.3478548451374538};
            const double c = 0.5 * (a1 + a2), hw = 0.5 * (a2 - a1);
            double acc = 0;
            for (int i = 0; i < 2; ++i) {
                const double am = c - hw * xg[i], ap = c + hw * xg[i];
                acc += wg[i] * (d.psi_at(am) * std::exp(-lambda * am) +
                                d.psi_at(ap) * std::exp(-lambda * ap));
            }
            return acc * hw;
        }
        case K::tabulated: {
            const auto& t = d.tab();
            double acc = 0;
            for (std::size_t i = 0; i + 1 < t.a.size(); ++i) {
                const double lo = std::max(a1, t.a[i]), hi = std::min(a2, t.a[i + 1]);
                if (hi <= lo) continue;
                const double dseg = hi - lo;
                const double p0 = t.psi_at(lo);
                const double slope = (t.psi[i + 1] - t.psi[i]) / (t.a[i + 1] - t.a[i]);
                double i0, i1;
                const double ld = lambda * dseg;
                if (ld < 1e-6) {
                    i0 = dseg * (1.0 - ld / 2.0 + ld * ld / 6.0);
                    i1 = dseg * dseg * (0.5 - ld / 3.0 + ld * ld / 8.0);
                } else {
                    i0 = -std::expm1(-ld) / lambda;
                    i1 = (1.0 - (1.0 + ld) * std::exp(-ld)) / (lambda * lambda);
                }
                acc += std::exp(-lambda * lo) * (p0 * i0 + slope * i1);
            }
            return acc;
        }
    }
    return 0;
}

inline double laplace_psi(const DurationModel& d, double lambda) {
    if (lambda < 0) throw OutOfRange("lambda must be >= 0");
    using K = DurationModel::Kind;
    switch (d.kind) {
        case K::exponential: return d.p / (d.p + lambda);
        case K::gamma_f: return std::pow(d.rate / (d.rate + lambda), d.shape);
        case K::uniform: return laplace_weight(d, lambda, d.a_lo, d.a_hi);
        case K::lognormal: {
            /* composite over a graded internal grid; self-consistent with
             * laplace_weight so cell sums never exceed the transform */
            const double top = d.support_upper(1e-15);
            const int n = 4000;
            double acc = 0;
            for (int i = 0; i < n; ++i)
                acc += laplace_weight(d, lambda, top * i / double(n),
                                      top * (i + 1) / double(n));
            return acc;
        }
        case K::tabulated: return laplace_weight(d, lambda, 0.0, d.tab().a.back());
    }
    return 0;
}

inline MeanDuration mean_duration(const DurationModel& d) {
    using K = DurationModel::Kind;
    switch (d.kind) {
        case K::exponential: return {1.0 / d.p, true};
        case K::gamma_f: return {d.shape / d.rate, true};
        case K::lognormal: return {std::exp(d.mu + 0.5 * d.sigma * d.sigma), true};
        case K::uniform: return {0.5 * (d.a_lo + d.a_hi), true};
        case K::tabulated: {
            const auto& t = d.tab();
            double val = 0;
            for (std::size_t i = 0; i + 1 < t.a.size(); ++i) {
                const double dd = t.a[i + 1] - t.a[i];
                val += t.hn[i + 1] * dd + dd * dd * (t.psi[i] + 2.0 * t.psi[i + 1]) / 6.0;
            }
            /* divergence-trend flag: tail-index estimate.  Hbar ~ a^{-alpha}
             * with alpha <= 1 means int Hbar diverges; measure the log-log
             * slope between the Hbar = 0.1 and Hbar = 0.01 crossing points,
             * which sit inside the table and away from the truncation edge. */
            auto crossing = [&](double level) {
                double lo = t.a.front(), hi = t.a.back();
                if (d.survival_at(hi) >= level) return hi;
                for (int it = 0; it < 200; ++it) {
                    const double m = 0.5 * (lo + hi);
                    (d.survival_at(m) > level ? lo : hi) = m;
                }
                return 0.5 * (lo + hi);
            };
            const double a1 = crossing(0.1), a2 = crossing(0.01);
            bool diverging = false;
            if (a2 > a1 && a1 > 0) {
                const double slope = -std::log(10.0) / (std::log(a2) - std::log(a1));
                diverging = slope >= -1.1;
            }
            return {val, !diverging};
        }
    }
    return {0, true};
}

/* one uniform draw per sample */
inline double sample_duration(const DurationModel& d, SplitStream& stream) {
    using K = DurationModel::Kind;
    switch (d.kind) {
        case K::exponential: return -std::log(stream.uniform_open01()) / d.p;
        default: return d.quantile(stream.uniform01());
    }
}

/* remaining duration given survival to `age` */
inline double sample_remaining(const DurationModel& d, double age, SplitStream& stream) {
    if (age < 0) throw NegativeAge("age must be >= 0");
    if (d.kind == DurationModel::Kind::exponential)
        return sample_duration(d, stream);  /* memoryless */
    const double hb = d.survival_at(age);
    if (hb <= kHazardFloor) return 0.0;  /* forced transition */
    const double u = stream.uniform01();
    const double target = (1.0 - hb) + u * hb;
    return std::max(d.quantile(target) - age, 0.0);
}

/* density of the generation time T_A + T_B */
inline double generation_time_density(const DurationModel& d, double t_b, double t) {
    if (t_b < 0) throw NegativeAge("T_B must be >= 0");
    if (t < t_b) return 0.0;
    return d.psi_at(t - t_b);
}

inline double generation_time_cdf(const DurationModel& d, double t_b, double t) {
    if (t < t_b) return 0.0;
    return 1.0 - d.survival_at(t - t_b);
}

}  // namespace cyclelab
