#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "cyclelab/steady_state.hpp"
#include "cyclelab/transport.hpp"

using namespace cyclelab;
using Catch::Approx;

namespace {

std::shared_ptr<const CharGrid> box_grid(double a_max = 2.0, double s_hi = 4.0,
                                         double h_req = 1.0 / 64) {
    return std::make_shared<const CharGrid>(GrowthModel::constant(1.0), 0.25, h_req, a_max,
                                            0.0, s_hi);
}

double min_value(const StateDensity& f) {
    double m = 0.0;
    for (double v : f.f1) m = std::min(m, v);
    for (double v : f.f2) m = std::min(m, v);
    return m;
}

}  // namespace

TEST_CASE("zero density steps to zero with an empty ledger", "[transport]") {
    auto g = box_grid();
    ModelOperators ops(g, DurationModel::exponential(1.0), Tracking::single_line);
    auto [out, led] = step(ops, StateDensity::zero(g));
    CHECK(l1_norm(out) == 0.0);
    CHECK(led.truncated == 0.0);
    CHECK(led.captured == 0.0);
    CHECK(led.divided == 0.0);
}

TEST_CASE("pure advection shifts cells exactly", "[transport]") {
    auto g = box_grid();
    /* no exits inside the window: survival is one at every grid age */
    ModelOperators ops(g, DurationModel::uniform(50.0, 60.0), Tracking::single_line);

    auto f = StateDensity::zero(g);
    f.at1(5, 100) = 1.0;
    f.at2(3, 50) = 1.0;

    auto [out, led] = step(ops, f);
    CHECK(out.at1(6, 101) == 1.0);
    CHECK(out.at2(4, 51) == 1.0);
    CHECK(out.at2(0, 101) == 0.0);
    CHECK(led.truncated == 0.0);
    CHECK(led.captured == 0.0);
    CHECK(l1_norm(out) == Approx(l1_norm(f)).epsilon(1e-14));

    auto ev = evolve(ops, f, 3.0 * g->h);
    CHECK(ev.density.at1(8, 103) == 1.0);
    CHECK(ev.density.at2(6, 53) == 1.0);
    CHECK(ev.mass_trace.size() == 4);
    for (double m : ev.mass_trace) CHECK(m == Approx(l1_norm(f)).epsilon(1e-14));
}

TEST_CASE("survival decay routes the exact decrement into the clock phase", "[transport]") {
    auto g = box_grid();
    const double h = g->h;
    ModelOperators ops(g, DurationModel::exponential(1.0), Tracking::single_line);

    auto f = StateDensity::zero(g);
    f.at1(5, 100) = 1.0;
    auto [out, led] = step(ops, f);
    CHECK(out.at1(6, 101) == Approx(std::exp(-h)).epsilon(1e-13));
    CHECK(out.at2(0, 101) == Approx(1.0 - std::exp(-h)).epsilon(1e-12));
    CHECK(l1_norm(out) == Approx(h * h).epsilon(1e-13));
    CHECK(led.captured == Approx((1.0 - std::exp(-h)) * h * h).epsilon(1e-13));
    CHECK(led.truncated == 0.0);

    /* top of the age window: everything transitions */
    auto ftop = StateDensity::zero(g);
    ftop.at1(g->na - 1, 200) = 1.0;
    auto [out2, led2] = step(ops, ftop);
    CHECK(out2.at2(0, 201) == 1.0);
    double p1 = 0.0;
    for (double v : out2.f1) p1 += v;
    CHECK(p1 == 0.0);
    CHECK(led2.captured == Approx(h * h).epsilon(1e-14));

    /* top of the size window: the advancing cell leaves the domain */
    auto fedge = StateDensity::zero(g);
    fedge.at1(5, g->ns - 1) = 1.0;
    auto [out3, led3] = step(ops, fedge);
    CHECK(l1_norm(out3) == 0.0);
    CHECK(led3.truncated == Approx(h * h).epsilon(1e-14));
}

TEST_CASE("the dividing slice is halved into the birth row", "[transport]") {
    auto g = box_grid();
    const double h = g->h;

    for (Tracking trk : {Tracking::single_line, Tracking::bell}) {
        ModelOperators ops(g, DurationModel::exponential(1.0), trk);
        const double fac = (trk == Tracking::bell) ? 2.0 : 1.0;

        auto f = StateDensity::zero(g);
        f.at2(g->nb - 1, 200) = 1.0;
        f.at2(3, 60) = 1.0;
        auto [out, led] = step(ops, f);

        CHECK(out.at1(0, 100) == Approx(0.5 * fac).epsilon(1e-13));
        CHECK(out.at1(0, 101) == Approx(0.5 * fac).epsilon(1e-13));
        CHECK(out.at1(0, 99) == 0.0);
        CHECK(out.at1(0, 102) == 0.0);
        CHECK(out.at2(4, 61) == 1.0);
        CHECK(led.divided == Approx(fac * h * h).epsilon(1e-13));
        CHECK(led.truncated == 0.0);
        if (trk == Tracking::single_line)
            CHECK(l1_norm(out) == Approx(2.0 * h * h).epsilon(1e-13));
        else
            CHECK(l1_norm(out) == Approx(3.0 * h * h).epsilon(1e-13));
    }
}

TEST_CASE("single-line stepping conserves mass against the ledger", "[transport]") {
    auto g = box_grid(2.0, 4.0, 1.0 / 32);
    ModelOperators ops(g, DurationModel::exponential(1.0), Tracking::single_line);

    auto f = StateDensity::from_coordinate(
        g,
        [](double a, double s) { return 1.0 + 0.5 * std::sin(13.0 * a + 7.0 * s); },
        [](double a, double s) { return 1.0 + 0.5 * std::cos(9.0 * a + 5.0 * s); });

    const double m0 = l1_norm(f);
    long double cum = 0.0L;
    for (int k = 0; k < 40; ++k) {
        const double before = l1_norm(f);
        auto [next, led] = step(ops, f);
        const double after = l1_norm(next);
        CHECK(std::abs(after + led.truncated - before) <= 1e-12 * std::max(1.0, before));
        CHECK(min_value(next) >= 0.0);
        cum += led.truncated;
        f = std::move(next);
    }
    CHECK(std::abs(l1_norm(f) + static_cast<double>(cum) - m0) <= 1e-11 * m0);
}

TEST_CASE("evolution satisfies the semigroup law bitwise", "[transport]") {
    auto g = box_grid();
    ModelOperators ops(g, DurationModel::exponential(1.0), Tracking::single_line);
    auto f = StateDensity::from_coordinate(
        g,
        [](double a, double s) {
            return std::exp(-2.0 * (a - 0.4) * (a - 0.4) - 2.0 * (s - 2.0) * (s - 2.0));
        },
        [](double a, double s) {
            return std::exp(-3.0 * (a - 0.1) * (a - 0.1) - 2.0 * (s - 1.8) * (s - 1.8));
        });

    auto whole = evolve(ops, f, 10.0 * g->h);
    auto part = evolve(ops, f, 4.0 * g->h);
    auto rest = evolve(ops, part.density, 6.0 * g->h);
    CHECK(whole.density.f1 == rest.density.f1);
    CHECK(whole.density.f2 == rest.density.f2);
    CHECK(whole.mass_trace.size() == 11);

    auto still = evolve(ops, f, 0.0);
    CHECK(still.density.f1 == f.f1);
    CHECK(still.density.f2 == f.f2);
    CHECK(still.mass_trace.size() == 1);

    CHECK_THROWS_AS(evolve(ops, f, 2.5 * g->h), PreconditionViolated);
}

TEST_CASE("entry row tracks the division flux while evolving", "[transport]") {
    auto g = std::make_shared<const CharGrid>(GrowthModel::constant(1.0), 0.25, 1.0 / 64,
                                              2.5, 0.0, 6.0);
    ModelOperators ops(g, DurationModel::exponential(1.0), Tracking::single_line);
    auto f = StateDensity::from_coordinate(
        g,
        [](double a, double s) {
            return std::exp(-2.0 * (a - 0.5) * (a - 0.5) - 1.5 * (s - 2.5) * (s - 2.5));
        },
        [](double a, double s) {
            return std::exp(-8.0 * (a - 0.1) * (a - 0.1) - 1.5 * (s - 2.3) * (s - 2.3));
        });
    auto u = evolve(ops, f, 30.0 * g->h).density;

    auto b0 = apply_psi0(ops, u);
    auto bq = apply_psi(ops, u);
    BoundaryPair d = b0;
    axpy(d, bq, -1.0);
    long double e1 = 0.0L, n1 = 0.0L, e2 = 0.0L, n2 = 0.0L;
    for (std::size_t j = 0; j < g->ns; ++j) {
        e1 += std::abs(b0.b1[j] - bq.b1[j]);
        n1 += std::abs(bq.b1[j]);
        e2 += std::abs(b0.b2[j] - bq.b2[j]);
        n2 += std::abs(bq.b2[j]);
    }
    CHECK(static_cast<double>(e1 / n1) < 0.25);
    CHECK(static_cast<double>(e2 / n2) < 0.25);
}

TEST_CASE("the stationary profile is fixed by the flow", "[transport]") {
    auto g = std::make_shared<const CharGrid>(GrowthModel::constant(1.0), 0.2, 1.0 / 64,
                                              8.0, 0.0, 12.0);
    REQUIRE(g->nb == 13);
    ModelOperators ops(g, DurationModel::exponential(2.0), Tracking::single_line);

    std::vector<double> f0(g->ns);
    for (std::size_t j = 0; j < g->ns; ++j) {
        const double u = (g->s_center(j) - 2.0) / 0.5;
        f0[j] = std::exp(-u * u);
    }
    auto res = find_fixed_point(ops, f0, 1e-10, 500);
    auto fs = build_steady_density(ops, res.density, 1e-7);
    const double m = l1_norm(fs);
    for (double& v : fs.f1) v /= m;
    for (double& v : fs.f2) v /= m;

    auto ev = evolve(ops, fs, 1.0);
    StateDensity diff = ev.density;
    axpy(diff, fs, -1.0);
    CHECK(l1_norm(diff) < 0.025);

    for (std::size_t k = 0; k < ev.mass_trace.size(); ++k)
        CHECK(std::abs(ev.mass_trace[k] + ev.trunc_trace[k] - 1.0) <= 1e-10);
}

TEST_CASE("population growth rate is variant-gated and grid-stable", "[transport]") {
    auto mk = [](double h_req) {
        return std::make_shared<const CharGrid>(GrowthModel::constant(1.0), 1.0, h_req,
                                                6.0, 0.0, 16.0);
    };
    auto f_of = [](const std::shared_ptr<const CharGrid>& g) {
        return StateDensity::from_coordinate(
            g,
            [](double a, double s) {
                return std::exp(-2.0 * (a - 0.5) * (a - 0.5) - (s - 3.0) * (s - 3.0));
            },
            [](double, double) { return 0.0; });
    };

    auto g1 = mk(1.0 / 16);
    ModelOperators sl(g1, DurationModel::exponential(1.0), Tracking::single_line);
    CHECK_THROWS_AS(bell_growth_rate(sl, f_of(g1), 4.0), PreconditionViolated);

    ModelOperators b1(g1, DurationModel::exponential(1.0), Tracking::bell);
    const double r1 = bell_growth_rate(b1, f_of(g1), 12.0);
    auto g2 = mk(1.0 / 32);
    ModelOperators b2(g2, DurationModel::exponential(1.0), Tracking::bell);
    const double r2 = bell_growth_rate(b2, f_of(g2), 12.0);

    CHECK(r1 > 0.0);
    CHECK(r2 > 0.0);
    CHECK(r2 == Approx(0.3745).margin(0.08));
    CHECK(std::abs(r1 - r2) <= 0.02 * r2);
}
