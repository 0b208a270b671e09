#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "cyclelab/boundary_ops.hpp"
#include "cyclelab/rng.hpp"
#include "oracles.hpp"

using namespace cyclelab;
using Catch::Approx;

namespace {

constexpr double kH = 1.0 / 64;

std::shared_ptr<const CharGrid> grid_const(double s_lo, double s_hi, double a_max,
                                           double h = kH, double k = 1.0) {
    return std::make_shared<const CharGrid>(GrowthModel::constant(k), 0.25, h, a_max, s_lo, s_hi);
}

ModelOperators ops_exp(std::shared_ptr<const CharGrid> g, Tracking tr = Tracking::single_line) {
    return ModelOperators(std::move(g), DurationModel::exponential(1.0), tr);
}

/* exact cell mass of exp(1) * e^{-lambda a} over [i h, (i+1) h) */
double expw(double lambda, double h, std::size_t i) {
    const double r = 1.0 + lambda;
    return (std::exp(-r * static_cast<double>(i) * h) - std::exp(-r * static_cast<double>(i + 1) * h)) / r;
}

}  // namespace

TEST_CASE("edge data lifts along characteristics with survival", "[boundary_ops]") {
    auto g = grid_const(0.0, 4.0, 2.0);
    REQUIRE(g->ns == 256);
    REQUIRE(g->na == 128);
    REQUIRE(g->nb == 16);
    auto ops = ops_exp(g);
    const double lam = 0.7;

    BoundaryPair b;
    b.b1.assign(g->ns, 0.0);
    b.b2.assign(g->ns, 0.0);
    b.b1[128] = 1.0;
    auto f = apply_psi_lambda(ops, b, lam);

    /* deposit straddles the two cells adjacent to the source edge node */
    const double a3 = g->a_center(3);
    CHECK(f.at1(3, 131) == Approx(0.5 * std::exp(-(lam + 1.0) * a3)).epsilon(1e-13));
    CHECK(f.at1(3, 132) == Approx(0.5 * std::exp(-(lam + 1.0) * a3)).epsilon(1e-13));
    const double a5 = g->a_center(5);
    CHECK(f.at1(5, 134) == Approx(0.5 * std::exp(-(lam + 1.0) * a5)).epsilon(1e-13));
    CHECK(f.at1(2, 128) == 0.0);
    CHECK(l1_norm(BoundaryPair{}, g->h) == 0.0);

    long double want = 0.0L;
    for (std::size_t i = 0; i < g->na; ++i) {
        const double cover = (129 + i < g->ns) ? 1.0 : 0.5;
        want += cover * std::exp(-(lam + 1.0) * g->a_center(i));
    }
    want *= g->h * g->h;
    CHECK(l1_norm(f) == Approx(static_cast<double>(want)).epsilon(1e-12));

    /* second component: pure exponential decay, no survival factor */
    BoundaryPair c;
    c.b1.assign(g->ns, 0.0);
    c.b2.assign(g->ns, 0.0);
    c.b2[100] = 1.0;
    auto f2 = apply_psi_lambda(ops, c, lam);
    CHECK(f2.at2(4, 104) == Approx(0.5 * std::exp(-lam * g->a_center(4))).epsilon(1e-13));
    long double want2 = 0.0L;
    for (std::size_t i = 0; i < g->nb; ++i) want2 += std::exp(-lam * g->a_center(i));
    want2 *= g->h * g->h;
    CHECK(l1_norm(f2) == Approx(static_cast<double>(want2)).epsilon(1e-12));

    /* top size edge: only the age-0 row is reachable, half the mass leaks */
    BoundaryPair e;
    e.b1.assign(g->ns, 0.0);
    e.b2.assign(g->ns, 0.0);
    e.b1[g->ns - 1] = 1.0;
    auto fe = apply_psi_lambda(ops, e, lam);
    CHECK(fe.at1(0, g->ns - 1) == Approx(0.5 * std::exp(-(lam + 1.0) * g->a_center(0))).epsilon(1e-13));
    CHECK(l1_norm(fe) == Approx(0.5 * std::exp(-(lam + 1.0) * g->a_center(0)) * g->h * g->h).epsilon(1e-12));
}

TEST_CASE("age-zero trace inverts the lift", "[boundary_ops]") {
    auto g = grid_const(0.0, 4.0, 2.0);
    auto ops = ops_exp(g);

    BoundaryPair b;
    b.b1.resize(g->ns);
    b.b2.resize(g->ns);
    for (std::size_t j = 0; j < g->ns; ++j) {
        const double s = g->s_center(j);
        b.b1[j] = std::exp(-4.0 * (s - 2.0) * (s - 2.0));
        b.b2[j] = std::exp(-3.0 * (s - 1.8) * (s - 1.8));
    }

    for (double lam : {0.0, 0.7}) {
        auto f = apply_psi_lambda(ops, b, lam);
        auto tr = apply_psi0(ops, f);
        long double e1 = 0.0L, e2 = 0.0L, n1 = 0.0L, n2 = 0.0L;
        for (std::size_t j = 0; j < g->ns; ++j) {
            e1 += std::abs(tr.b1[j] - b.b1[j]);
            e2 += std::abs(tr.b2[j] - b.b2[j]);
            n1 += std::abs(b.b1[j]);
            n2 += std::abs(b.b2[j]);
        }
        CHECK(static_cast<double>(e1 / n1) < 0.01);
        CHECK(static_cast<double>(e2 / n2) < 0.01);
        CHECK(static_cast<double>(e1 / n1) < 5.0 * g->h);
        CHECK(static_cast<double>(e2 / n2) < 5.0 * g->h);
    }
}

TEST_CASE("handoff functionals match quadrature and halving", "[boundary_ops]") {
    auto g = std::make_shared<const CharGrid>(GrowthModel::constant(1.0), 0.25, kH, 2.0, 0.0, 6.0);
    auto ops = ops_exp(g);

    /* survival-profile block: captured flux must integrate psi against the profile */
    auto blob = [](double u) { return std::exp(-2.0 * (u - 2.5) * (u - 2.5)); };
    auto f = StateDensity::from_coordinate(
        g, [&](double a, double s) { return std::exp(-a) * blob(s - a); },
        [](double, double) { return 0.0; });
    auto bp = apply_psi(ops, f);
    const double amax = g->a_max();
    for (std::size_t j = 96; j < g->ns; j += 32) {
        const double s = g->s_center(j);
        const double want =
            oracle::integrate([&](double a) { return std::exp(-a) * blob(s - a); }, 0.0, amax);
        CHECK(bp.b2[j] == Approx(want).margin(5e-3));
    }

    /* transport-profile block: division flux is the halved, doubled profile */
    auto d = [](double u) { return std::exp(-3.0 * (u - 3.0) * (u - 3.0)); };
    auto f2 = StateDensity::from_coordinate(
        g, [](double, double) { return 0.0; },
        [&](double a, double s) { return d(s - a); });
    for (Tracking trk : {Tracking::single_line, Tracking::bell}) {
        ModelOperators o2(g, DurationModel::exponential(1.0), trk);
        auto out = apply_psi(o2, f2);
        const double fac = (trk == Tracking::bell) ? 2.0 : 1.0;
        double err = 0.0;
        for (std::size_t k = 0; k < g->ns; ++k) {
            const double s = g->s_center(k);
            err = std::max(err, std::abs(out.b1[k] - fac * 2.0 * d(2.0 * s - 0.25)));
        }
        CHECK(err < 0.02);
    }
}

TEST_CASE("feedback composition uses the closed kernel", "[boundary_ops]") {
    auto g = grid_const(0.0, 4.0, 2.0);
    auto ops = ops_exp(g);
    const double lam = 0.5;
    const double h = g->h;

    BoundaryPair b;
    b.b1.assign(g->ns, 0.0);
    b.b2.assign(g->ns, 0.0);
    b.b1[100] = 1.0;
    auto out = apply_psi_psi_lambda(ops, b, lam);
    CHECK(out.b2[99] == 0.0);
    CHECK(out.b2[100] == Approx(0.5 * expw(lam, h, 0)).epsilon(1e-13));
    CHECK(out.b2[101] == Approx(0.5 * (expw(lam, h, 0) + expw(lam, h, 1))).epsilon(1e-13));
    CHECK(out.b2[160] == Approx(0.5 * (expw(lam, h, 59) + expw(lam, h, 60))).epsilon(1e-13));
    for (double v : out.b1) CHECK(v == 0.0);

    /* division leg: shift by the handoff age, then halve */
    BoundaryPair c;
    c.b1.assign(g->ns, 0.0);
    c.b2.assign(g->ns, 0.0);
    c.b2[100] = 1.0;
    auto out2 = apply_psi_psi_lambda(ops, c, lam);
    CHECK(out2.b1[58] == Approx(std::exp(-lam * 0.25)).epsilon(1e-13));
    double total = 0.0;
    for (double v : out2.b1) total += v;
    CHECK(total == Approx(std::exp(-lam * 0.25)).epsilon(1e-13));
    for (double v : out2.b2) CHECK(v == 0.0);

    c.b2[100] = 0.0;
    c.b2[101] = 1.0;
    auto out3 = apply_psi_psi_lambda(ops, c, lam);
    CHECK(out3.b1[58] == Approx(std::exp(-lam * 0.25)).epsilon(1e-13));

    /* contraction against the advertised bound on random data */
    SplitStream rng(99, 7);
    BoundaryPair r;
    r.b1.resize(g->ns);
    r.b2.resize(g->ns);
    for (std::size_t j = 0; j < g->ns; ++j) {
        r.b1[j] = rng.uniform01();
        r.b2[j] = rng.uniform01();
    }
    const double q = norm_bound(ops, lam);
    auto rr = apply_psi_psi_lambda(ops, r, lam);
    CHECK(l1_norm(rr, h) <= q * l1_norm(r, h) * (1.0 + 1e-12));
}

TEST_CASE("norm bound values and the series solve", "[boundary_ops]") {
    auto g = grid_const(0.0, 4.0, 2.0);
    ModelOperators single(g, DurationModel::exponential(1.0), Tracking::single_line);
    ModelOperators bell(g, DurationModel::exponential(1.0), Tracking::bell);

    CHECK(norm_bound(single, 0.5) == Approx(std::exp(-0.125)).epsilon(1e-13));
    CHECK(norm_bound(bell, 4.0) == Approx(2.0 * std::exp(-1.0)).epsilon(1e-13));
    CHECK(norm_bound(bell, 8.0) == Approx(2.0 * std::exp(-2.0)).epsilon(1e-13));
    CHECK(norm_bound(bell, 0.5) >= 1.0);

    BoundaryPair rhs;
    rhs.b1.assign(g->ns, 0.0);
    rhs.b2.assign(g->ns, 0.0);
    rhs.b1[10] = 1.0;
    CHECK_THROWS_AS(solve_boundary(bell, rhs, 0.5, 1e-10, nullptr), PreconditionViolated);

    /* manufactured fixed point: rhs = (I - PsiPsi) u* recovers u* */
    const double lam = 1.2;
    BoundaryPair want;
    want.b1.resize(g->ns);
    want.b2.resize(g->ns);
    for (std::size_t j = 0; j < g->ns; ++j) {
        const double s = g->s_center(j);
        want.b1[j] = std::exp(-2.0 * (s - 2.0) * (s - 2.0));
        want.b2[j] = 0.7 * std::exp(-2.5 * (s - 1.5) * (s - 1.5));
    }
    BoundaryPair mrhs = want;
    auto pp = apply_psi_psi_lambda(single, want, lam);
    axpy(mrhs, pp, -1.0);

    NeumannStats st;
    auto got = solve_boundary(single, mrhs, lam, 1e-11, &st);
    BoundaryPair diff = got;
    axpy(diff, want, -1.0);
    CHECK(l1_norm(diff, g->h) < 1e-8 * l1_norm(want, g->h));
    CHECK(st.converged);
    CHECK(st.iterations >= 10);
    CHECK(st.iterations <= 400);
    CHECK(st.q == Approx(std::exp(-0.3)).epsilon(1e-13));

    /* scalar reduction of the same series */
    double sc = solve_neumann([](double x) { return 0.5 * x; },
                              [](double x) { return std::abs(x); }, 1.0, 0.5, 1e-12, nullptr);
    CHECK(sc == Approx(2.0).margin(1e-9));
}

TEST_CASE("zero-inflow resolvent integrates along diagonals", "[boundary_ops]") {
    auto g = std::make_shared<const CharGrid>(GrowthModel::linear(1.0), 0.25, kH, 1.0, -2.0, 2.0);
    auto ops = ops_exp(g);
    const double lam = 0.8;
    const double h = g->h;
    REQUIRE(g->na == 64);
    REQUIRE(g->nb == 16);

    auto one = [](double, double) { return 1.0; };
    auto f2only = StateDensity::from_coordinate(g, [](double, double) { return 0.0; }, one);
    auto r = resolvent_a0(ops, f2only, lam);

    /* no survival decay in the clock phase: exact exponential ramp */
    auto ramp = [&](double t) { return (1.0 - std::exp(-lam * t)) / lam; };
    CHECK(r.at2(10, 37) == Approx(ramp(g->a_center(10))).epsilon(1e-12));
    CHECK(r.at2(0, 5) == Approx(ramp(g->a_center(0))).epsilon(1e-12));
    CHECK(r.at2(15, 20) == Approx(ramp(g->a_center(15))).epsilon(1e-12));
    /* diagonal truncated by the window edge */
    CHECK(r.at2(15, 10) == Approx(ramp((10.0 + 0.5) * h)).epsilon(1e-12));

    auto f1only = StateDensity::from_coordinate(g, one, [](double, double) { return 0.0; });
    auto r1 = resolvent_a0(ops, f1only, lam);
    auto ramp1 = [&](double t) { return (1.0 - std::exp(-(lam + 1.0) * t)) / (lam + 1.0); };
    CHECK(r1.at1(30, 50) == Approx(ramp1(g->a_center(30))).epsilon(2e-3));
    CHECK(r1.at1(63, 63) == Approx(ramp1(g->a_center(63))).epsilon(2e-3));

    /* contraction on unit-cell probes, including the deepest diagonal */
    for (auto [pi, pj] : {std::pair<std::size_t, std::size_t>{0, 128},
                          {g->na - 1, g->ns - 1},
                          {g->na / 2, 3}}) {
        auto e = StateDensity::zero(g);
        e.at1(pi, pj) = 1.0;
        if (pi < g->nb) e.at2(pi, pj) = 1.0;
        auto re = resolvent_a0(ops, e, lam);
        CHECK(lam * l1_norm(re) <= l1_norm(e) * (1.0 + 1e-12));
    }
    auto ones = StateDensity::from_coordinate(g, one, one);
    auto rones = resolvent_a0(ops, ones, lam);
    CHECK(lam * l1_norm(rones) <= l1_norm(ones) * (1.0 + 1e-12));
}

TEST_CASE("boundary-coupled resolvent conserves mass and feedback", "[boundary_ops]") {
    auto g = std::make_shared<const CharGrid>(GrowthModel::constant(1.0), 0.25, kH, 12.0, 0.0, 20.0);
    auto ops = ops_exp(g);
    const double lam = 1.0;

    auto f = StateDensity::from_coordinate(
        g,
        [](double a, double s) {
            return std::exp(-3.0 * (a - 0.3) * (a - 0.3) - 2.0 * (s - 2.5) * (s - 2.5));
        },
        [](double, double) { return 0.0; });

    NeumannStats st;
    auto u = resolvent_a_psi(ops, f, lam, 1e-11, &st);
    CHECK(st.converged);

    double mn = 0.0;
    for (double v : u.f1) mn = std::min(mn, v);
    for (double v : u.f2) mn = std::min(mn, v);
    CHECK(mn >= -1e-13);

    /* conservative tracking: lambda * resolvent preserves total mass */
    CHECK(lam * l1_norm(u) == Approx(l1_norm(f)).epsilon(5e-3));

    /* the solution satisfies its own entry condition */
    auto tr = apply_psi0(ops, u);
    auto fb = apply_psi(ops, u);
    BoundaryPair diff = tr;
    axpy(diff, fb, -1.0);
    CHECK(l1_norm(diff, g->h) < 0.05 * l1_norm(fb, g->h));

    auto u2 = resolvent_a_psi(ops, f, lam, 1e-11, nullptr);
    CHECK(u.f1 == u2.f1);
    CHECK(u.f2 == u2.f2);
}

TEST_CASE("mismatched grids are rejected", "[boundary_ops]") {
    auto g = grid_const(0.0, 4.0, 2.0);
    auto g2 = grid_const(0.0, 4.5, 2.0);
    auto ops = ops_exp(g);
    auto f = StateDensity::zero(g2);
    CHECK_THROWS_AS(apply_psi(ops, f), GridMismatch);
    CHECK_THROWS_AS(resolvent_a0(ops, f, 1.0), GridMismatch);
    BoundaryPair b;
    b.b1.assign(g->ns, 0.0);
    b.b2.assign(g->ns, 0.0);
    CHECK_NOTHROW(apply_psi_lambda(ops, b, 1.0));
    CHECK_THROWS_AS(apply_psi_lambda(ops, BoundaryPair{}, 1.0), GridMismatch);
    auto fa = StateDensity::zero(g);
    CHECK_THROWS_AS(axpy(fa, f, 1.0), GridMismatch);
}

TEST_CASE("generator action matches the lifted eigenrelation", "[boundary_ops]") {
    auto g = grid_const(0.0, 8.0, 3.0);
    auto ops = ops_exp(g);
    const double lam = 1.0;

    BoundaryPair b;
    b.b1.resize(g->ns);
    b.b2.resize(g->ns);
    for (std::size_t j = 0; j < g->ns; ++j) {
        const double s = g->s_center(j);
        b.b1[j] = std::exp(-2.0 * (s - 3.0) * (s - 3.0));
        b.b2[j] = std::exp(-2.0 * (s - 3.5) * (s - 3.5));
    }
    auto v = apply_psi_lambda(ops, b, lam);
    auto av = apply_generator(ops, v, &b);
    StateDensity resid = av;
    axpy(resid, v, -lam);
    CHECK(l1_norm(resid) < 0.1 * lam * l1_norm(v));
}

TEST_CASE("hypothesis survey comes back clean", "[boundary_ops]") {
    auto g = grid_const(0.0, 8.0, 3.0);
    auto ops = ops_exp(g);
    auto rep = check_hypotheses(ops, 1.0);

    CHECK(rep.lambda == 1.0);
    CHECK(rep.identity_err < 5.0 * g->h);
    CHECK(rep.generator_err < 0.15);
    CHECK(rep.feedback_col_bound <= rep.norm_bound_q + 1e-12);
    CHECK(rep.feedback_probe_ratio <= rep.norm_bound_q + 1e-12);
    CHECK(rep.r0_contraction <= 1.0 + 1e-12);
    CHECK(rep.green_err < 0.01);
    CHECK(rep.ok());

    /* the bound itself is the advertised closed form */
    CHECK(rep.norm_bound_q == Approx(std::max(std::exp(-0.25), 0.5)).epsilon(1e-13));
}
