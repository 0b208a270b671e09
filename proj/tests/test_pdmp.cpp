#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "cyclelab/pdmp.hpp"
#include "cyclelab/transport.hpp"

using namespace cyclelab;
using Catch::Approx;

namespace {

std::shared_ptr<const CharGrid> flat_grid(double t_b, double h_req, double a_max,
                                          double s_lo, double s_hi) {
    return std::make_shared<const CharGrid>(GrowthModel::constant(1.0), t_b, h_req, a_max,
                                            s_lo, s_hi);
}

double ks_distance(std::vector<double> samples, const DurationModel& d, double t_b) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double fi = generation_time_cdf(d, t_b, samples[i]);
        worst = std::max(worst, fi - static_cast<double>(i) / n);
        worst = std::max(worst, static_cast<double>(i + 1) / n - fi);
    }
    return worst;
}

}  // namespace

TEST_CASE("advance walks the deterministic branch exactly", "[pdmp]") {
    auto g = flat_grid(2.0, 0.25, 4.0, 0.0, 8.0);
    ModelOperators ops(g, DurationModel::exponential(0.5), Tracking::single_line);

    CellState mother{0.0, 1.0, Phase::B, 3.0};
    SplitStream silent(1, 1);
    auto [child, ev] = advance(ops, mother, silent);
    CHECK(silent.counter() == 0);
    CHECK(ev.kind == EventKind::division);
    CHECK(ev.time == 5.0);
    CHECK(ev.size_at_event == 3.0);
    CHECK(child.size == 1.5);
    CHECK(child.age == 0.0);
    CHECK(child.phase == Phase::A);
    CHECK(child.clock == 5.0);

    SplitStream probe(7, 0);
    const double wait = -std::log(probe.uniform_open01()) / 0.5;
    SplitStream st(7, 0);
    CellState fresh{0.0, 2.0, Phase::A, 1.0};
    auto [next, sw] = advance(ops, fresh, st);
    CHECK(sw.kind == EventKind::phase_switch);
    CHECK(sw.time == 1.0 + wait);
    CHECK(next.size == 2.0 + wait);
    CHECK(next.phase == Phase::B);
    CHECK(next.age == 0.0);

    /* proportional growth: a full cycle multiplies size by e^{T_A+T_B}/2 */
    auto gl = std::make_shared<const CharGrid>(GrowthModel::linear(1.0), 2.0, 0.25, 4.0,
                                               -4.0, 4.0);
    ModelOperators opl(gl, DurationModel::exponential(1.0), Tracking::single_line);
    SplitStream probe2(9, 4);
    const double ta = -std::log(probe2.uniform_open01());
    SplitStream st2(9, 4);
    CellState seed{0.0, 0.5, Phase::A, 0.0};
    auto [mid, e1] = advance(opl, seed, st2);
    auto [daughter, e2] = advance(opl, mid, st2);
    CHECK(e1.kind == EventKind::phase_switch);
    CHECK(e2.kind == EventKind::division);
    CHECK(daughter.size == Approx(0.25 * std::exp(ta + 2.0)).epsilon(1e-12));
    CHECK(daughter.size == 0.5 * e2.size_at_event);
}

TEST_CASE("lineage respects the refractory gap and the generation-time law", "[pdmp]") {
    auto g = flat_grid(0.2, 0.05, 4.0, 0.0, 8.0);
    ModelOperators ops(g, DurationModel::exponential(2.0), Tracking::single_line);

    SplitStream st(42, 0);
    CellState fresh{0.0, 1.0, Phase::A, 0.0};
    auto none = simulate_lineage(ops, fresh, 0.0, st);
    CHECK(none.events.empty());
    CHECK(none.final_state.clock == 0.0);
    CHECK(none.final_state.size == 1.0);

    auto path = simulate_lineage(ops, fresh, 200.0, st);
    REQUIRE(path.events.size() > 100);
    double prev = 0.0;
    double prev_div = -1.0;
    std::size_t divisions = 0;
    for (const auto& ev : path.events) {
        CHECK(ev.time > prev);
        prev = ev.time;
        CHECK(ev.size_at_event > 0.0);
        if (ev.kind == EventKind::division) {
            if (prev_div >= 0.0) CHECK(ev.time - prev_div >= 0.2);
            prev_div = ev.time;
            ++divisions;
        }
    }
    CHECK(path.events.size() - 2 * divisions <= 1);
    CHECK(path.final_state.clock == 200.0);

    /* generation indices count divisions */
    CHECK(path.events.front().generation == 0);
    std::size_t seen = 0;
    for (const auto& ev : path.events) {
        CHECK(ev.generation == seen);
        if (ev.kind == EventKind::division) ++seen;
    }
}

TEST_CASE("sampled generation times match the hazard law", "[pdmp]") {
    auto g = flat_grid(0.2, 0.05, 4.0, 0.0, 8.0);
    const auto d = DurationModel::exponential(2.0);
    ModelOperators ops(g, d, Tracking::single_line);

    SplitStream st(2026, 5);
    CellState fresh{0.0, 1.0, Phase::A, 0.0};
    auto path = simulate_lineage(ops, fresh, 72000.0, st);

    std::vector<double> gaps;
    double birth = 0.0;
    for (const auto& ev : path.events)
        if (ev.kind == EventKind::division) {
            gaps.push_back(ev.time - birth);
            birth = ev.time;
        }
    REQUIRE(gaps.size() >= 100000);
    gaps.resize(100000);

    double lo = 1e300;
    for (double t : gaps) lo = std::min(lo, t);
    CHECK(lo >= 0.2);
    CHECK(ks_distance(gaps, d, 0.2) < 0.01);
}

TEST_CASE("ensemble histogram reproduces a four-cell start", "[pdmp]") {
    auto g = flat_grid(0.25, 1.0 / 16, 2.0, 0.0, 4.0);
    const double h = g->h;
    ModelOperators ops(g, DurationModel::exponential(1.0), Tracking::single_line);

    auto f0 = StateDensity::zero(g);
    const double v = 0.25 / (h * h);
    f0.at1(2, 20) = v;
    f0.at1(5, 33) = v;
    f0.at2(1, 40) = v;
    f0.at2(3, 50) = v;

    auto empty = ensemble_density(ops, f0, 0, 0.0, 11);
    CHECK(l1_norm(empty) == 0.0);

    auto hist = ensemble_density(ops, f0, 4000, 0.0, 11);
    CHECK(l1_norm(hist) == Approx(1.0).epsilon(1e-12));
    const double support = hist.at1(2, 20) + hist.at1(5, 33) + hist.at2(1, 40) +
                           hist.at2(3, 50);
    CHECK(support * h * h == Approx(1.0).epsilon(1e-12));
    StateDensity diff = hist;
    axpy(diff, f0, -1.0);
    CHECK(l1_norm(diff) < 0.05);

    auto again = ensemble_density(ops, f0, 4000, 0.0, 11);
    CHECK(again.f1 == hist.f1);
    CHECK(again.f2 == hist.f2);
    auto other = ensemble_density(ops, f0, 4000, 0.0, 12);
    CHECK(other.f1 != hist.f1);

    auto wide = ensemble_density(ops, f0, 4000, 0.0, 11, 3);
    CHECK(wide.f1 == hist.f1);
    CHECK(wide.f2 == hist.f2);
}

TEST_CASE("ensemble agrees with the grid flow after one time unit", "[pdmp]") {
    auto g = flat_grid(0.25, 1.0 / 32, 2.5, 0.0, 5.0);
    ModelOperators ops(g, DurationModel::exponential(1.0), Tracking::single_line);

    auto f0 = StateDensity::from_coordinate(
        g,
        [](double a, double s) {
            if (a > 0.3) return 0.0;
            const double us = (s - 2.5) / 0.4;
            const double ua = (a - 0.15) / 0.1;
            return std::exp(-us * us - ua * ua);
        },
        [](double, double) { return 0.0; });
    const double m = l1_norm(f0);
    for (double& x : f0.f1) x /= m;

    auto pde = evolve(ops, f0, 1.0).density;
    auto hist = ensemble_density(ops, f0, 100000, 1.0, 77, 2);
    CHECK(l1_norm(hist) == Approx(1.0).epsilon(1e-9));
    CHECK(block_l1_distance(hist, pde, 8) < 0.08);
}

TEST_CASE("branching doubles on schedule and respects the variant gate", "[pdmp]") {
    auto g = flat_grid(1.0, 0.125, 4.0, 0.0, 10.0);
    ModelOperators single(g, DurationModel::exponential(1.0), Tracking::single_line);
    std::vector<CellState> pop(5, CellState{0.0, 1.0, Phase::A, 0.0});
    CHECK_THROWS_AS(simulate_branching(single, pop, 2.0, 100, 3), PreconditionViolated);

    ModelOperators lazy(g, DurationModel::uniform(50.0, 60.0), Tracking::bell);
    auto quiet = simulate_branching(lazy, pop, 2.0, 100, 3);
    CHECK(quiet.population.back() == 5);
    CHECK(quiet.growth_rate == Approx(0.0).margin(1e-12));

    ModelOperators clockwork(g, DurationModel::uniform(0.999, 1.001), Tracking::bell);
    std::vector<CellState> one(1, CellState{0.0, 1.0, Phase::A, 0.0});
    auto burst = simulate_branching(clockwork, one, 6.5, 100, 3);
    CHECK(burst.population.back() == 8);
    CHECK(burst.population.front() >= 1);

    CHECK_THROWS_AS(simulate_branching(clockwork, one, 6.5, 0, 3), PreconditionViolated);
}

TEST_CASE("branching growth matches the grid-flow rate", "[pdmp]") {
    auto g = std::make_shared<const CharGrid>(GrowthModel::constant(1.0), 1.0, 1.0 / 16,
                                              6.0, 0.0, 16.0);
    ModelOperators ops(g, DurationModel::exponential(1.0), Tracking::bell);

    auto f = StateDensity::from_coordinate(
        g,
        [](double a, double s) {
            return std::exp(-2.0 * (a - 0.5) * (a - 0.5) - (s - 3.0) * (s - 3.0));
        },
        [](double, double) { return 0.0; });
    const double pde_rate = bell_growth_rate(ops, f, 12.0);

    std::vector<CellState> pop;
    SplitStream init(99, 0);
    for (int i = 0; i < 500; ++i) {
        const double a = -std::log(init.uniform_open01());
        pop.push_back(CellState{std::min(a, 3.0), 1.0 + 2.0 * init.uniform01(), Phase::A, 0.0});
    }
    auto res = simulate_branching(ops, pop, 14.0, 30000, 123);
    REQUIRE(res.times.size() == res.log_population.size());
    CHECK(res.population.back() > 1000);
    CHECK(res.growth_rate == Approx(pde_rate).margin(0.05 * pde_rate));
}
