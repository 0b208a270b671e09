#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <thread>
#include <utility>
#include <vector>

#include "boundary_ops.hpp"
#include "rng.hpp"

namespace cyclelab {

enum class Phase { A, B };
enum class EventKind { phase_switch, division };

struct CellState {
    double age = 0.0;
    double size = 1.0;
    Phase phase = Phase::A;
    double clock = 0.0;
};

struct EventRecord {
    EventKind kind;
    double time;
    double size_at_event;
    std::size_t generation;
};

/* Jump-to-jump move: exact flow between events, no ODE stepping.  Phase A
 * consumes one draw for the remaining hazard wait; phase B is deterministic
 * and consumes none.  Division halves the size bitwise. */
inline std::pair<CellState, EventRecord> advance(const ModelOperators& ops,
                                                 const CellState& c, SplitStream& stream,
                                                 std::size_t generation = 0) {
    if (c.age < 0.0 || !(c.size >= 0.0))
        throw PreconditionViolated("cell state is outside the model domain");
    const GrowthModel& gm = ops.grid->growth;
    if (c.phase == Phase::A) {
        const double wait = sample_remaining(ops.duration, c.age, stream);
        CellState n;
        n.age = 0.0;
        n.size = flow(gm, c.size, wait);
        n.phase = Phase::B;
        n.clock = c.clock + wait;
        return {n, EventRecord{EventKind::phase_switch, n.clock, n.size, generation}};
    }
    const double wait = ops.grid->t_b - c.age;
    if (wait < 0.0) throw PreconditionViolated("clock-phase age beyond the handoff");
    const double grown = flow(gm, c.size, wait);
    CellState n;
    n.age = 0.0;
    n.size = 0.5 * grown;
    n.phase = Phase::A;
    n.clock = c.clock + wait;
    return {n, EventRecord{EventKind::division, n.clock, grown, generation}};
}

namespace detail {

/* Advance to the horizon, discarding any event drawn past it; the partial
 * move flows the pre-event state, so resuming later re-conditions the wait
 * on the attained age, which is the correct Markov restart. */
inline CellState run_until(const ModelOperators& ops, CellState c, double t_end,
                           SplitStream& stream, std::vector<EventRecord>* log,
                           std::size_t* generation) {
    std::size_t gen = generation ? *generation : 0;
    while (c.clock < t_end) {
        auto [n, ev] = advance(ops, c, stream, gen);
        if (ev.time > t_end) {
            const double dt = t_end - c.clock;
            c.size = flow(ops.grid->growth, c.size, dt);
            c.age += dt;
            c.clock = t_end;
            break;
        }
        if (log) log->push_back(ev);
        if (ev.kind == EventKind::division) ++gen;
        c = n;
    }
    if (generation) *generation = gen;
    return c;
}

}  // namespace detail

struct Lineage {
    std::vector<EventRecord> events;
    CellState final_state;
};

inline Lineage simulate_lineage(const ModelOperators& ops, CellState initial, double t_end,
                                SplitStream& stream) {
    if (!(t_end >= 0.0)) throw PreconditionViolated("horizon must be nonnegative");
    Lineage out;
    std::size_t gen = 0;
    out.final_state = detail::run_until(ops, initial, t_end, stream, &out.events, &gen);
    return out;
}

/* Empirical density of n cells drawn from `initial` by inverse CDF over grid
 * cells (uniform within a cell), each run forward with its own index-keyed
 * stream.  Deposits are equal quanta counted in integers, so the histogram
 * is bitwise identical for every thread count. */
inline StateDensity ensemble_density(const ModelOperators& ops, const StateDensity& initial,
                                     std::size_t n_cells, double t, std::uint64_t seed,
                                     unsigned threads = 1) {
    detail::require_same(ops, initial);
    if (!(t >= 0.0)) throw PreconditionViolated("horizon must be nonnegative");
    const CharGrid& g = *ops.grid;
    StateDensity out = StateDensity::zero(ops.grid);
    if (n_cells == 0) return out;

    const std::size_t n1 = initial.f1.size();
    const std::size_t n2 = initial.f2.size();
    std::vector<double> cum(n1 + n2);
    long double acc = 0.0L;
    for (std::size_t i = 0; i < n1 + n2; ++i) {
        const double v = i < n1 ? initial.f1[i] : initial.f2[i - n1];
        if (v < 0.0) throw PreconditionViolated("initial density must be nonnegative");
        acc += v;
        cum[i] = static_cast<double>(acc);
    }
    if (!(acc > 0.0L)) throw PreconditionViolated("initial density carries no mass");
    const double total = static_cast<double>(acc);
    for (double& x : cum) x /= total;
    cum.back() = 1.0;

    const double h = g.h;
    const std::size_t ns = g.ns;
    /* -1 marks a sample that left the window */
    std::vector<std::int64_t> bin(n_cells);
    auto worker = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t idx = lo; idx < hi; ++idx) {
            SplitStream st(seed, idx);
            const double u = st.uniform01();
            const std::size_t k = static_cast<std::size_t>(
                std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
            const std::size_t kk = std::min(k, n1 + n2 - 1);
            const double ua = st.uniform01();
            const double us = st.uniform01();

            CellState c;
            std::size_t row, col;
            if (kk < n1) {
                row = kk / ns;
                col = kk % ns;
                c.phase = Phase::A;
            } else {
                row = (kk - n1) / ns;
                col = (kk - n1) % ns;
                c.phase = Phase::B;
            }
            c.age = (static_cast<double>(row) + ua) * h;
            c.size = q_inverse(g.growth, g.s_node(col) + us * h);
            c.clock = 0.0;

            c = detail::run_until(ops, c, t, st, nullptr, nullptr);

            const double s = q(g.growth, c.size);
            const double jc = std::floor((s - g.s_min) / h);
            const double ic = std::floor(c.age / h);
            const std::size_t rows = c.phase == Phase::A ? g.na : g.nb;
            if (jc < 0.0 || jc >= static_cast<double>(ns) || ic < 0.0 ||
                ic >= static_cast<double>(rows)) {
                bin[idx] = -1;
                continue;
            }
            const auto i = static_cast<std::size_t>(ic);
            const auto j = static_cast<std::size_t>(jc);
            const std::size_t flat = i * ns + j;
            bin[idx] = c.phase == Phase::A ? static_cast<std::int64_t>(flat)
                                           : static_cast<std::int64_t>(n1 + flat);
        }
    };

    const unsigned nt = std::max(1u, threads);
    if (nt == 1 || n_cells < 2048) {
        worker(0, n_cells);
    } else {
        std::vector<std::thread> crew;
        const std::size_t chunk = (n_cells + nt - 1) / nt;
        for (unsigned w = 0; w < nt; ++w) {
            const std::size_t lo = static_cast<std::size_t>(w) * chunk;
            if (lo >= n_cells) break;
            crew.emplace_back(worker, lo, std::min(n_cells, lo + chunk));
        }
        for (auto& th : crew) th.join();
    }

    const double w = 1.0 / (static_cast<double>(n_cells) * h * h);
    std::vector<std::uint32_t> c1(n1, 0), c2(n2, 0);
    for (std::int64_t b : bin) {
        if (b < 0) continue;
        if (static_cast<std::size_t>(b) < n1)
            ++c1[static_cast<std::size_t>(b)];
        else
            ++c2[static_cast<std::size_t>(b) - n1];
    }
    for (std::size_t i = 0; i < n1; ++i) out.f1[i] = static_cast<double>(c1[i]) * w;
    for (std::size_t i = 0; i < n2; ++i) out.f2[i] = static_cast<double>(c2[i]) * w;
    return out;
}

/* L1 distance after pooling cells into block x block tiles per phase; the
 * resolution at which an n-sample histogram carries signal. */
inline double block_l1_distance(const StateDensity& a, const StateDensity& b,
                                std::size_t block) {
    if (!a.grid || !b.grid || !a.grid->same_shape(*b.grid))
        throw GridMismatch("histograms live on different grids");
    if (block == 0) throw PreconditionViolated("block must be positive");
    const CharGrid& g = *a.grid;
    const double hh = g.h * g.h;
    long double tot = 0.0L;
    auto scan = [&](const std::vector<double>& fa, const std::vector<double>& fb,
                    std::size_t rows) {
        for (std::size_t bi = 0; bi < rows; bi += block)
            for (std::size_t bj = 0; bj < g.ns; bj += block) {
                long double sa = 0.0L, sb = 0.0L;
                for (std::size_t i = bi; i < std::min(rows, bi + block); ++i)
                    for (std::size_t j = bj; j < std::min(g.ns, bj + block); ++j) {
                        sa += fa[i * g.ns + j];
                        sb += fb[i * g.ns + j];
                    }
                tot += std::abs(sa - sb) * hh;
            }
    };
    scan(a.f1, b.f1, g.na);
    scan(a.f2, b.f2, g.nb);
    return static_cast<double>(tot);
}

struct BranchingResult {
    std::vector<double> times;
    std::vector<std::size_t> population; /* raw counts after thinning */
    std::vector<double> log_population;  /* thinning correction folded in */
    double growth_rate = 0.0;
};

/* Full tree with both daughters kept; above `cap` the population is thinned
 * uniformly and the factor moves into the log-population correction, so the
 * slope estimate stays unbiased under bounded memory. */
inline BranchingResult simulate_branching(const ModelOperators& ops,
                                          std::vector<CellState> initial, double t_end,
                                          std::size_t cap, std::uint64_t seed) {
    if (ops.tracking != Tracking::bell)
        throw PreconditionViolated("branching requires the bell variant");
    if (cap == 0) throw PreconditionViolated("population cap must be positive");
    if (initial.empty()) throw PreconditionViolated("initial population is empty");
    if (!(t_end > 0.0)) throw PreconditionViolated("horizon must be positive");

    struct Item {
        CellState s;
        SplitStream rng;
    };
    std::vector<Item> pop;
    pop.reserve(initial.size());
    std::uint64_t next_id = 0;
    for (const auto& c : initial) pop.push_back({c, SplitStream(seed, next_id++)});
    SplitStream thin(seed, 0xFFFFFFFFFFFFFFFFull);

    const std::size_t n_snap = 48;
    const double dt = t_end / static_cast<double>(n_snap);

    BranchingResult res;
    double corr = 0.0;
    res.times.push_back(0.0);
    res.population.push_back(pop.size());
    res.log_population.push_back(std::log(static_cast<double>(pop.size())));

    for (std::size_t k = 1; k <= n_snap; ++k) {
        const double tk = static_cast<double>(k) * dt;
        for (std::size_t idx = 0; idx < pop.size(); ++idx) {
            CellState c = pop[idx].s;
            while (c.clock < tk) {
                auto [n, ev] = advance(ops, c, pop[idx].rng);
                if (ev.time > tk) {
                    const double rest = tk - c.clock;
                    c.size = flow(ops.grid->growth, c.size, rest);
                    c.age += rest;
                    c.clock = tk;
                    break;
                }
                if (ev.kind == EventKind::division)
                    pop.push_back({n, SplitStream(seed, next_id++)});
                c = n;
            }
            pop[idx].s = c;
        }
        if (pop.size() > cap) {
            const std::size_t m = pop.size();
            for (std::size_t i = 0; i < cap; ++i) {
                const std::size_t j =
                    i + static_cast<std::size_t>(thin.uniform01() *
                                                 static_cast<double>(m - i));
                std::swap(pop[i], pop[std::min(j, m - 1)]);
            }
            pop.erase(pop.begin() + static_cast<std::ptrdiff_t>(cap), pop.end());
            corr += std::log(static_cast<double>(m) / static_cast<double>(cap));
        }
        res.times.push_back(tk);
        res.population.push_back(pop.size());
        res.log_population.push_back(std::log(static_cast<double>(pop.size())) + corr);
    }

    const std::size_t n = res.times.size();
    const std::size_t k0 = n / 2;
    long double sx = 0.0L, sy = 0.0L, sxx = 0.0L, sxy = 0.0L;
    for (std::size_t k = k0; k < n; ++k) {
        const double x = res.times[k];
        const double y = res.log_population[k];
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const auto cnt = static_cast<long double>(n - k0);
    const long double det = cnt * sxx - sx * sx;
    res.growth_rate = det > 0.0L ? static_cast<double>((cnt * sxy - sx * sy) / det) : 0.0;
    return res;
}

}  // namespace cyclelab
