#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "interval.hpp"
#include "pdmp.hpp"
#include "steady_state.hpp"
#include "transport.hpp"

namespace cyclelab {
namespace cliapp {

namespace fs = std::filesystem;

struct RunContext {
    ModelConfig cfg;
    std::shared_ptr<const CharGrid> grid;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    double grid_h = 0.0;
    fs::path out;
    std::vector<std::pair<std::string, std::string>> artifacts; /* name, checksum */

    void emit(const std::string& name, const std::string& content) {
        write_text((out / name).string(), content);
        artifacts.emplace_back(name, fnv1a_hex(content));
    }
    void emit_csv(const std::string& name, const std::vector<std::string>& header,
                  const std::vector<std::vector<double>>& rows) {
        emit(name, render_csv(header, rows));
    }
    void emit_json(const std::string& name, const ojson& j) { emit(name, j.dump(2) + "\n"); }
};

inline StateDensity initial_bump(const ModelConfig& cfg,
                                 const std::shared_ptr<const CharGrid>& grid) {
    const double sc = cfg.s_center, sw = cfg.s_width, aw = cfg.a_width;
    auto f = StateDensity::from_coordinate(
        grid,
        [&](double a, double s) {
            const double ua = a / aw, us = (s - sc) / sw;
            return std::exp(-ua * ua - us * us);
        },
        [](double, double) { return 0.0; });
    const double m = l1_norm(f);
    if (!(m > 0.0)) throw PreconditionViolated("initial bump misses the grid window");
    for (double& v : f.f1) v /= m;
    return f;
}

inline void density_rows(const StateDensity& f, std::vector<std::vector<double>>& rows) {
    const CharGrid& g = *f.grid;
    for (std::size_t i = 0; i < g.na; ++i)
        for (std::size_t j = 0; j < g.ns; ++j)
            if (const double v = f.at1(i, j); v != 0.0)
                rows.push_back({1.0, static_cast<double>(i), static_cast<double>(j),
                                g.a_center(i), g.s_center(j), v});
    for (std::size_t i = 0; i < g.nb; ++i)
        for (std::size_t j = 0; j < g.ns; ++j)
            if (const double v = f.at2(i, j); v != 0.0)
                rows.push_back({2.0, static_cast<double>(i), static_cast<double>(j),
                                g.a_center(i), g.s_center(j), v});
}

inline const char* verdict_name(SteadyVerdict v) {
    switch (v) {
        case SteadyVerdict::exists: return "exists";
        case SteadyVerdict::exists_unique: return "exists_unique";
        case SteadyVerdict::not_exists: return "not_exists";
        default: return "inconclusive";
    }
}

inline std::string heatmap_plot(const std::string& csv, const std::string& title) {
    std::string s;
    s += "set datafile separator ','\n";
    s += "set title '" + title + "'\n";
    s += "set xlabel 's'\nset ylabel 'age'\n";
    s += "set view map\nset palette viridis\n";
    s += "splot '" + csv + "' every ::1 using 5:4:6 with points pt 5 ps 0.6 palette notitle\n";
    return s;
}

inline int cmd_evolve(RunContext& ctx) {
    auto ops = make_operators(ctx.cfg, ctx.grid);
    auto f0 = initial_bump(ctx.cfg, ctx.grid);
    const double h = ctx.grid->h;
    const long long steps = std::max<long long>(1, std::llround(ctx.cfg.t_end / h));
    const double horizon = static_cast<double>(steps) * h;
    auto ev = evolve(ops, f0, horizon);

    const double m0 = ev.mass_trace.front();
    double gap_max = 0.0;
    std::vector<std::vector<double>> rows;
    rows.reserve(ev.mass_trace.size());
    for (std::size_t k = 0; k < ev.mass_trace.size(); ++k) {
        const double gap = std::abs(ev.mass_trace[k] + ev.trunc_trace[k] - m0);
        gap_max = std::max(gap_max, gap);
        rows.push_back({static_cast<double>(k), static_cast<double>(k) * h,
                        ev.mass_trace[k], ev.trunc_trace[k], gap});
    }
    ctx.emit_csv("mass_trace.csv", {"step", "time", "mass", "truncated", "gap"}, rows);

    rows.clear();
    density_rows(ev.density, rows);
    ctx.emit_csv("density.csv", {"phase", "age_index", "size_index", "age", "s", "value"},
                 rows);

    const bool ok = gap_max <= ctx.cfg.mass_tol;
    ojson s;
    s["steps"] = static_cast<std::uint64_t>(steps);
    s["horizon"] = horizon;
    s["final_mass"] = ev.mass_trace.back();
    s["truncated_total"] = ev.total.truncated;
    s["captured_total"] = ev.total.captured;
    s["divided_total"] = ev.total.divided;
    s["mass_gap_max"] = gap_max;
    s["mass_tol"] = ctx.cfg.mass_tol;
    s["pass"] = ok;
    ctx.emit_json("summary.json", s);

    std::string gp;
    gp += "set datafile separator ','\n";
    gp += "set title 'population mass and window loss'\n";
    gp += "set xlabel 'time'\nset key left\n";
    gp += "plot 'mass_trace.csv' every ::1 using 2:3 with lines title 'mass', \\\n";
    gp += "     'mass_trace.csv' every ::1 using 2:4 with lines title 'truncated'\n";
    ctx.emit("plot.gp", gp);
    return ok ? 0 : 1;
}

inline int cmd_steady(RunContext& ctx) {
    auto ops = make_operators(ctx.cfg, ctx.grid);
    const CharGrid& g = *ctx.grid;
    std::vector<double> b0(g.ns, 0.0);
    for (std::size_t j = 0; j < g.ns; ++j) {
        const double us = (g.s_center(j) - ctx.cfg.s_center) / ctx.cfg.s_width;
        b0[j] = std::exp(-us * us);
    }

    ojson rep;
    auto exist = existence_report(ops);
    rep["existence"] = {{"verdict", verdict_name(exist.verdict)},
                        {"mean_phase_a", exist.mean_phase_a.value},
                        {"mean_phase_a_finite", exist.mean_phase_a.finite},
                        {"tail_liminf", exist.tail_liminf},
                        {"tail_sup", exist.tail_sup},
                        {"q_zero_finite", exist.q_zero_finite},
                        {"note", exist.note}};
    try {
        auto fx = find_fixed_point(ops, b0, ctx.cfg.tolerance, ctx.cfg.max_iterations);
        auto fs = build_steady_density(ops, fx.density);
        auto chk = verify_steady(ops, fs);
        const double m = l1_norm(fs);
        for (double& v : fs.f1) v /= m;
        for (double& v : fs.f2) v /= m;

        rep["verdict"] = verdict_name(exist.verdict);
        rep["fixed_point"] = {{"residual", fx.residual},
                              {"iterations", static_cast<std::uint64_t>(fx.iterations)}};
        rep["steady_checks"] = {{"generator_resid", chk.generator_resid},
                                {"trace_gap", chk.trace_gap},
                                {"one_sided_violation", chk.one_sided_violation},
                                {"fixed_point_gap", chk.fixed_point_gap}};
        std::vector<std::vector<double>> rows;
        density_rows(fs, rows);
        ctx.emit_csv("steady.csv", {"phase", "age_index", "size_index", "age", "s", "value"},
                     rows);
        ctx.emit("plot.gp", heatmap_plot("steady.csv", "stationary density"));
    } catch (const NoConvergence& e) {
        const std::string what = e.what();
        const bool disp = what.find("dispersive") != std::string::npos;
        rep["verdict"] = disp ? "dispersive" : "no_convergence";
        rep["detail"] = what;
        auto diag = drift_diagnostic(ops, b0, 24);
        rep["drift"] = {{"var_slope", diag.var_slope},
                        {"var_r2", diag.var_r2},
                        {"dispersive", diag.dispersive}};
        std::vector<std::vector<double>> rows;
        for (std::size_t k = 0; k < diag.variance.size(); ++k)
            rows.push_back({static_cast<double>(k), diag.mean[k], diag.variance[k]});
        ctx.emit_csv("drift.csv", {"iterate", "mean", "variance"}, rows);
        std::string gp;
        gp += "set datafile separator ','\n";
        gp += "set title 'log-size spread across generations'\n";
        gp += "set xlabel 'generation'\n";
        gp += "plot 'drift.csv' every ::1 using 1:3 with linespoints title 'variance'\n";
        ctx.emit("plot.gp", gp);
    }
    ctx.emit_json("report.json", rep);
    return 0;
}

inline int cmd_resolvent(RunContext& ctx) {
    auto ops = make_operators(ctx.cfg, ctx.grid);
    auto f = initial_bump(ctx.cfg, ctx.grid);

    ojson rep;
    ojson hyp = ojson::array();
    std::vector<std::vector<double>> rows;
    bool all_ok = true;
    for (double lam : ctx.cfg.lambdas) {
        auto r = check_hypotheses(ops, lam);
        hyp.push_back({{"lambda", lam},
                       {"identity_err", r.identity_err},
                       {"generator_err", r.generator_err},
                       {"feedback_col_bound", r.feedback_col_bound},
                       {"feedback_probe_ratio", r.feedback_probe_ratio},
                       {"norm_bound_q", r.norm_bound_q},
                       {"r0_contraction", r.r0_contraction},
                       {"green_err", r.green_err},
                       {"ok", r.ok()}});
        all_ok = all_ok && r.ok();
        rows.push_back({lam, r.norm_bound_q, r.feedback_col_bound, r.identity_err,
                        r.generator_err});
    }
    rep["hypotheses"] = std::move(hyp);
    ctx.emit_csv("bounds.csv",
                 {"lambda", "norm_bound", "feedback_col_bound", "identity_err",
                  "generator_err"},
                 rows);

    const double lam = ctx.cfg.lambdas[ctx.cfg.lambdas.size() / 2];
    auto u = resolvent_a_psi(ops, f, lam, ctx.cfg.tolerance);
    auto bc = apply_psi(ops, u);
    auto au = apply_generator(ops, u, &bc);
    StateDensity resid = u;
    for (std::size_t k = 0; k < resid.f1.size(); ++k)
        resid.f1[k] = lam * u.f1[k] - au.f1[k] - f.f1[k];
    for (std::size_t k = 0; k < resid.f2.size(); ++k)
        resid.f2[k] = lam * u.f2[k] - au.f2[k] - f.f2[k];
    const double res = l1_norm(resid) / l1_norm(f);
    const double gate = 10.0 * ctx.grid->h + 1e-6;
    const bool id_ok = res <= gate;
    all_ok = all_ok && id_ok;

    rep["identity_lambda"] = lam;
    rep["identity_residual"] = res;
    rep["identity_gate"] = gate;
    rep["pass"] = all_ok;
    ctx.emit_json("report.json", rep);

    std::string gp;
    gp += "set datafile separator ','\n";
    gp += "set title 'feedback bound against the assembled operator'\n";
    gp += "set xlabel 'lambda'\nset key left\n";
    gp += "plot 'bounds.csv' every ::1 using 1:2 with linespoints title 'bound', \\\n";
    gp += "     'bounds.csv' every ::1 using 1:3 with linespoints title 'column sums'\n";
    ctx.emit("plot.gp", gp);
    return all_ok ? 0 : 1;
}

inline int cmd_interval(RunContext& ctx) {
    constexpr std::size_t n = 10001;
    constexpr double pi = 3.14159265358979323846;
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i)
        f[i] = std::sin(pi * static_cast<double>(i) / static_cast<double>(n - 1));

    struct NamedMeasure {
        const char* name;
        BoundaryMeasure mu;
    };
    const NamedMeasure fine[] = {{"delta0", BoundaryMeasure::delta(0.0)},
                                 {"uniform", BoundaryMeasure::uniform()}};

    ojson cases = ojson::array();
    std::vector<std::string> header{"x"};
    std::vector<std::vector<double>> cols;
    bool all_ok = true;
    for (const auto& nm : fine) {
        for (double lam : ctx.cfg.lambdas) {
            auto u = interval_resolvent(f, lam, nm.mu);
            auto r = interval_residuals(u, f, lam, nm.mu);
            const bool ok = r.ode_residual < ctx.cfg.residual_tol &&
                            r.boundary_residual < ctx.cfg.residual_tol;
            all_ok = all_ok && ok;
            cases.push_back({{"mu", nm.name},
                             {"lambda", lam},
                             {"kappa", r.kappa},
                             {"ode_residual", r.ode_residual},
                             {"boundary_residual", r.boundary_residual},
                             {"status", ok ? "ok" : "residual_above_tol"}});
            header.push_back(std::string(nm.name) + "_" + format_number(lam));
            cols.push_back(std::move(u));
        }
    }
    for (double lam : ctx.cfg.lambdas) {
        try {
            interval_resolvent(f, lam, BoundaryMeasure::delta(1.0));
            cases.push_back(
                {{"mu", "delta1"}, {"lambda", lam}, {"status", "unexpected_inverse"}});
            all_ok = false;
        } catch (const NotInvertible&) {
            cases.push_back(
                {{"mu", "delta1"}, {"lambda", lam}, {"status", "not_invertible"}});
        }
    }

    const double fb = interval_psi_psi(BoundaryMeasure::uniform(), 1.0);
    const double fb_gap = std::abs(fb - (1.0 - std::exp(-1.0)));
    all_ok = all_ok && fb_gap < 1e-12;

    ojson rep;
    rep["cases"] = std::move(cases);
    rep["uniform_feedback_at_one"] = fb;
    rep["uniform_feedback_gap"] = fb_gap;
    rep["residual_tol"] = ctx.cfg.residual_tol;
    rep["pass"] = all_ok;
    ctx.emit_json("report.json", rep);

    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; i += 20) {
        std::vector<double> row{static_cast<double>(i) / static_cast<double>(n - 1)};
        for (const auto& c : cols) row.push_back(c[i]);
        rows.push_back(std::move(row));
    }
    ctx.emit_csv("profiles.csv", header, rows);

    std::string gp;
    gp += "set datafile separator ','\n";
    gp += "set title 'boundary-fed resolvent profiles'\n";
    gp += "set xlabel 'x'\nset key outside\n";
    gp += "plot for [k=2:" + std::to_string(header.size()) +
          "] 'profiles.csv' every ::1 using 1:k with lines title columnheader(k)\n";
    ctx.emit("plot.gp", gp);
    return all_ok ? 0 : 1;
}

inline int cmd_pdmp(RunContext& ctx) {
    auto ops = make_operators(ctx.cfg, ctx.grid);
    auto f0 = initial_bump(ctx.cfg, ctx.grid);

    CellState c0;
    c0.size = q_inverse(ctx.cfg.growth, ctx.cfg.s_center);
    SplitStream stream(ctx.seed, 0);
    auto line = simulate_lineage(ops, c0, ctx.cfg.t_end, stream);

    std::string ev = "time,kind,size,generation\n";
    for (const auto& e : line.events) {
        ev += format_number(e.time);
        ev += e.kind == EventKind::division ? ",division," : ",phase_switch,";
        ev += format_number(e.size_at_event);
        ev += ',';
        ev += std::to_string(e.generation);
        ev += '\n';
    }
    ctx.emit("events.csv", ev);

    /* long single-line run for the generation-time statistics */
    SplitStream gaps_stream(ctx.seed, 1);
    auto stats = simulate_lineage(ops, c0, 400.0, gaps_stream);
    std::vector<double> div_times;
    for (const auto& e : stats.events)
        if (e.kind == EventKind::division) div_times.push_back(e.time);
    double min_gap = 0.0, mean_gap = 0.0;
    std::size_t below_clock = 0;
    if (div_times.size() >= 2) {
        min_gap = 1e300;
        for (std::size_t k = 1; k < div_times.size(); ++k) {
            const double gp = div_times[k] - div_times[k - 1];
            min_gap = std::min(min_gap, gp);
            mean_gap += gp;
            if (gp < ctx.cfg.t_b) ++below_clock;
        }
        mean_gap /= static_cast<double>(div_times.size() - 1);
    }

    auto hist =
        ensemble_density(ops, f0, ctx.cfg.n_cells, ctx.cfg.t_end, ctx.seed, ctx.threads);
    std::vector<std::vector<double>> rows;
    density_rows(hist, rows);
    ctx.emit_csv("histogram.csv", {"phase", "age_index", "size_index", "age", "s", "value"},
                 rows);

    ojson s;
    s["n_cells"] = static_cast<std::uint64_t>(ctx.cfg.n_cells);
    s["t_end"] = ctx.cfg.t_end;
    s["histogram_mass"] = l1_norm(hist);
    s["lineage_events"] = static_cast<std::uint64_t>(line.events.size());
    s["generation_stats"] = {{"divisions", static_cast<std::uint64_t>(div_times.size())},
                             {"min_gap", min_gap},
                             {"mean_gap", mean_gap},
                             {"below_clock", static_cast<std::uint64_t>(below_clock)}};
    s["pass"] = below_clock == 0;
    ctx.emit_json("summary.json", s);

    ctx.emit("plot.gp", heatmap_plot("histogram.csv", "empirical state density"));
    return below_clock == 0 ? 0 : 1;
}

inline int dispatch(const std::string& name, RunContext& ctx) {
    if (name == "simulate-pdmp") return cmd_pdmp(ctx);
    if (name == "evolve-pde") return cmd_evolve(ctx);
    if (name == "steady-state") return cmd_steady(ctx);
    if (name == "resolvent-check") return cmd_resolvent(ctx);
    if (name == "interval-example") return cmd_interval(ctx);
    return 2;
}

}  // namespace cliapp

inline int run_cli(const std::vector<std::string>& args) {
    const auto t0 = std::chrono::steady_clock::now();
    CLI::App app{"numerical laboratory for a two-phase age-size cell cycle model"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    unsigned threads = 1;
    double grid_h = 0.0;

    const std::pair<const char*, const char*> subs[] = {
        {"simulate-pdmp", "sample lineages and an ensemble histogram"},
        {"evolve-pde", "march the transport semigroup and track the mass ledger"},
        {"steady-state", "search for the stationary profile and record a verdict"},
        {"resolvent-check", "probe the feedback bounds and the resolvent identity"},
        {"interval-example", "closed-form interval model with measure boundary data"}};
    for (const auto& [name, desc] : subs) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "model configuration file")->required();
        sub->add_option("--seed", seed, "stream seed for anything random");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--threads", threads, "worker threads for the ensemble");
        sub->add_option("--grid-h", grid_h, "override the configured grid step");
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        std::ostringstream sink;
        const int code = app.exit(e, sink, sink);
        if (code == 0) {
            std::fputs(sink.str().c_str(), stdout);
            return 0;
        }
        std::fputs(sink.str().c_str(), stderr);
        return 2;
    }

    std::string sub;
    for (const auto& [name, desc] : subs)
        if (app.got_subcommand(name)) sub = name;

    cliapp::RunContext ctx;
    try {
        ctx.cfg = parse_config(config_path);
        ctx.seed = seed;
        ctx.threads = threads == 0 ? 1 : threads;
        ctx.grid_h = grid_h;
        ctx.grid = make_grid(ctx.cfg, grid_h);
        ctx.out = out_dir;
        std::filesystem::create_directories(ctx.out);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }

    int rc;
    try {
        rc = cliapp::dispatch(sub, ctx);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }

    const double ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
    ojson man;
    man["subcommand"] = sub;
    man["seed"] = seed;
    man["threads"] = ctx.threads;
    if (grid_h > 0.0)
        man["grid_h_override"] = grid_h;
    else
        man["grid_h_override"] = nullptr;
    man["config"] = ctx.cfg.echo;
    man["versions"] = {{"compiler", __VERSION__},
                       {"cli11", CLI11_VERSION},
                       {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                    std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    man["exit_code"] = rc;
    man["wall_time_ms"] = ms;
    ojson sums = ojson::object();
    for (const auto& [name, hex] : ctx.artifacts) sums[name] = hex;
    man["checksums"] = sums;
    write_text((ctx.out / "manifest.json").string(), man.dump(2) + "\n");
    return rc;
}

}  // namespace cyclelab
