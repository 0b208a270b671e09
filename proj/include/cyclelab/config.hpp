#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "boundary_ops.hpp"
#include "io.hpp"

namespace cyclelab {

using ojson = nlohmann::ordered_json;

struct ModelConfig {
    GrowthModel growth = GrowthModel::constant(1.0);
    DurationModel duration = DurationModel::exponential(1.0);
    double t_b = 0.2;
    Tracking tracking = Tracking::single_line;

    double h = 1.0 / 64;
    double a_max = 2.0;
    double s_min = 0.0;
    double s_max = 4.0;

    double t_end = 1.0;
    std::vector<double> lambdas{0.5, 1.0, 2.0};
    std::size_t n_cells = 100000;
    double tolerance = 1e-10;
    std::size_t max_iterations = 500;
    double residual_tol = 1e-8;
    double mass_tol = 1e-10;

    /* initial bump, resolved against the grid box */
    double s_center = 2.0;
    double s_width = 0.5;
    double a_width = 0.25;

    ojson echo;  /* fully resolved configuration; re-parses to itself */
};

namespace detail {

struct SchemaScan {
    std::vector<std::string> bad;

    void fail(const std::string& path, const std::string& why) {
        bad.push_back(path + ": " + why);
    }

    static std::string join(const std::string& base, const std::string& key) {
        return base.empty() ? key : base + "." + key;
    }

    void known_keys(const ojson& obj, const std::string& base,
                    std::initializer_list<const char*> allowed) {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            bool hit = false;
            for (const char* k : allowed)
                if (it.key() == k) { hit = true; break; }
            if (!hit) fail(join(base, it.key()), "unknown key");
        }
    }

    const ojson* section(const ojson& obj, const std::string& base, const char* key,
                         bool required) {
        if (!obj.contains(key)) {
            if (required) fail(join(base, key), "required section is missing");
            return nullptr;
        }
        const ojson& v = obj.at(key);
        if (!v.is_object()) {
            fail(join(base, key), "must be an object");
            return nullptr;
        }
        return &v;
    }

    double number(const ojson& obj, const std::string& base, const char* key, double def,
                  bool required = false) {
        if (!obj.contains(key)) {
            if (required) fail(join(base, key), "required value is missing");
            return def;
        }
        const ojson& v = obj.at(key);
        if (!v.is_number()) {
            fail(join(base, key), "must be a number");
            return def;
        }
        const double x = v.get<double>();
        if (!std::isfinite(x)) {
            fail(join(base, key), "must be finite");
            return def;
        }
        return x;
    }

    double positive(const ojson& obj, const std::string& base, const char* key, double def,
                    bool required = false) {
        const std::size_t before = bad.size();
        const double x = number(obj, base, key, def, required);
        if (bad.size() == before && obj.contains(key) && !(x > 0.0)) {
            fail(join(base, key), "must be positive");
            return def;
        }
        return x;
    }

    std::size_t count(const ojson& obj, const std::string& base, const char* key,
                      std::size_t def) {
        const std::size_t before = bad.size();
        const double x = number(obj, base, key, static_cast<double>(def));
        if (bad.size() != before || !obj.contains(key)) return def;
        if (!(x >= 1.0) || x != std::floor(x)) {
            fail(join(base, key), "must be a positive integer");
            return def;
        }
        return static_cast<std::size_t>(x);
    }

    std::string word(const ojson& obj, const std::string& base, const char* key,
                     const std::string& def) {
        if (!obj.contains(key)) return def;
        const ojson& v = obj.at(key);
        if (!v.is_string()) {
            fail(join(base, key), "must be a string");
            return def;
        }
        return v.get<std::string>();
    }
};

inline void parse_growth(SchemaScan& sc, const ojson& j, ModelConfig& cfg, ojson& echo) {
    const std::size_t before = sc.bad.size();
    sc.known_keys(j, "model.growth", {"kind", "rate", "pivot"});
    const std::string kind = sc.word(j, "model.growth", "kind", "constant");
    if (kind != "constant" && kind != "linear") {
        sc.fail("model.growth.kind", "must be \"constant\" or \"linear\"");
        return;
    }
    const double rate = sc.positive(j, "model.growth", "rate", 1.0);
    const double pivot =
        sc.number(j, "model.growth", "pivot", kind == "constant" ? 0.0 : 1.0);
    if (sc.bad.size() != before) return;
    try {
        cfg.growth = kind == "constant" ? GrowthModel::constant(rate, pivot)
                                        : GrowthModel::linear(rate, pivot);
    } catch (const Error& e) {
        sc.fail("model.growth", e.what());
        return;
    }
    echo["kind"] = kind;
    echo["rate"] = rate;
    echo["pivot"] = pivot;
}

inline void parse_duration(SchemaScan& sc, const ojson& j, ModelConfig& cfg, ojson& echo) {
    const std::string kind = sc.word(j, "model.duration", "kind", "");
    ojson out;
    out["kind"] = kind;
    try {
        if (kind == "exponential") {
            sc.known_keys(j, "model.duration", {"kind", "p"});
            const double p = sc.positive(j, "model.duration", "p", 1.0, true);
            out["p"] = p;
            cfg.duration = DurationModel::exponential(p);
        } else if (kind == "gamma") {
            sc.known_keys(j, "model.duration", {"kind", "shape", "rate"});
            const double shape = sc.positive(j, "model.duration", "shape", 1.0, true);
            const double rate = sc.positive(j, "model.duration", "rate", 1.0, true);
            out["shape"] = shape;
            out["rate"] = rate;
            cfg.duration = DurationModel::gamma(shape, rate);
        } else if (kind == "lognormal") {
            sc.known_keys(j, "model.duration", {"kind", "mu", "sigma"});
            const double mu = sc.number(j, "model.duration", "mu", 0.0, true);
            const double sigma = sc.positive(j, "model.duration", "sigma", 1.0, true);
            out["mu"] = mu;
            out["sigma"] = sigma;
            cfg.duration = DurationModel::lognormal(mu, sigma);
        } else if (kind == "uniform") {
            sc.known_keys(j, "model.duration", {"kind", "lo", "hi"});
            const double lo = sc.number(j, "model.duration", "lo", 0.0, true);
            const double hi = sc.number(j, "model.duration", "hi", 1.0, true);
            out["lo"] = lo;
            out["hi"] = hi;
            cfg.duration = DurationModel::uniform(lo, hi);
        } else {
            sc.fail("model.duration.kind",
                    "must be \"exponential\", \"gamma\", \"lognormal\" or \"uniform\"");
            return;
        }
    } catch (const Error& e) {
        sc.fail("model.duration", e.what());
        return;
    }
    echo = std::move(out);
}

}  // namespace detail

inline ModelConfig parse_config_json(const ojson& root) {
    detail::SchemaScan sc;
    ModelConfig cfg;
    ojson growth_echo, duration_echo;
    std::string tracking = "single_line";

    if (!root.is_object()) throw SchemaViolation("configuration must be a JSON object");
    sc.known_keys(root, "", {"model", "grid", "run"});

    if (const ojson* model = sc.section(root, "", "model", true)) {
        sc.known_keys(*model, "model", {"growth", "duration", "T_B", "tracking"});
        cfg.t_b = sc.positive(*model, "model", "T_B", 0.2, true);
        tracking = sc.word(*model, "model", "tracking", "single_line");
        if (tracking == "single_line") {
            cfg.tracking = Tracking::single_line;
        } else if (tracking == "bell") {
            cfg.tracking = Tracking::bell;
        } else {
            sc.fail("model.tracking", "must be \"single_line\" or \"bell\"");
        }
        if (const ojson* growth = sc.section(*model, "model", "growth", true))
            detail::parse_growth(sc, *growth, cfg, growth_echo);
        if (const ojson* duration = sc.section(*model, "model", "duration", true))
            detail::parse_duration(sc, *duration, cfg, duration_echo);
    }

    if (const ojson* grid = sc.section(root, "", "grid", true)) {
        sc.known_keys(*grid, "grid", {"h", "a_max", "s_min", "s_max"});
        cfg.h = sc.positive(*grid, "grid", "h", cfg.h, true);
        cfg.a_max = sc.positive(*grid, "grid", "a_max", cfg.a_max, true);
        cfg.s_min = sc.number(*grid, "grid", "s_min", 0.0);
        cfg.s_max = sc.number(*grid, "grid", "s_max", cfg.s_max, true);
        if (!(cfg.s_max > cfg.s_min)) sc.fail("grid.s_max", "must exceed grid.s_min");
        if (cfg.t_b > 0.0 && cfg.a_max <= cfg.t_b)
            sc.fail("grid.a_max", "must exceed model.T_B");
    }

    /* bump defaults depend on the box, resolved before any run overrides */
    cfg.s_center = 0.5 * (cfg.s_min + cfg.s_max);
    cfg.s_width = 0.125 * (cfg.s_max - cfg.s_min);
    cfg.a_width = 0.125 * cfg.a_max;

    if (const ojson* run = sc.section(root, "", "run", false)) {
        sc.known_keys(*run, "run",
                      {"t_end", "lambdas", "n_cells", "tolerance", "max_iterations",
                       "residual_tol", "mass_tol", "initial"});
        cfg.t_end = sc.positive(*run, "run", "t_end", cfg.t_end);
        cfg.n_cells = sc.count(*run, "run", "n_cells", cfg.n_cells);
        cfg.tolerance = sc.positive(*run, "run", "tolerance", cfg.tolerance);
        cfg.max_iterations = sc.count(*run, "run", "max_iterations", cfg.max_iterations);
        cfg.residual_tol = sc.positive(*run, "run", "residual_tol", cfg.residual_tol);
        cfg.mass_tol = sc.positive(*run, "run", "mass_tol", cfg.mass_tol);
        if (run->contains("lambdas")) {
            const ojson& arr = run->at("lambdas");
            if (!arr.is_array() || arr.empty()) {
                sc.fail("run.lambdas", "must be a non-empty array of numbers");
            } else {
                std::vector<double> ls;
                for (std::size_t i = 0; i < arr.size(); ++i) {
                    const std::string path = "run.lambdas[" + std::to_string(i) + "]";
                    const ojson& v = arr.at(i);
                    if (!v.is_number()) {
                        sc.fail(path, "must be a number");
                    } else if (const double x = v.get<double>();
                               !std::isfinite(x) || !(x > 0.0)) {
                        sc.fail(path, "must be positive");
                    } else {
                        ls.push_back(x);
                    }
                }
                if (ls.size() == arr.size()) cfg.lambdas = std::move(ls);
            }
        }
        if (const ojson* init = sc.section(*run, "run", "initial", false)) {
            sc.known_keys(*init, "run.initial", {"s_center", "s_width", "a_width"});
            cfg.s_center = sc.number(*init, "run.initial", "s_center", cfg.s_center);
            cfg.s_width = sc.positive(*init, "run.initial", "s_width", cfg.s_width);
            cfg.a_width = sc.positive(*init, "run.initial", "a_width", cfg.a_width);
        }
    }

    if (!sc.bad.empty()) throw SchemaViolation(std::move(sc.bad));

    ojson& model = cfg.echo["model"];
    model["growth"] = std::move(growth_echo);
    model["duration"] = std::move(duration_echo);
    model["T_B"] = cfg.t_b;
    model["tracking"] = tracking;
    ojson& grid = cfg.echo["grid"];
    grid["h"] = cfg.h;
    grid["a_max"] = cfg.a_max;
    grid["s_min"] = cfg.s_min;
    grid["s_max"] = cfg.s_max;
    ojson& run = cfg.echo["run"];
    run["t_end"] = cfg.t_end;
    run["lambdas"] = cfg.lambdas;
    run["n_cells"] = static_cast<std::uint64_t>(cfg.n_cells);
    run["tolerance"] = cfg.tolerance;
    run["max_iterations"] = static_cast<std::uint64_t>(cfg.max_iterations);
    run["residual_tol"] = cfg.residual_tol;
    run["mass_tol"] = cfg.mass_tol;
    ojson& init = run["initial"];
    init["s_center"] = cfg.s_center;
    init["s_width"] = cfg.s_width;
    init["a_width"] = cfg.a_width;
    return cfg;
}

inline ModelConfig parse_config(const std::string& path) {
    const std::string text = read_text(path);
    ojson root;
    try {
        root = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaViolation(path + ": " + e.what());
    }
    return parse_config_json(root);
}

inline std::shared_ptr<const CharGrid> make_grid(const ModelConfig& cfg,
                                                 double h_override = 0.0) {
    const double hr = h_override > 0.0 ? h_override : cfg.h;
    return std::make_shared<const CharGrid>(cfg.growth, cfg.t_b, hr, cfg.a_max, cfg.s_min,
                                            cfg.s_max);
}

inline ModelOperators make_operators(const ModelConfig& cfg,
                                     std::shared_ptr<const CharGrid> grid) {
    return ModelOperators(std::move(grid), cfg.duration, cfg.tracking);
}

}  // namespace cyclelab
