#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfbo/cache.hpp"
#include "mfbo/config.hpp"
#include "mfbo/errors.hpp"
#include "mfbo/io.hpp"
#include "mfbo/objectives.hpp"
#include "mfbo/optimizer.hpp"
#include "mfbo/sampling.hpp"
#include "mfbo/sensitivity.hpp"

namespace mfbo::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kEvaluation = 3, kNumerical = 4 };

inline constexpr int kManifestSchemaVersion = 1;

struct Options {
    std::string command;
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::size_t jobs = 1;
    bool resume = false;
    std::vector<std::filesystem::path> runs;  // report inputs
};

/// Output directory: --out, then $MFBO_OUT, then the config's "out" (relative
/// to the config file).
inline std::filesystem::path output_dir(const Options& opt, const ExperimentConfig& cfg) {
    if (opt.out) return *opt.out;
    if (const char* env = std::getenv("MFBO_OUT"); env && *env) return env;
    if (cfg.out) return cfg.resolve(*cfg.out);
    throw ConfigError("no output directory (use --out, MFBO_OUT or the config's \"out\")");
}

namespace detail {

struct Artifact {
    std::string file;
    std::string role;
    int schema_version = 1;
};

inline void write_manifest(const std::filesystem::path& dir, const std::string& command, std::uint64_t seed,
                           const std::vector<Artifact>& artifacts, nlohmann::json extra = nlohmann::json::object()) {
    // Commands sharing a directory (sample then evaluate) extend one manifest.
    nlohmann::json m = nlohmann::json::object();
    const auto path = dir / "manifest.json";
    if (std::filesystem::exists(path)) {
        try {
            m = nlohmann::json::parse(io::read_text(path));
        } catch (const nlohmann::json::exception&) {
            m = nlohmann::json::object();
        }
    }
    nlohmann::json files = m.contains("files") && m["files"].is_array() ? m["files"] : nlohmann::json::array();
    auto add = [&](const Artifact& a) {
        nlohmann::json entry{{"file", a.file}, {"role", a.role}, {"schema_version", a.schema_version}};
        for (auto& f : files)
            if (f.value("file", std::string{}) == a.file) return void(f = entry);
        files.push_back(entry);
    };
    for (const auto& a : artifacts) add(a);
    add({"config.json", "config", 1});
    m["schema_version"] = kManifestSchemaVersion;
    m["command"] = command;
    m["seed"] = seed;
    m["files"] = files;
    for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
    io::write_text(dir / "manifest.json", m.dump(2) + "\n");
}

inline void copy_config(const std::filesystem::path& dir, const ExperimentConfig& cfg) {
    io::write_text(dir / "config.json", cfg.text);
}

inline std::uint64_t seed_of(const Options& opt, const ExperimentConfig& cfg) { return opt.seed.value_or(cfg.seed); }

}  // namespace detail

// --- sample ----------------------------------------------------------------

inline int cmd_sample(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
    if (!cfg.sampler) throw ConfigError("config has no 'sampler' section");
    const auto& s = *cfg.sampler;
    Bounds bounds;
    if (s.parameters) bounds = *s.parameters;
    else if (cfg.objective) bounds = make_objective(cfg)->spec().bounds;
    else throw ConfigError("sampler needs 'parameters' or an objective");
    const auto dir = output_dir(opt, cfg);
    const SaltelliSet set = saltelli_sample(bounds.dim(), s.n_base, s.skip);
    write_saltelli_dir(dir, set, bounds, s.skip);
    detail::copy_config(dir, cfg);
    auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    manifest["command"] = "sample";
    manifest["files"].push_back({{"file", "config.json"}, {"role", "config"}, {"schema_version", 1}});
    io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    log << "designs: " << set.total_count() << " (n_base " << s.n_base << ", D " << bounds.dim() << ")\n";
    return kOk;
}

// --- evaluate ----------------------------------------------------------------

inline int cmd_evaluate(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
    if (!cfg.evaluate) throw ConfigError("config has no 'evaluate' section");
    const auto& e = *cfg.evaluate;
    const auto dir = output_dir(opt, cfg);
    std::filesystem::create_directories(dir);
    const ObjectivePtr inner = make_objective(cfg, dir);
    const auto& spec = inner->spec();
    const DesignMatrix X = read_design_csv(cfg.resolve(e.designs));
    if (X.cols() != spec.dim) throw DimensionMismatch("design file has " + std::to_string(X.cols()) + " columns, objective needs " + std::to_string(spec.dim));
    std::vector<std::size_t> fids = e.fidelities.empty() ? std::vector<std::size_t>{spec.fidelities} : e.fidelities;
    for (auto m : fids)
        if (m == 0 || m > spec.fidelities) throw ConfigError("evaluate.fidelities entries must lie in 1.." + std::to_string(spec.fidelities));

    const auto cache_path = e.cache ? cfg.resolve(*e.cache) : dir / "cache.jsonl";
    auto cache = std::make_shared<EvaluationCache>(cache_path);
    auto cached = std::make_shared<CachedObjective>(inner, cache);

    struct Job {
        std::size_t row, m;
    };
    std::vector<Job> jobs;
    for (auto m : fids)
        for (std::size_t r = 0; r < X.rows(); ++r) jobs.push_back({r, m - 1});
    std::vector<EvaluationRecord> out(jobs.size());
    auto run = [&](std::size_t k) { out[k] = mfbo::detail::evaluate_record(*cached, X.row(jobs[k].row), jobs[k].m, spec.cost[jobs[k].m]); };
    const std::size_t workers = std::clamp<std::size_t>(opt.jobs, 1, std::max<std::size_t>(jobs.size(), 1));
    if (workers == 1) {
        for (std::size_t k = 0; k < jobs.size(); ++k) run(k);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < workers; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t k = t; k < jobs.size(); k += workers) run(k);
            });
        for (auto& th : pool) th.join();
    }

    cache->compact();

    std::string csv = "row,fidelity,ok,value\n";
    std::string failures;
    std::size_t ok = 0;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        const auto& r = out[k];
        csv += std::to_string(jobs[k].row) + "," + std::to_string(jobs[k].m + 1) + "," + (r.ok ? "1" : "0") + "," +
               (r.ok ? io::format_double(r.value) : std::string{}) + "\n";
        if (r.ok) ++ok;
        else failures += nlohmann::json{{"row", jobs[k].row}, {"fidelity", jobs[k].m + 1}, {"error", r.error}}.dump() + "\n";
    }
    io::write_text(dir / "responses.csv", csv);
    io::write_text(dir / "failures.jsonl", failures);
    detail::copy_config(dir, cfg);
    detail::write_manifest(dir, "evaluate", detail::seed_of(opt, cfg),
                           {{"responses.csv", "responses"}, {"failures.jsonl", "failures"}, {"cache.jsonl", "cache"}},
                           {{"objective", spec_json(spec)}});
    log << "evaluations: " << jobs.size() << " ok: " << ok << " failed: " << jobs.size() - ok
        << " invocations: " << cached->misses() << " cache hits: " << cached->hits() << "\n";
    if (ok == 0 && !out.empty())
        throw EvaluationError("all " + std::to_string(jobs.size()) + " evaluations failed; first: " + out.front().error);
    return kOk;
}

// --- analyze -----------------------------------------------------------------

/// Maps a responses table onto a Saltelli set (rows in stacked order A, B,
/// AB_1..AB_D) for one fidelity.
inline SaltelliEvaluations responses_to_evaluations(const io::CsvTable& t, const SaltelliSet& set,
                                                    std::optional<std::size_t> fidelity) {
    const auto c_row = t.column("row");
    const auto c_fid = t.column("fidelity");
    const auto c_ok = t.column("ok");
    const auto c_val = t.column("value");
    std::size_t fid = 0;
    for (const auto& r : t.rows) fid = std::max<std::size_t>(fid, static_cast<std::size_t>(io::parse_double(r[c_fid])));
    if (fidelity) fid = *fidelity;
    const std::size_t N = set.base_count;
    const std::size_t D = set.dim();
    const std::size_t total = set.total_count();
    Eigen::VectorXd y = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(total), std::nan(""));
    std::size_t seen = 0;
    for (const auto& r : t.rows) {
        if (static_cast<std::size_t>(io::parse_double(r[c_fid])) != fid) continue;
        const auto row = static_cast<std::size_t>(io::parse_double(r[c_row]));
        if (row >= total) throw ConfigError("response row " + std::to_string(row) + " exceeds the " + std::to_string(total) + " Saltelli designs");
        if (r[c_ok] != "1") throw ConfigError("response row " + std::to_string(row) + " failed; sensitivity analysis needs every design");
        y[static_cast<Eigen::Index>(row)] = io::parse_double(r[c_val]);
        ++seen;
    }
    if (seen != total || !y.allFinite())
        throw ConfigError("responses cover " + std::to_string(seen) + " designs at fidelity " + std::to_string(fid) +
                          ", Saltelli set has " + std::to_string(total));
    SaltelliEvaluations ev;
    const auto n = static_cast<Eigen::Index>(N);
    ev.f_A = y.segment(0, n);
    ev.f_B = y.segment(n, n);
    for (std::size_t i = 0; i < D; ++i) ev.f_AB.push_back(y.segment(static_cast<Eigen::Index>(2 + i) * n, n));
    ev.fidelity = static_cast<int>(fid);
    return ev;
}

inline std::vector<std::size_t> default_grid(std::size_t n) {
    std::vector<std::size_t> g;
    for (std::size_t k = 8; k < n; k *= 2) g.push_back(k);
    g.push_back(n);
    return g;
}

inline int cmd_analyze(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
    if (!cfg.analyze) throw ConfigError("config has no 'analyze' section");
    const auto& a = *cfg.analyze;
    const auto dir = output_dir(opt, cfg);
    Bounds bounds;
    const SaltelliSet set = read_saltelli_dir(cfg.resolve(a.samples), &bounds);
    const auto table = io::read_csv(cfg.resolve(a.responses));
    SaltelliEvaluations ev = responses_to_evaluations(table, set, a.fidelity);
    if (cfg.objective) ev.objective = make_objective(cfg, dir)->spec().name;
    const auto grid = a.grid.empty() ? default_grid(set.base_count) : a.grid;
    const auto seed = detail::seed_of(opt, cfg);
    const auto names = bounds.names();
    const auto reports = convergence_scan(ev, grid, a.n_boot, a.level, seed, names);
    const SensitivityReport full = bootstrap_ci(ev, a.n_boot, a.level, seed, names);
    nlohmann::json rep = report_json(full);
    rep["fidelity"] = ev.fidelity;
    io::write_text(dir / "sensitivity.json", rep.dump(2) + "\n");
    io::write_text(dir / "convergence.csv", reports_long_csv(reports));
    detail::copy_config(dir, cfg);
    detail::write_manifest(dir, "analyze", seed, {{"sensitivity.json", "report"}, {"convergence.csv", "convergence"}});
    for (const auto& p : full.parameters)
        log << p.name << ": S1 " << p.s1 << " [" << p.ci_s1.lo << ", " << p.ci_s1.hi << "]  ST " << p.st << " ["
            << p.ci_st.lo << ", " << p.ci_st.hi << "]\n";
    return kOk;
}

// --- optimize ----------------------------------------------------------------

inline LoopOptions loop_options(const ExperimentConfig& cfg, const Options& opt, const ObjectiveSpec& spec) {
    if (!cfg.optimize) throw ConfigError("config has no 'optimize' section");
    const auto& o = *cfg.optimize;
    LoopOptions lo;
    lo.kernel = o.kernel;
    lo.acquisition = o.acquisition;
    lo.beta = o.beta;
    lo.seed = detail::seed_of(opt, cfg);
    lo.fit_restarts = o.fit_restarts;
    lo.per_fidelity_noise = o.per_fidelity_noise;
    lo.estimate_rho = o.estimate_rho;
    lo.rho = o.rho;
    lo.omega = o.omega;
    lo.maximize.pool = o.pool;
    lo.maximize.starts = o.starts;
    lo.maximize.jobs = opt.jobs;
    lo.promote = o.promote;
    lo.cost = spec.cost;
    if (is_variable_fidelity(o.acquisition)) {
        if (spec.fidelities < 2) throw ConfigError(to_string(o.acquisition) + " needs a multi-fidelity objective");
        lo.budget = o.budget;
        const double cheapest = *std::min_element(spec.cost.begin(), spec.cost.end());
        lo.iterations = o.iterations.value_or(static_cast<std::size_t>(std::floor(o.budget / cheapest + 1e-9)));
    } else {
        const double c = spec.cost.back();
        lo.iterations = o.iterations.value_or(static_cast<std::size_t>(std::floor(o.budget / c + 1e-9)));
        lo.budget = o.budget;
    }
    return lo;
}

inline int cmd_optimize(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
    if (!cfg.optimize) throw ConfigError("config has no 'optimize' section");
    const auto& o = *cfg.optimize;
    const auto dir = output_dir(opt, cfg);
    std::filesystem::create_directories(dir);
    const ObjectivePtr f = make_objective(cfg, dir);
    const auto& spec = f->spec();
    LoopOptions lo = loop_options(cfg, opt, spec);
    const bool mf = is_variable_fidelity(o.acquisition);

    InitialDesignOptions init;
    init.budget = o.initial_budget;
    init.hf_fraction = o.hf_fraction;
    init.cost = spec.cost;
    init.seed = lo.seed;
    init.jobs = opt.jobs;
    init.top_only = !mf;
    std::vector<std::size_t> expected(spec.fidelities, 0);
    if (init.top_only) expected.back() = initial_counts({spec.cost.back()}, init.budget, 1.0)[0];
    else expected = initial_counts(spec.cost, init.budget, init.hf_fraction);
    std::size_t expected_total = 0;
    for (auto n : expected) expected_total += n;

    const auto history_path = dir / "history.jsonl";
    RunHistory history;
    bool resumed = false;
    if (opt.resume && std::filesystem::exists(history_path)) {
        history = read_history_jsonl(history_path, spec);
        if (history.count("initial") == expected_total) {
            resumed = true;
        } else {
            history = {};
        }
    }
    // Rewrite the file from what survived (drops a torn final line).
    io::write_text(history_path, "");
    for (const auto& r : history.records) append_record(history_path, r);
    auto persist = [&](const EvaluationRecord& r) { append_record(history_path, r); };
    if (!resumed) history = build_initial_doe(*f, init, persist);
    lo.on_record = persist;

    detail::copy_config(dir, cfg);
    const RunResult res = mf ? run_mfbo(*f, history, lo) : run_bo(*f, history, lo);

    io::write_text(dir / "history.csv", history_csv(res.history, spec.bounds.names()));
    nlohmann::json rec = recommendation_json(res.recommendation, res.ledger);
    const Eigen::VectorXd phys = scale_point(res.recommendation.x, spec.bounds);
    rec["x_physical"] = std::vector<double>(phys.begin(), phys.end());
    rec["parameters"] = spec.bounds.names();
    io::write_text(dir / "recommendation.json", rec.dump(2) + "\n");
    detail::write_manifest(dir, "optimize", lo.seed,
                           {{"history.jsonl", "history"}, {"history.csv", "history_table"}, {"recommendation.json", "recommendation"}},
                           {{"objective", spec_json(spec)},
                            {"kernel", to_string(o.kernel)},
                            {"acquisition", to_string(o.acquisition)},
                            {"initial_counts", expected}});
    log << (resumed ? "resumed; " : "") << "evaluations: " << res.history.size() << " (initial " << res.history.count("initial")
        << ", optimize " << res.history.count("optimize") << ", promotion " << res.history.count("promotion")
        << "); spent " << res.ledger.spent << "; best " << res.recommendation.y << " (" << res.recommendation.rule << ")\n";
    return kOk;
}

// --- report ------------------------------------------------------------------

struct RunSummary {
    std::string name;
    std::string objective;
    std::string kernel;
    std::string acquisition;
    std::uint64_t seed = 0;
    RunHistory history;
    std::optional<double> known_optimum;
    Sense sense = Sense::maximize;
};

inline RunSummary load_run(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "manifest.json")) throw ConfigError(dir.string() + ": no manifest.json (not a run directory)");
    const auto m = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    if (m.value("command", std::string{}) != "optimize") throw ConfigError(dir.string() + ": not an optimize run");
    RunSummary r;
    r.name = dir.filename().string();
    if (r.name.empty()) r.name = dir.parent_path().filename().string();
    const auto& obj = m.at("objective");
    r.objective = obj.at("name").get<std::string>() + "@" + obj.at("version").get<std::string>();
    r.kernel = m.at("kernel").get<std::string>();
    r.acquisition = m.at("acquisition").get<std::string>();
    r.seed = m.at("seed").get<std::uint64_t>();
    if (obj.contains("known_optimum")) r.known_optimum = obj.at("known_optimum").get<double>();
    r.sense = sense_from_string(obj.at("sense").get<std::string>());
    ObjectiveSpec spec;
    spec.name = obj.at("name").get<std::string>();
    spec.dim = obj.at("dim").get<std::size_t>();
    spec.fidelities = obj.at("fidelities").get<std::size_t>();
    spec.sense = r.sense;
    r.history = read_history_jsonl(dir / "history.jsonl", spec);
    return r;
}

/// Minimal SVG of cumulative best versus optimization-phase cost.
inline std::string curves_svg(const std::vector<RunSummary>& runs) {
    const double W = 640, H = 400, L = 60, R = 170, T = 20, B = 40;
    double xmax = 0, ymin = INFINITY, ymax = -INFINITY;
    std::vector<std::vector<std::pair<double, double>>> pts;
    for (const auto& r : runs) {
        std::vector<std::pair<double, double>> p;
        const auto best = r.history.cumulative_best();
        double base = 0;
        for (const auto& rec : r.history.records)
            if (rec.phase == "initial") base = rec.cumulative_cost;
        for (std::size_t k = 0; k < best.size(); ++k) {
            if (std::isnan(best[k]) || r.history.records[k].phase == "initial") continue;
            const double c = r.history.records[k].cumulative_cost - base;
            p.emplace_back(c, best[k]);
            xmax = std::max(xmax, c);
            ymin = std::min(ymin, best[k]);
            ymax = std::max(ymax, best[k]);
        }
        pts.push_back(std::move(p));
    }
    if (!(xmax > 0)) xmax = 1;
    if (!(ymax > ymin)) {
        ymin = std::isfinite(ymin) ? ymin - 0.5 : 0;
        ymax = ymin + 1;
    }
    auto sx = [&](double x) { return L + (W - L - R) * x / xmax; };
    auto sy = [&](double y) { return H - B - (H - T - B) * (y - ymin) / (ymax - ymin); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", v);
        return std::string(buf);
    };
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<line x1=\"" + num(L) + "\" y1=\"" + num(H - B) + "\" x2=\"" + num(W - R) + "\" y2=\"" + num(H - B) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + num(L) + "\" y1=\"" + num(T) + "\" x2=\"" + num(L) + "\" y2=\"" + num(H - B) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num((L + W - R) / 2) + "\" y=\"" + num(H - 8) + "\" text-anchor=\"middle\" font-size=\"12\">cost (HF equivalents)</text>\n";
    s += "<text x=\"14\" y=\"" + num((T + H - B) / 2) + "\" font-size=\"12\" transform=\"rotate(-90 14 " + num((T + H - B) / 2) + ")\" text-anchor=\"middle\">best HF value</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = xmax * k / 4, yv = ymin + (ymax - ymin) * k / 4;
        s += "<text x=\"" + num(sx(xv)) + "\" y=\"" + num(H - B + 14) + "\" text-anchor=\"middle\" font-size=\"10\">" + num(xv) + "</text>\n";
        s += "<text x=\"" + num(L - 4) + "\" y=\"" + num(sy(yv) + 3) + "\" text-anchor=\"end\" font-size=\"10\">" + num(yv) + "</text>\n";
    }
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const char* col = colors[i % 8];
        std::string poly;
        double prev_y = NAN;
        for (const auto& [x, y] : pts[i]) {
            if (!std::isnan(prev_y)) poly += num(sx(x)) + "," + num(sy(prev_y)) + " ";
            poly += num(sx(x)) + "," + num(sy(y)) + " ";
            prev_y = y;
        }
        if (!poly.empty()) s += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" stroke-width=\"1.5\" points=\"" + poly + "\"/>\n";
        s += "<text x=\"" + num(W - R + 8) + "\" y=\"" + num(T + 14 * (i + 1)) + "\" font-size=\"10\" fill=\"" + col + "\">" +
             runs[i].name + " (" + runs[i].acquisition + "/" + runs[i].kernel + ")</text>\n";
    }
    s += "</svg>\n";
    return s;
}

inline int cmd_report(const ExperimentConfig& cfg, const Options& opt, std::ostream& log) {
    std::vector<std::filesystem::path> dirs = opt.runs;
    if (dirs.empty() && cfg.report)
        for (const auto& p : cfg.report->runs) dirs.push_back(cfg.resolve(p));
    if (dirs.empty()) throw ConfigError("report needs at least one run directory");
    const double within = cfg.report ? cfg.report->within_percent : 1.0;
    std::vector<RunSummary> runs;
    for (const auto& d : dirs) runs.push_back(load_run(d));
    for (const auto& r : runs)
        if (r.objective != runs.front().objective)
            throw ConfigError("runs use different objectives: " + runs.front().objective + " vs " + r.objective);
    const Sense sense = runs.front().sense;
    auto better = [&](double a, double b) { return sense == Sense::maximize ? a > b : a < b; };

    std::optional<double> best_known = runs.front().known_optimum;
    if (!best_known) {
        for (const auto& r : runs)
            for (double v : r.history.cumulative_best())
                if (!std::isnan(v) && (!best_known || better(v, *best_known))) best_known = v;
    }

    std::string curves = "run,acquisition,kernel,seed,index,fidelity,cumulative_cost,optimization_cost,best_hf\n";
    std::string summary = "acquisition,kernel,run,seed,best_value,best_known,cost_to_within,within_percent,optimization_cost,evaluations\n";
    for (const auto& r : runs) {
        const auto best = r.history.cumulative_best();
        double base = 0;
        for (const auto& rec : r.history.records)
            if (rec.phase == "initial") base = rec.cumulative_cost;
        std::optional<double> reach;
        const double tol = best_known ? within / 100.0 * std::max(std::abs(*best_known), 1e-300) : 0.0;
        for (std::size_t k = 0; k < best.size(); ++k) {
            const auto& rec = r.history.records[k];
            const double oc = rec.phase == "initial" ? 0.0 : rec.cumulative_cost - base;
            curves += r.name + "," + r.acquisition + "," + r.kernel + "," + std::to_string(r.seed) + "," + std::to_string(rec.index) +
                      "," + std::to_string(rec.fidelity + 1) + "," + io::format_double(rec.cumulative_cost) + "," +
                      io::format_double(oc) + "," + (std::isnan(best[k]) ? std::string{} : io::format_double(best[k])) + "\n";
            if (!reach && best_known && !std::isnan(best[k]) && std::abs(*best_known - best[k]) <= tol) reach = oc;
        }
        const double final_best = best.empty() ? NAN : best.back();
        summary += r.acquisition + "," + r.kernel + "," + r.name + "," + std::to_string(r.seed) + "," +
                   io::format_double(final_best) + "," + (best_known ? io::format_double(*best_known) : std::string{}) + "," +
                   (reach ? io::format_double(*reach) : std::string{}) + "," + io::format_double(within) + "," +
                   io::format_double(r.history.optimization_cost()) + "," + std::to_string(r.history.size()) + "\n";
    }
    const auto dir = output_dir(opt, cfg);
    io::write_text(dir / "curves.csv", curves);
    io::write_text(dir / "summary.csv", summary);
    io::write_text(dir / "curves.svg", curves_svg(runs));
    detail::copy_config(dir, cfg);
    detail::write_manifest(dir, "report", detail::seed_of(opt, cfg),
                           {{"curves.csv", "curves"}, {"summary.csv", "summary"}, {"curves.svg", "plot"}});
    log << "runs: " << runs.size() << "\n";
    return kOk;
}

// --- entry point -------------------------------------------------------------

inline int dispatch(const Options& opt, std::ostream& log) {
    ExperimentConfig cfg;
    if (!opt.config.empty()) cfg = load_config(opt.config);
    else if (opt.command != "report") throw ConfigError("--config is required");
    else cfg = parse_config("{}");
    if (opt.command == "sample") return cmd_sample(cfg, opt, log);
    if (opt.command == "evaluate") return cmd_evaluate(cfg, opt, log);
    if (opt.command == "analyze") return cmd_analyze(cfg, opt, log);
    if (opt.command == "optimize") return cmd_optimize(cfg, opt, log);
    if (opt.command == "report") return cmd_report(cfg, opt, log);
    throw ConfigError("unknown command '" + opt.command + "'");
}

/// Runs one CLI invocation; exceptions map to exit codes
/// 2 (config), 3 (evaluation), 4 (numerical).
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Sensitivity analysis and (multi-fidelity) Bayesian optimization"};
    app.require_subcommand(1);
    Options opt;
    std::uint64_t seed = 0;
    std::string out;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "experiment config (JSON)");
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber);
        sub->add_flag("--resume", opt.resume, "continue from an existing history (optimize)");
    };
    for (const char* name : {"sample", "evaluate", "analyze", "optimize"}) add_common(app.add_subcommand(name));
    auto* report = app.add_subcommand("report", "compare optimization runs");
    add_common(report);
    report->add_option("runs", opt.runs, "run directories");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, log, err);
        return code == 0 ? kOk : kConfig;
    }
    opt.command = app.get_subcommands().front()->get_name();
    auto* sub = app.get_subcommands().front();
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--out")) opt.out = out;
    try {
        return dispatch(opt, log);
    } catch (const EvaluationError& e) {
        err << "evaluation error: " << e.what() << "\n";
        return kEvaluation;
    } catch (const InsufficientData& e) {
        err << "evaluation error: " << e.what() << "\n";
        return kEvaluation;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumerical;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const nlohmann::json::exception& e) {
        err << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

}  // namespace mfbo::cli
