#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mfbo/acquisition.hpp"
#include "mfbo/errors.hpp"
#include "mfbo/external_objective.hpp"
#include "mfbo/gp.hpp"
#include "mfbo/io.hpp"
#include "mfbo/objectives.hpp"
#include "mfbo/optimizer.hpp"
#include "mfbo/sampling.hpp"

namespace mfbo {

/// Experiment description read from a JSON file. Every section is optional
/// until a command needs it; unknown keys are rejected so typos surface.
struct ExperimentConfig {
    nlohmann::json raw;
    std::string text;  // the file as read, copied verbatim into outputs
    std::filesystem::path base_dir;
    std::uint64_t seed = 0;
    std::optional<std::string> out;

    struct Objective {
        std::string benchmark;  // registry name, or empty for external
        double target_correlation = 0.68;
        std::optional<ObjectiveSpec> spec;  // external objectives
        std::optional<ExternalConfig> external;
        std::vector<double> cost;  // overrides the objective's table when set
    };
    std::optional<Objective> objective;

    struct Sampler {
        std::size_t n_base = 0;
        std::uint64_t skip = 0;
        std::optional<Bounds> parameters;
    };
    std::optional<Sampler> sampler;

    struct Evaluate {
        std::filesystem::path designs;
        std::vector<std::size_t> fidelities;  // 1-based; empty = highest
        std::optional<std::filesystem::path> cache;
    };
    std::optional<Evaluate> evaluate;

    struct Analyze {
        std::filesystem::path samples;
        std::filesystem::path responses;
        std::optional<std::size_t> fidelity;  // 1-based; default highest present
        std::size_t n_boot = 1000;
        double level = 0.95;
        std::vector<std::size_t> grid;
    };
    std::optional<Analyze> analyze;

    struct Optimize {
        KernelType kernel = KernelType::rbf;
        AcquisitionKind acquisition = AcquisitionKind::logei;
        double beta = 2.0;
        double initial_budget = 10.0;
        double hf_fraction = 0.5;
        double budget = 10.0;
        std::optional<std::size_t> iterations;
        std::size_t fit_restarts = 8;
        bool per_fidelity_noise = false;
        bool estimate_rho = true;
        std::vector<double> rho;
        std::optional<std::pair<std::vector<double>, std::vector<double>>> omega;
        std::size_t pool = 512;
        std::size_t starts = 32;
        bool promote = true;
    };
    std::optional<Optimize> optimize;

    struct Report {
        std::vector<std::filesystem::path> runs;
        double within_percent = 1.0;
    };
    std::optional<Report> report;

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    }

    const Objective& need_objective() const {
        if (!objective) throw ConfigError("config has no 'objective' section");
        return *objective;
    }
};

namespace detail {

inline void only_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys) known = known || it.key() == k;
        if (!known) throw ConfigError("unknown key '" + it.key() + "' in '" + where + "'");
    }
}

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline Bounds parse_parameters(const nlohmann::json& j) {
    if (!j.is_array() || j.empty()) throw ConfigError("'parameters' must be a non-empty array");
    std::vector<Parameter> ps;
    for (const auto& p : j) {
        only_keys(p, "parameters[]", {"name", "lower", "upper", "unit"});
        try {
            ps.push_back(p.get<Parameter>());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad parameter entry: ") + e.what());
        }
    }
    return Bounds(std::move(ps));
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
    using detail::get_or;
    using detail::only_keys;
    ExperimentConfig c;
    c.text = text;
    c.base_dir = base_dir;
    try {
        c.raw = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    const auto& j = c.raw;
    only_keys(j, "config", {"schema_version", "seed", "out", "objective", "sampler", "evaluate", "analyze", "optimize", "report"});
    if (get_or<int>(j, "schema_version", 1) != 1) throw ConfigError("unsupported config schema_version");
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
    if (j.contains("out")) c.out = j.at("out").get<std::string>();

    if (j.contains("objective")) {
        const auto& o = j.at("objective");
        only_keys(o, "objective", {"benchmark", "target_correlation", "cost", "external", "name", "version", "parameters",
                                   "fidelities", "sense"});
        ExperimentConfig::Objective obj;
        obj.cost = get_or<std::vector<double>>(o, "cost", {});
        if (o.contains("benchmark")) {
            obj.benchmark = o.at("benchmark").get<std::string>();
            const auto names = benchmark_names();
            if (std::find(names.begin(), names.end(), obj.benchmark) == names.end())
                throw ConfigError("unknown benchmark '" + obj.benchmark + "'");
            obj.target_correlation = get_or<double>(o, "target_correlation", 0.68);
            if (o.contains("external")) throw ConfigError("objective cannot be both 'benchmark' and 'external'");
        } else if (o.contains("external")) {
            const auto& e = o.at("external");
            only_keys(e, "objective.external", {"command", "workdir", "timeout_seconds", "ea_solid", "delta_max"});
            ExternalConfig ec;
            ec.command = get_or<std::string>(e, "command", "");
            ec.workdir = get_or<std::string>(e, "workdir", "work");
            ec.timeout_seconds = get_or<double>(e, "timeout_seconds", 600.0);
            ec.ea_solid = get_or<double>(e, "ea_solid", 1.0);
            ec.delta_max = get_or<double>(e, "delta_max", 0.0);
            ObjectiveSpec s;
            s.name = get_or<std::string>(o, "name", "external");
            s.version = get_or<std::string>(o, "version", "1");
            if (!o.contains("parameters")) throw ConfigError("external objective needs 'parameters'");
            s.bounds = detail::parse_parameters(o.at("parameters"));
            s.dim = s.bounds.dim();
            s.fidelities = get_or<std::size_t>(o, "fidelities", 1);
            s.cost = obj.cost.empty() ? std::vector<double>(s.fidelities, 1.0) : obj.cost;
            s.sense = sense_from_string(get_or<std::string>(o, "sense", "maximize"));
            s.validate();
            obj.spec = s;
            obj.external = ec;
        } else {
            throw ConfigError("objective needs 'benchmark' or 'external'");
        }
        c.objective = obj;
    }

    if (j.contains("sampler")) {
        const auto& s = j.at("sampler");
        only_keys(s, "sampler", {"n_base", "skip", "parameters"});
        ExperimentConfig::Sampler sm;
        sm.n_base = get_or<std::size_t>(s, "n_base", 0);
        if (sm.n_base < 2) throw ConfigError("sampler.n_base must be >= 2");
        sm.skip = get_or<std::uint64_t>(s, "skip", 0);
        if (s.contains("parameters")) sm.parameters = detail::parse_parameters(s.at("parameters"));
        c.sampler = sm;
    }

    if (j.contains("evaluate")) {
        const auto& e = j.at("evaluate");
        only_keys(e, "evaluate", {"designs", "fidelities", "cache"});
        ExperimentConfig::Evaluate ev;
        ev.designs = get_or<std::string>(e, "designs", "");
        if (ev.designs.empty()) throw ConfigError("evaluate.designs is required");
        ev.fidelities = get_or<std::vector<std::size_t>>(e, "fidelities", {});
        if (e.contains("cache")) ev.cache = e.at("cache").get<std::string>();
        c.evaluate = ev;
    }

    if (j.contains("analyze")) {
        const auto& a = j.at("analyze");
        only_keys(a, "analyze", {"samples", "responses", "fidelity", "n_boot", "level", "grid"});
        ExperimentConfig::Analyze an;
        an.samples = get_or<std::string>(a, "samples", "");
        an.responses = get_or<std::string>(a, "responses", "");
        if (an.samples.empty() || an.responses.empty()) throw ConfigError("analyze needs 'samples' and 'responses'");
        if (a.contains("fidelity")) an.fidelity = a.at("fidelity").get<std::size_t>();
        an.n_boot = get_or<std::size_t>(a, "n_boot", 1000);
        an.level = get_or<double>(a, "level", 0.95);
        an.grid = get_or<std::vector<std::size_t>>(a, "grid", {});
        c.analyze = an;
    }

    if (j.contains("optimize")) {
        const auto& o = j.at("optimize");
        only_keys(o, "optimize", {"kernel", "acquisition", "beta", "initial_budget", "hf_fraction", "budget", "iterations",
                                  "fit_restarts", "per_fidelity_noise", "rho", "omega", "multistart", "promote"});
        ExperimentConfig::Optimize op;
        op.kernel = kernel_from_string(get_or<std::string>(o, "kernel", "rbf"));
        op.acquisition = acquisition_from_string(get_or<std::string>(o, "acquisition", "logei"));
        op.beta = get_or<double>(o, "beta", 2.0);
        op.initial_budget = get_or<double>(o, "initial_budget", 10.0);
        op.hf_fraction = get_or<double>(o, "hf_fraction", 0.5);
        op.budget = get_or<double>(o, "budget", 10.0);
        if (o.contains("iterations")) op.iterations = o.at("iterations").get<std::size_t>();
        op.fit_restarts = get_or<std::size_t>(o, "fit_restarts", 8);
        op.per_fidelity_noise = get_or<bool>(o, "per_fidelity_noise", false);
        op.promote = get_or<bool>(o, "promote", true);
        if (!(op.initial_budget > 0.0) || !(op.budget > 0.0)) throw ConfigError("budgets must be positive");
        if (!(op.beta >= 0.0)) throw ConfigError("beta must be >= 0");
        if (o.contains("rho")) {
            const auto& r = o.at("rho");
            only_keys(r, "optimize.rho", {"mode", "values"});
            const auto mode = get_or<std::string>(r, "mode", "estimate");
            if (mode != "estimate" && mode != "fixed") throw ConfigError("rho.mode must be estimate|fixed");
            op.estimate_rho = mode == "estimate";
            op.rho = get_or<std::vector<double>>(r, "values", {});
        }
        if (o.contains("omega")) {
            const auto& w = o.at("omega");
            only_keys(w, "optimize.omega", {"omega1", "omega2"});
            op.omega = std::make_pair(w.at("omega1").get<std::vector<double>>(), w.at("omega2").get<std::vector<double>>());
        }
        if (o.contains("multistart")) {
            const auto& m = o.at("multistart");
            only_keys(m, "optimize.multistart", {"pool", "starts"});
            op.pool = get_or<std::size_t>(m, "pool", 512);
            op.starts = get_or<std::size_t>(m, "starts", 32);
        }
        c.optimize = op;
    }

    if (j.contains("report")) {
        const auto& r = j.at("report");
        only_keys(r, "report", {"runs", "within_percent"});
        ExperimentConfig::Report rp;
        for (const auto& p : get_or<std::vector<std::string>>(r, "runs", {})) rp.runs.emplace_back(p);
        rp.within_percent = get_or<double>(r, "within_percent", 1.0);
        c.report = rp;
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    return parse_config(io::read_text(path), path.parent_path());
}

/// Builds the configured objective (a benchmark or an external process).
/// Relative external work directories resolve against `workdir_base`.
inline ObjectivePtr make_objective(const ExperimentConfig& c, const std::filesystem::path& workdir_base = {}) {
    const auto& o = c.need_objective();
    if (!o.benchmark.empty()) {
        ObjectivePtr f = make_benchmark(o.benchmark, o.target_correlation);
        if (o.cost.empty()) return f;
        if (o.cost.size() != f->spec().fidelities) throw ConfigError("objective.cost needs one entry per fidelity");
        ObjectiveSpec s = f->spec();
        s.cost = o.cost;
        return std::make_shared<FunctionObjective>(s, [f](const Eigen::VectorXd& x, std::size_t m) { return f->evaluate(x, m); });
    }
    ExternalConfig ec = *o.external;
    ec.command = detail::substitute(ec.command, "{config_dir}", std::filesystem::absolute(c.base_dir).string());
    if (ec.workdir.is_relative() && !workdir_base.empty()) ec.workdir = workdir_base / ec.workdir;
    return std::make_shared<ExternalObjective>(*o.spec, ec);
}

}  // namespace mfbo
