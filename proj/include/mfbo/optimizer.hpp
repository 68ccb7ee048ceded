#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfbo/acquisition.hpp"
#include "mfbo/errors.hpp"
#include "mfbo/gp.hpp"
#include "mfbo/io.hpp"
#include "mfbo/mtgp.hpp"
#include "mfbo/objectives.hpp"
#include "mfbo/sampling.hpp"

namespace mfbo {

inline constexpr int kHistorySchemaVersion = 1;

enum class AcquisitionKind { ei, logei, ucb, vf_logei, vf_ucb };

inline std::string to_string(AcquisitionKind k) {
    switch (k) {
        case AcquisitionKind::ei: return "ei";
        case AcquisitionKind::logei: return "logei";
        case AcquisitionKind::ucb: return "ucb";
        case AcquisitionKind::vf_logei: return "vf-logei";
        case AcquisitionKind::vf_ucb: return "vf-ucb";
    }
    return "?";
}

inline AcquisitionKind acquisition_from_string(const std::string& s) {
    if (s == "ei") return AcquisitionKind::ei;
    if (s == "logei") return AcquisitionKind::logei;
    if (s == "ucb") return AcquisitionKind::ucb;
    if (s == "vf-logei") return AcquisitionKind::vf_logei;
    if (s == "vf-ucb") return AcquisitionKind::vf_ucb;
    throw ConfigError("unknown acquisition '" + s + "' (expected ei|logei|ucb|vf-logei|vf-ucb)");
}

inline bool is_variable_fidelity(AcquisitionKind k) { return k == AcquisitionKind::vf_logei || k == AcquisitionKind::vf_ucb; }

/// One objective evaluation. Fidelity is 0-based; `value` is in the
/// objective's own sense (NaN when the evaluation failed).
struct EvaluationRecord {
    std::size_t index = 0;
    std::string phase = "initial";  // initial | optimize | promotion
    std::size_t iteration = 0;      // 0 for the initial design
    Eigen::VectorXd x;
    std::size_t fidelity = 0;
    double value = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
    std::string error;
    double cost = 0.0;
    double cumulative_cost = 0.0;
    double wall_seconds = 0.0;
};

struct RunHistory {
    std::string objective;
    std::size_t fidelities = 1;
    Sense sense = Sense::maximize;
    std::vector<EvaluationRecord> records;

    std::size_t size() const { return records.size(); }
    std::size_t count(const std::string& phase) const {
        return static_cast<std::size_t>(
            std::count_if(records.begin(), records.end(), [&](const auto& r) { return r.phase == phase; }));
    }
    std::size_t last_iteration() const {
        std::size_t i = 0;
        for (const auto& r : records)
            if (r.phase == "optimize") i = std::max(i, r.iteration);
        return i;
    }
    /// Cost spent after the initial design.
    double optimization_cost() const {
        double b = 0.0;
        for (const auto& r : records)
            if (r.phase != "initial") b += r.cost;
        return b;
    }
    double total_cost() const { return records.empty() ? 0.0 : records.back().cumulative_cost; }

    bool better(double a, double b) const { return sense == Sense::maximize ? a > b : a < b; }

    /// Best successful value at the highest fidelity after each record
    /// (NaN until the first one).
    std::vector<double> cumulative_best() const {
        std::vector<double> out;
        double best = std::numeric_limits<double>::quiet_NaN();
        for (const auto& r : records) {
            if (r.ok && r.fidelity + 1 == fidelities && (std::isnan(best) || better(r.value, best))) best = r.value;
            out.push_back(best);
        }
        return out;
    }

    EvaluationRecord& append(EvaluationRecord r) {
        r.index = records.size();
        r.cumulative_cost = total_cost() + r.cost;
        records.push_back(std::move(r));
        return records.back();
    }
};

/// Cost accounting for the optimization phase. An evaluation at fidelity m
/// is admitted only when spent + c(m) <= budget, so spent never exceeds it.
struct BudgetLedger {
    double spent = 0.0;
    double budget = 0.0;
    std::vector<double> cost;

    bool affordable(std::size_t m) const { return spent + cost.at(m) <= budget; }
    bool any_affordable() const {
        for (std::size_t m = 0; m < cost.size(); ++m)
            if (affordable(m)) return true;
        return false;
    }
    void charge(std::size_t m) { spent += cost.at(m); }
};

struct Recommendation {
    Eigen::VectorXd x;
    double y = 0.0;
    std::size_t fidelity = 0;
    std::size_t record = 0;
    std::size_t iteration = 0;
    std::string rule = "best-observed";  // best-observed | hf-observed | promoted | no-headroom
};

/// Extremal successful record at the highest fidelity; ties go to the
/// earliest record.
inline Recommendation recommend(const RunHistory& h) {
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < h.records.size(); ++k) {
        const auto& r = h.records[k];
        if (!r.ok || r.fidelity + 1 != h.fidelities) continue;
        if (!best || h.better(r.value, h.records[*best].value)) best = k;
    }
    if (!best) throw InsufficientData("no successful highest-fidelity evaluation to recommend");
    const auto& r = h.records[*best];
    return {r.x, r.value, r.fidelity, r.index, r.iteration, h.fidelities > 1 ? "hf-observed" : "best-observed"};
}

// --- options ---------------------------------------------------------------

struct LoopOptions {
    KernelType kernel = KernelType::rbf;
    AcquisitionKind acquisition = AcquisitionKind::logei;
    double beta = 2.0;
    std::size_t iterations = 10;
    double budget = std::numeric_limits<double>::infinity();
    std::vector<double> cost;  // per fidelity; empty = objective's own table
    std::uint64_t seed = 0;
    std::size_t fit_restarts = 8;
    bool per_fidelity_noise = false;
    MaximizeOptions maximize{};
    bool estimate_rho = true;          // else use `rho` as given
    std::vector<double> rho;           // fixed values / fallback, per fidelity (last = 1)
    std::optional<std::pair<std::vector<double>, std::vector<double>>> omega;  // VF-UCB override
    std::size_t omega_probes = 256;
    double exclusion_radius = 1e-3;      // around the first failure at a fidelity
    double max_exclusion_radius = 0.05;  // after repeated failures
    bool promote = true;
    std::function<void(const EvaluationRecord&)> on_record;
};

struct RunResult {
    RunHistory history;
    Recommendation recommendation;
    BudgetLedger ledger;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Independent seed for iteration i: proposals depend only on (seed, i) and
/// the data, so a resumed run replays exactly.
inline std::uint64_t iteration_seed(std::uint64_t seed, std::size_t i) {
    return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(i));
}

inline EvaluationRecord evaluate_record(const Objective& f, const Eigen::VectorXd& x, std::size_t m, double cost) {
    EvaluationRecord r;
    r.x = x;
    r.fidelity = m;
    r.cost = cost;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        r.value = f.evaluate(x, m);
        r.ok = std::isfinite(r.value);
        if (!r.ok) r.error = "non-finite objective value";
    } catch (const EvaluationError& e) {
        r.error = e.what();
        if (!e.diagnostics().empty()) r.error += "\n" + e.diagnostics();
    } catch (const ConfigError& e) {
        r.error = e.what();
    }
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

inline double sign(Sense s) { return s == Sense::maximize ? 1.0 : -1.0; }

/// True if x lies within `radius` of a failed evaluation at fidelity m.
/// Penalty around failed designs at fidelity m: the radius starts at `radius`
/// and grows x4 with every further failure there, up to `max_radius`, so a
/// region that keeps failing is abandoned instead of probed point by point.
inline bool excluded(const RunHistory& h, const Eigen::VectorXd& x, std::size_t m, double radius, double max_radius) {
    std::size_t failures = 0;
    for (const auto& r : h.records) failures += !r.ok && r.fidelity == m;
    if (failures == 0) return false;
    const double eff = std::min(radius * std::pow(4.0, static_cast<double>(failures - 1)), std::max(radius, max_radius));
    for (const auto& r : h.records)
        if (!r.ok && r.fidelity == m && (r.x - x).norm() <= eff) return true;
    return false;
}

inline MfDoe history_mfdoe(const RunHistory& h, std::size_t dim) {
    const std::size_t M = h.fidelities;
    std::vector<std::vector<std::size_t>> rows(M);
    for (std::size_t k = 0; k < h.records.size(); ++k)
        if (h.records[k].ok) rows[h.records[k].fidelity].push_back(k);
    std::vector<DesignMatrix> X;
    std::vector<Eigen::VectorXd> y;
    const double s = sign(h.sense);
    for (std::size_t m = 0; m < M; ++m) {
        Eigen::MatrixXd V(static_cast<Eigen::Index>(rows[m].size()), static_cast<Eigen::Index>(dim));
        Eigen::VectorXd v(static_cast<Eigen::Index>(rows[m].size()));
        for (std::size_t j = 0; j < rows[m].size(); ++j) {
            V.row(static_cast<Eigen::Index>(j)) = h.records[rows[m][j]].x.transpose();
            v[static_cast<Eigen::Index>(j)] = s * h.records[rows[m][j]].value;
        }
        X.push_back(rows[m].empty() ? DesignMatrix() : DesignMatrix(V));
        y.push_back(v);
    }
    return MfDoe::make(std::move(X), std::move(y));
}

inline double hf_incumbent(const RunHistory& h) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& r : h.records)
        if (r.ok && r.fidelity + 1 == h.fidelities) best = std::max(best, sign(h.sense) * r.value);
    if (!std::isfinite(best)) throw InsufficientData("no successful highest-fidelity evaluation");
    return best;
}

inline std::vector<double> resolve_cost(const Objective& f, const LoopOptions& opt) {
    std::vector<double> c = opt.cost.empty() ? f.spec().cost : opt.cost;
    if (c.size() != f.spec().fidelities) throw ConfigError("cost table needs one entry per fidelity");
    for (std::size_t m = 0; m < c.size(); ++m)
        if (!(c[m] > 0.0) || (m > 0 && c[m] < c[m - 1])) throw ConfigError("costs must be positive and nondecreasing");
    return c;
}

inline void emit(const LoopOptions& opt, const EvaluationRecord& r) {
    if (opt.on_record) opt.on_record(r);
}

}  // namespace detail

/// Single-fidelity BO. `history` holds the initial design (and, on resume,
/// earlier iterations); the loop continues from its last iteration until I
/// optimization evaluations exist. The GP is refit by MLE every iteration.
inline RunResult run_bo(const Objective& f, RunHistory history, const LoopOptions& opt) {
    const auto& spec = f.spec();
    const std::size_t top = spec.fidelities - 1;
    history.objective = spec.name;
    history.fidelities = spec.fidelities;
    history.sense = spec.sense;
    if (is_variable_fidelity(opt.acquisition)) throw ConfigError("run_bo needs a single-fidelity acquisition");
    const auto cost = detail::resolve_cost(f, opt);
    for (const auto& r : history.records)
        if (r.fidelity != top) throw ConfigError("run_bo history must contain highest-fidelity records only");
    for (std::size_t i = history.last_iteration() + 1; i <= opt.iterations; ++i) {
        const std::uint64_t seed = detail::iteration_seed(opt.seed, i);
        MfDoe data = detail::history_mfdoe(history, spec.dim);
        const Doe doe = Doe::make(data.X[top], data.y[top]);
        if (doe.size() < 2) throw InsufficientData("BO needs at least two successful evaluations");
        const FitResult fit = fit_mle(doe, opt.kernel, {opt.fit_restarts, seed, {}, {}});
        const GaussianProcess gp(doe, opt.kernel, fit.params);
        AcquisitionContext ctx;
        ctx.y_best = detail::hf_incumbent(history);
        ctx.beta = opt.beta;
        AcquisitionFn acq = [&](const Eigen::VectorXd& x) {
            if (detail::excluded(history, x, top, opt.exclusion_radius, opt.max_exclusion_radius)) return -std::numeric_limits<double>::infinity();
            const Posterior p = gp.predict(x);
            switch (opt.acquisition) {
                case AcquisitionKind::ei: return ei(p, ctx);
                case AcquisitionKind::ucb: return ucb(p, ctx);
                default: return log_ei(p, ctx);
            }
        };
        const AcquisitionOptimum best = maximize(acq, spec.dim, seed, opt.maximize);
        EvaluationRecord r = detail::evaluate_record(f, best.x, top, cost[top]);
        r.phase = "optimize";
        r.iteration = i;
        detail::emit(opt, history.append(std::move(r)));
    }
    RunResult out;
    out.ledger = {history.optimization_cost(), opt.budget, cost};
    out.recommendation = recommend(history);
    out.history = std::move(history);
    return out;
}

/// Multi-fidelity BO with a cost ledger. Each iteration admits only the
/// fidelities whose cost still fits the budget (stopping when none does),
/// refits the multi-task GP, maximizes the variable-fidelity acquisition
/// jointly over (x, m), evaluates, charges c(m) and augments fidelity m.
inline RunResult run_mfbo(const Objective& f, RunHistory history, const LoopOptions& opt) {
    const auto& spec = f.spec();
    const std::size_t M = spec.fidelities;
    const std::size_t top = M - 1;
    history.objective = spec.name;
    history.fidelities = M;
    history.sense = spec.sense;
    if (!is_variable_fidelity(opt.acquisition)) throw ConfigError("run_mfbo needs vf-logei or vf-ucb");
    if (!(opt.budget > 0.0)) throw ConfigError("MFBO budget must be positive");
    BudgetLedger ledger{0.0, opt.budget, detail::resolve_cost(f, opt)};
    for (const auto& r : history.records)
        if (r.phase != "initial") ledger.spent += r.cost;

    std::vector<double> ratios;
    for (double c : ledger.cost) ratios.push_back(c / ledger.cost.back());
    ratios.back() = 1.0;
    std::vector<double> rho_config = opt.rho;
    if (rho_config.empty()) rho_config.assign(M, 1.0);
    if (rho_config.size() != M) throw ConfigError("rho table needs one entry per fidelity");
    rho_config.back() = 1.0;

    for (std::size_t i = history.last_iteration() + 1; i <= opt.iterations; ++i) {
        std::vector<bool> allowed(M);
        for (std::size_t m = 0; m < M; ++m) allowed[m] = ledger.affordable(m);
        if (!ledger.any_affordable()) break;

        const std::uint64_t seed = detail::iteration_seed(opt.seed, i);
        const MfDoe doe = detail::history_mfdoe(history, spec.dim);
        MfFitOptions fo;
        fo.restarts = opt.fit_restarts;
        fo.seed = seed;
        fo.per_fidelity_noise = opt.per_fidelity_noise;
        const MfFitResult fit = mf_fit_mle(doe, opt.kernel, fo);
        const MultiTaskGP gp(doe, opt.kernel, fit.params);

        AcquisitionContext ctx;
        ctx.y_best = detail::hf_incumbent(history);
        ctx.beta = opt.beta;
        ctx.cost_ratio = ratios;
        ctx.rho = rho_config;
        if (opt.estimate_rho) {
            for (std::size_t m = 0; m < top; ++m) {
                try {
                    ctx.rho[m] = estimate_rho(doe, m);
                } catch (const InsufficientData&) {
                    ctx.rho[m] = rho_config[m];
                }
            }
        }
        if (opt.acquisition == AcquisitionKind::vf_ucb) {
            if (opt.omega) {
                ctx.omega1 = opt.omega->first;
                ctx.omega2 = opt.omega->second;
            } else {
                const UcbWeights w = ucb_weights(gp, opt.omega_probes);
                ctx.omega1 = w.omega1;
                ctx.omega2 = w.omega2;
            }
        }
        ctx.validate();
        FidelityAcquisitionFn acq = [&](const Eigen::VectorXd& x, std::size_t m) {
            if (detail::excluded(history, x, m, opt.exclusion_radius, opt.max_exclusion_radius)) return -std::numeric_limits<double>::infinity();
            const MfPosterior p = gp.predict(x);
            return opt.acquisition == AcquisitionKind::vf_ucb ? vf_ucb(p, m, ctx) : vf_log_ei(p, m, ctx);
        };
        const AcquisitionOptimum best = maximize_mf(acq, spec.dim, M, seed, allowed, opt.maximize);
        EvaluationRecord r = detail::evaluate_record(f, best.x, best.fidelity, ledger.cost[best.fidelity]);
        r.phase = "optimize";
        r.iteration = i;
        ledger.charge(best.fidelity);
        detail::emit(opt, history.append(std::move(r)));
    }

    // Promotion: incumbent maximizers of the lower fidelities get a
    // highest-fidelity evaluation while the ledger allows it.
    std::string rule = "hf-observed";
    if (opt.promote && M > 1) {
        const double s = detail::sign(spec.sense);
        for (std::size_t m = 0; m < top; ++m) {
            std::optional<std::size_t> inc;
            for (std::size_t k = 0; k < history.records.size(); ++k) {
                const auto& r = history.records[k];
                if (r.ok && r.fidelity == m && (!inc || s * r.value > s * history.records[*inc].value)) inc = k;
            }
            if (!inc) continue;
            const Eigen::VectorXd x = history.records[*inc].x;
            bool seen = false;
            for (const auto& r : history.records)
                if (r.fidelity == top && (r.x - x).lpNorm<Eigen::Infinity>() <= 1e-12) seen = true;
            if (seen) continue;
            if (!ledger.affordable(top)) {
                rule = "no-headroom";
                continue;
            }
            EvaluationRecord r = detail::evaluate_record(f, x, top, ledger.cost[top]);
            r.phase = "promotion";
            r.iteration = history.last_iteration();
            ledger.charge(top);
            detail::emit(opt, history.append(std::move(r)));
            if (rule != "no-headroom") rule = "promoted";
        }
    }
    RunResult out;
    out.recommendation = recommend(history);
    out.recommendation.rule = rule;
    out.ledger = ledger;
    out.history = std::move(history);
    return out;
}

// --- initial design ----------------------------------------------------------

struct InitialDesignOptions {
    double budget = 10.0;          // HF-equivalents
    double hf_fraction = 0.5;      // share of the budget spent at the highest fidelity (M > 1)
    std::vector<double> cost;      // empty = objective's table
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    bool top_only = false;  // single-fidelity design at the highest fidelity
};

/// Number of points per fidelity: floor(budget * hf_fraction / c(M)) at the
/// top and an equal split of the rest over the lower fidelities.
inline std::vector<std::size_t> initial_counts(const std::vector<double>& cost, double budget, double hf_fraction) {
    const std::size_t M = cost.size();
    if (M == 0) throw ConfigError("cost table is empty");
    std::vector<std::size_t> n(M, 0);
    if (M == 1) {
        n[0] = static_cast<std::size_t>(std::floor(budget / cost[0] + 1e-9));
        return n;
    }
    if (!(hf_fraction > 0.0 && hf_fraction <= 1.0)) throw ConfigError("hf_fraction must lie in (0,1]");
    const double hf_budget = budget * hf_fraction;
    n[M - 1] = static_cast<std::size_t>(std::floor(hf_budget / cost[M - 1] + 1e-9));
    const double share = (budget - hf_budget) / static_cast<double>(M - 1);
    for (std::size_t m = 0; m + 1 < M; ++m) n[m] = static_cast<std::size_t>(std::floor(share / cost[m] + 1e-9));
    return n;
}

/// Evaluates nested Sobol' designs: every fidelity uses a prefix of the same
/// sequence, so cheaper levels contain the expensive designs. The seed picks
/// a block offset in the sequence.
inline RunHistory build_initial_doe(const Objective& f, const InitialDesignOptions& opt,
                                    const std::function<void(const EvaluationRecord&)>& on_record = {}) {
    const auto& spec = f.spec();
    const std::vector<double> cost = opt.cost.empty() ? spec.cost : opt.cost;
    if (cost.size() != spec.fidelities) throw ConfigError("cost table needs one entry per fidelity");
    std::vector<std::size_t> n(cost.size(), 0);
    if (opt.top_only) n.back() = initial_counts({cost.back()}, opt.budget, 1.0)[0];
    else n = initial_counts(cost, opt.budget, opt.hf_fraction);
    if (n.back() < 2) throw ConfigError("initial budget too small for two highest-fidelity points");
    const std::size_t n_max = *std::max_element(n.begin(), n.end());
    std::uint64_t block = 1;
    while (block < n_max) block <<= 1;
    const std::uint64_t slots = std::max<std::uint64_t>(1, (std::uint64_t{1} << 31) / block);
    const DesignMatrix X = sobol_sequence(spec.dim, n_max, (opt.seed % slots) * block);

    struct Job {
        std::size_t row, m;
    };
    std::vector<Job> jobs;
    for (std::size_t m = 0; m < spec.fidelities; ++m)
        for (std::size_t r = 0; r < n[m]; ++r) jobs.push_back({r, m});
    std::vector<EvaluationRecord> results(jobs.size());
    auto run = [&](std::size_t k) { results[k] = detail::evaluate_record(f, X.row(jobs[k].row), jobs[k].m, cost[jobs[k].m]); };
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

    RunHistory h;
    h.objective = spec.name;
    h.fidelities = spec.fidelities;
    h.sense = spec.sense;
    std::vector<std::size_t> ok(spec.fidelities, 0);
    for (auto& r : results) {
        if (r.ok) ++ok[r.fidelity];
        const auto& stored = h.append(std::move(r));
        if (on_record) on_record(stored);
    }
    if (ok.back() < 2) throw InsufficientData("fewer than two successful highest-fidelity evaluations in the initial design");
    for (std::size_t m = 0; m < spec.fidelities; ++m)
        if (n[m] > 0 && ok[m] == 0) throw InsufficientData("no successful evaluation at fidelity " + std::to_string(m + 1));
    return h;
}

// --- persistence -------------------------------------------------------------

inline nlohmann::json record_json(const EvaluationRecord& r) {
    nlohmann::json j{{"schema_version", kHistorySchemaVersion},
                     {"index", r.index},
                     {"phase", r.phase},
                     {"iteration", r.iteration},
                     {"fidelity", r.fidelity + 1},
                     {"x", std::vector<double>(r.x.begin(), r.x.end())},
                     {"ok", r.ok},
                     {"cost", r.cost},
                     {"cumulative_cost", r.cumulative_cost}};
    j["value"] = r.ok ? nlohmann::json(r.value) : nlohmann::json(nullptr);
    if (!r.error.empty()) j["error"] = r.error;
    j["wall_seconds"] = r.wall_seconds;
    return j;
}

inline EvaluationRecord record_from_json(const nlohmann::json& j) {
    if (j.value("schema_version", kHistorySchemaVersion) != kHistorySchemaVersion)
        throw ConfigError("unsupported history schema_version");
    EvaluationRecord r;
    r.index = j.at("index").get<std::size_t>();
    r.phase = j.at("phase").get<std::string>();
    r.iteration = j.at("iteration").get<std::size_t>();
    const auto fid = j.at("fidelity").get<std::size_t>();
    if (fid == 0) throw ConfigError("history fidelity is 1-based");
    r.fidelity = fid - 1;
    const auto x = j.at("x").get<std::vector<double>>();
    r.x = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    r.ok = j.at("ok").get<bool>();
    r.value = j.at("value").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("value").get<double>();
    r.error = j.value("error", std::string{});
    r.cost = j.at("cost").get<double>();
    r.cumulative_cost = j.at("cumulative_cost").get<double>();
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
}

/// Appends one record as a JSON line (flushed before returning).
inline void append_record(const std::filesystem::path& path, const EvaluationRecord& r) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (!out) throw ConfigError("cannot append to " + path.string());
    out << record_json(r).dump() << '\n';
    out.flush();
}

/// Reads a history written by append_record. A truncated final line (crash
/// mid-write) is ignored.
inline RunHistory read_history_jsonl(const std::filesystem::path& path, const ObjectiveSpec& spec) {
    RunHistory h;
    h.objective = spec.name;
    h.fidelities = spec.fidelities;
    h.sense = spec.sense;
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!io::trim(line).empty()) lines.push_back(line);
    for (std::size_t k = 0; k < lines.size(); ++k) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(lines[k]);
        } catch (const std::exception&) {
            if (k + 1 == lines.size()) break;
            throw ConfigError(path.string() + ": corrupt history line " + std::to_string(k + 1));
        }
        EvaluationRecord r = record_from_json(j);
        if (r.x.size() != static_cast<Eigen::Index>(spec.dim) || r.fidelity >= spec.fidelities)
            throw ConfigError(path.string() + ": record does not match the objective");
        h.records.push_back(std::move(r));
    }
    return h;
}

/// Plot-ready table: cost on the x axis, value and running best on y.
inline std::string history_csv(const RunHistory& h, const std::vector<std::string>& names) {
    std::string out = "index,phase,iteration,fidelity,cost,cumulative_cost,ok,value,best_hf";
    for (const auto& n : names) out += "," + n;
    out += "\n";
    const auto best = h.cumulative_best();
    for (std::size_t k = 0; k < h.records.size(); ++k) {
        const auto& r = h.records[k];
        out += std::to_string(r.index) + "," + r.phase + "," + std::to_string(r.iteration) + "," +
               std::to_string(r.fidelity + 1) + "," + io::format_double(r.cost) + "," +
               io::format_double(r.cumulative_cost) + "," + (r.ok ? "1" : "0") + "," +
               (r.ok ? io::format_double(r.value) : std::string{}) + "," +
               (std::isnan(best[k]) ? std::string{} : io::format_double(best[k]));
        for (Eigen::Index i = 0; i < r.x.size(); ++i) out += "," + io::format_double(r.x[i]);
        out += "\n";
    }
    return out;
}

inline nlohmann::json recommendation_json(const Recommendation& r, const BudgetLedger& ledger) {
    return {{"schema_version", kHistorySchemaVersion},
            {"x", std::vector<double>(r.x.begin(), r.x.end())},
            {"y", r.y},
            {"fidelity", r.fidelity + 1},
            {"record", r.record},
            {"iteration", r.iteration},
            {"rule", r.rule},
            {"ledger", {{"spent", ledger.spent}, {"budget", std::isfinite(ledger.budget) ? nlohmann::json(ledger.budget) : nlohmann::json(nullptr)}, {"cost", ledger.cost}}}};
}

}  // namespace mfbo
