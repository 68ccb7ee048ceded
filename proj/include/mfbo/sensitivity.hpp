#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfbo/errors.hpp"
#include "mfbo/io.hpp"

namespace mfbo {

/// Objective values at the rows of a SaltelliSet: f(a_j), f(b_j) and
/// f(c_j^(i)) for i = 1..D.
struct SaltelliEvaluations {
    Eigen::VectorXd f_A;
    Eigen::VectorXd f_B;
    std::vector<Eigen::VectorXd> f_AB;
    std::string objective;
    int fidelity = 0;

    std::size_t base_count() const { return static_cast<std::size_t>(f_A.size()); }
    std::size_t dim() const { return f_AB.size(); }

    void validate() const {
        const auto n = f_A.size();
        if (n < 2) throw ConfigError("sensitivity analysis needs N >= 2 base rows");
        if (f_B.size() != n) throw DimensionMismatch("f_B length differs from f_A");
        if (f_AB.empty()) throw ConfigError("sensitivity analysis needs D >= 1");
        for (const auto& v : f_AB)
            if (v.size() != n) throw DimensionMismatch("f_AB length differs from f_A");
        auto finite = [](const Eigen::VectorXd& v) { return v.allFinite(); };
        if (!finite(f_A) || !finite(f_B) || !std::all_of(f_AB.begin(), f_AB.end(), finite))
            throw ConfigError("Saltelli evaluations contain non-finite values");
    }

    /// The first n base rows (A, B and every AB block truncated together).
    SaltelliEvaluations prefix(std::size_t n) const {
        if (n > base_count()) throw ConfigError("prefix of " + std::to_string(n) + " exceeds N = " + std::to_string(base_count()));
        SaltelliEvaluations out{f_A.head(static_cast<Eigen::Index>(n)), f_B.head(static_cast<Eigen::Index>(n)), {}, objective, fidelity};
        for (const auto& v : f_AB) out.f_AB.push_back(v.head(static_cast<Eigen::Index>(n)));
        return out;
    }
};

struct SensitivityIndices {
    std::vector<double> first_order;
    std::vector<double> total_order;
    double var_total = 0.0;
};

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct ParameterSensitivity {
    std::string name;
    double s1 = 0.0;
    double st = 0.0;
    Interval ci_s1;
    Interval ci_st;
};

struct SensitivityReport {
    std::vector<ParameterSensitivity> parameters;
    std::size_t n_used = 0;
    double var_total = 0.0;
    double level = 0.95;
    std::size_t n_boot = 0;
};

namespace detail {

/// Point estimates over the base rows listed in `rows`. Total variance is the
/// sample variance of f_A and f_B pooled.
inline SensitivityIndices saltelli_estimates(const SaltelliEvaluations& ev, const std::vector<std::size_t>& rows) {
    const double n = static_cast<double>(rows.size());
    double mean = 0.0;
    for (auto j : rows) mean += ev.f_A[j] + ev.f_B[j];
    mean /= 2.0 * n;
    double ss = 0.0;
    for (auto j : rows) {
        ss += (ev.f_A[j] - mean) * (ev.f_A[j] - mean);
        ss += (ev.f_B[j] - mean) * (ev.f_B[j] - mean);
    }
    const double var = ss / (2.0 * n - 1.0);
    if (!(var > 1e-300) || var <= 1e-24 * std::max(1.0, mean * mean))
        throw DegenerateObjective("objective has zero variance over the Saltelli set");

    SensitivityIndices out;
    out.var_total = var;
    for (std::size_t i = 0; i < ev.dim(); ++i) {
        const auto& fab = ev.f_AB[i];
        double first = 0.0;
        double total = 0.0;
        for (auto j : rows) {
            first += ev.f_B[j] * (fab[j] - ev.f_A[j]);
            const double d = ev.f_A[j] - fab[j];
            total += d * d;
        }
        out.first_order.push_back(first / n / var);
        out.total_order.push_back(total / (2.0 * n) / var);
    }
    return out;
}

inline std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    for (std::size_t j = 0; j < n; ++j) r[j] = j;
    return r;
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.size() == 1) return sorted.front();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

inline SensitivityIndices sobol_indices(const SaltelliEvaluations& evals) {
    evals.validate();
    return detail::saltelli_estimates(evals, detail::all_rows(evals.base_count()));
}

/// S1[i] = mean_j f_B[j] (f_AB[i][j] - f_A[j]) / Var(Y).
inline std::vector<double> first_order(const SaltelliEvaluations& evals) { return sobol_indices(evals).first_order; }

/// ST[i] = mean_j (f_A[j] - f_AB[i][j])^2 / (2 Var(Y)).
inline std::vector<double> total_order(const SaltelliEvaluations& evals) { return sobol_indices(evals).total_order; }

/// Point estimates plus bootstrap percentile intervals. Each replicate
/// resamples base rows with replacement (A/B/AB rows stay paired) and draws
/// from its own substream seeded by (seed, replicate).
inline SensitivityReport bootstrap_ci(const SaltelliEvaluations& evals, std::size_t n_boot, double level,
                                      std::uint64_t seed, const std::vector<std::string>& names = {}) {
    evals.validate();
    if (n_boot < 1) throw ConfigError("bootstrap needs at least one replicate");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0,1)");
    const std::size_t n = evals.base_count();
    const std::size_t d = evals.dim();
    const auto point = detail::saltelli_estimates(evals, detail::all_rows(n));

    std::vector<std::vector<double>> s1_reps(d), st_reps(d);
    std::vector<std::size_t> rows(n);
    for (std::size_t b = 0; b < n_boot; ++b) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
        std::mt19937_64 rng(seq);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (auto& r : rows) r = pick(rng);
        SensitivityIndices rep;
        try {
            rep = detail::saltelli_estimates(evals, rows);
        } catch (const DegenerateObjective&) {
            continue;  // a resample with no spread carries no information
        }
        for (std::size_t i = 0; i < d; ++i) {
            s1_reps[i].push_back(rep.first_order[i]);
            st_reps[i].push_back(rep.total_order[i]);
        }
    }

    SensitivityReport report;
    report.n_used = n;
    report.var_total = point.var_total;
    report.level = level;
    report.n_boot = n_boot;
    const double alpha = (1.0 - level) / 2.0;
    for (std::size_t i = 0; i < d; ++i) {
        ParameterSensitivity p;
        p.name = i < names.size() ? names[i] : "x" + std::to_string(i + 1);
        p.s1 = point.first_order[i];
        p.st = point.total_order[i];
        auto interval = [&](std::vector<double>& reps, double fallback) {
            if (reps.empty()) return Interval{fallback, fallback};
            std::sort(reps.begin(), reps.end());
            return Interval{detail::quantile_sorted(reps, alpha), detail::quantile_sorted(reps, 1.0 - alpha)};
        };
        p.ci_s1 = interval(s1_reps[i], p.s1);
        p.ci_st = interval(st_reps[i], p.st);
        report.parameters.push_back(std::move(p));
    }
    return report;
}

/// Reports on growing prefixes of the base rows. Sobol' prefixes are
/// themselves low-discrepancy, so each entry is a valid smaller study.
inline std::vector<SensitivityReport> convergence_scan(const SaltelliEvaluations& evals,
                                                       const std::vector<std::size_t>& grid, std::size_t n_boot,
                                                       double level, std::uint64_t seed,
                                                       const std::vector<std::string>& names = {}) {
    for (auto n : grid)
        if (n > evals.base_count())
            throw ConfigError("convergence grid entry " + std::to_string(n) + " exceeds N = " +
                              std::to_string(evals.base_count()));
    std::vector<SensitivityReport> out;
    out.reserve(grid.size());
    for (auto n : grid) out.push_back(bootstrap_ci(evals.prefix(n), n_boot, level, seed, names));
    return out;
}

// --- serialization -------------------------------------------------------

inline nlohmann::json report_json(const SensitivityReport& r) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : r.parameters) {
        params.push_back({{"name", p.name},
                          {"S1", p.s1},
                          {"ST", p.st},
                          {"S1_ci", {p.ci_s1.lo, p.ci_s1.hi}},
                          {"ST_ci", {p.ci_st.lo, p.ci_st.hi}},
                          {"S1_below_zero", p.s1 < 0.0},
                          {"ST_below_zero", p.st < 0.0}});
    }
    return {{"schema_version", 1}, {"n_used", r.n_used}, {"var_total", r.var_total},
            {"level", r.level},    {"n_boot", r.n_boot}, {"parameters", params}};
}

/// Long-format table: one row per (n_used, parameter, index).
inline std::string reports_long_csv(const std::vector<SensitivityReport>& reports) {
    std::string out = "n_used,n_designs,parameter,index,estimate,ci_lo,ci_hi,below_zero\n";
    for (const auto& r : reports) {
        const std::size_t designs = r.n_used * (r.parameters.size() + 2);
        for (const auto& p : r.parameters) {
            auto row = [&](const char* idx, double est, Interval ci) {
                out += std::to_string(r.n_used) + "," + std::to_string(designs) + "," + p.name + "," + idx + "," +
                       io::format_double(est) + "," + io::format_double(ci.lo) + "," + io::format_double(ci.hi) + "," +
                       (est < 0.0 ? "1" : "0") + "\n";
            };
            row("S1", p.s1, p.ci_s1);
            row("ST", p.st, p.ci_st);
        }
    }
    return out;
}

}  // namespace mfbo
