#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "mfbo/errors.hpp"
#include "mfbo/gp.hpp"
#include "mfbo/local_search.hpp"
#include "mfbo/mtgp.hpp"
#include "mfbo/sampling.hpp"

namespace mfbo {

enum class Sense { maximize, minimize };

inline std::string to_string(Sense s) { return s == Sense::maximize ? "maximize" : "minimize"; }

inline Sense sense_from_string(const std::string& s) {
    if (s == "maximize" || s == "max") return Sense::maximize;
    if (s == "minimize" || s == "min") return Sense::minimize;
    throw ConfigError("unknown sense '" + s + "' (expected maximize|minimize)");
}

/// Shared acquisition state. Single-fidelity functions read y_best, sense and
/// beta; the variable-fidelity ones also read the per-fidelity tables, which
/// are indexed 0..M-1 with the highest fidelity last.
struct AcquisitionContext {
    double y_best = 0.0;
    Sense sense = Sense::maximize;
    double beta = 2.0;
    std::vector<double> cost_ratio;
    std::vector<double> rho;
    std::vector<double> omega1;
    std::vector<double> omega2;

    std::size_t levels() const { return cost_ratio.size(); }

    void validate() const {
        if (!(beta >= 0.0)) throw ConfigError("UCB beta must be >= 0");
        const auto M = cost_ratio.size();
        if (M == 0) return;
        for (double c : cost_ratio)
            if (!(c > 0.0 && c <= 1.0)) throw ConfigError("cost ratios must lie in (0,1]");
        if (cost_ratio.back() != 1.0) throw ConfigError("cost ratio of the highest fidelity must be 1");
        if (rho.size() != M) throw ConfigError("one correlation per fidelity required");
        for (double r : rho)
            if (!(r >= -1.0 && r <= 1.0)) throw ConfigError("correlations must lie in [-1,1]");
        if (rho.back() != 1.0) throw ConfigError("correlation of the highest fidelity with itself must be 1");
    }
};

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Scaled complementary error function exp(x^2) erfc(x). Above x = 3 a
/// 40-term continued fraction (relative error < 1e-19 there).
inline double erfcx(double x) {
    if (x < 3.0) return std::exp(x * x) * std::erfc(x);
    double t = x;
    for (int k = 40; k > 0; --k) t = x + 0.5 * k / t;
    return 1.0 / (std::sqrt(std::numbers::pi) * t);
}

/// ln(1 - exp(x)) for x < 0.
inline double log1mexp(double x) {
    return x > -std::numbers::ln2 ? std::log(-std::expm1(x)) : std::log1p(-std::exp(x));
}

/// ln(z Phi(z) + phi(z)), accurate for every finite z.
inline double log_h(double z) {
    constexpr double c1 = 0.91893853320467274178;   // ln(2 pi) / 2
    constexpr double c2 = 0.22579135264472743236;   // ln(pi / 2) / 2
    if (z > -1.0) return std::log(z * normal_cdf(z) + normal_pdf(z));
    if (z > -1e8) return -0.5 * z * z - c1 + log1mexp(std::log(erfcx(-z / std::numbers::sqrt2) * -z) + c2);
    return -0.5 * z * z - c1 - 2.0 * std::log(-z);
}

namespace detail {

inline double improvement_mean(double mu, double y_best, Sense sense) {
    return sense == Sense::maximize ? mu - y_best : y_best - mu;
}

}  // namespace detail

/// sigma (z Phi(z) + phi(z)); the sigma = 0 limit is max(0, mu - y_best).
inline double ei(double mu, double sigma, double y_best, Sense sense = Sense::maximize) {
    const double d = detail::improvement_mean(mu, y_best, sense);
    if (!(sigma > 0.0)) return std::max(0.0, d);
    const double z = d / sigma;
    return sigma * (z * normal_cdf(z) + normal_pdf(z));
}

/// ln EI; -inf where EI is exactly zero.
inline double log_ei(double mu, double sigma, double y_best, Sense sense = Sense::maximize) {
    const double d = detail::improvement_mean(mu, y_best, sense);
    if (!(sigma > 0.0)) return d > 0.0 ? std::log(d) : -std::numeric_limits<double>::infinity();
    return std::log(sigma) + log_h(d / sigma);
}

/// mu + beta sigma (mirrored for minimization so larger is always better).
inline double ucb(double mu, double sigma, double beta, Sense sense = Sense::maximize) {
    return (sense == Sense::maximize ? mu : -mu) + beta * sigma;
}

inline double ei(const Posterior& p, const AcquisitionContext& ctx) { return ei(p.mean, p.sd(), ctx.y_best, ctx.sense); }
inline double log_ei(const Posterior& p, const AcquisitionContext& ctx) {
    return log_ei(p.mean, p.sd(), ctx.y_best, ctx.sense);
}
inline double ucb(const Posterior& p, const AcquisitionContext& ctx) { return ucb(p.mean, p.sd(), ctx.beta, ctx.sense); }

inline double ei(const Eigen::VectorXd& x, const GaussianProcess& gp, const AcquisitionContext& ctx) {
    return ei(gp.predict(x), ctx);
}
inline double log_ei(const Eigen::VectorXd& x, const GaussianProcess& gp, const AcquisitionContext& ctx) {
    return log_ei(gp.predict(x), ctx);
}
inline double ucb(const Eigen::VectorXd& x, const GaussianProcess& gp, const AcquisitionContext& ctx) {
    return ucb(gp.predict(x), ctx);
}

/// log_ei at fidelity m against the highest-fidelity incumbent, plus
/// ln CR(m) + ln rho(m). Fidelities with rho(m) <= 0 score -inf.
inline double vf_log_ei(const MfPosterior& post, std::size_t m, const AcquisitionContext& ctx) {
    if (m >= post.levels() || m >= ctx.levels()) throw ConfigError("fidelity index out of range");
    const double r = ctx.rho[m];
    if (!(r > 0.0)) return -std::numeric_limits<double>::infinity();
    const Posterior p = post.at(m);
    return log_ei(p.mean, p.sd(), ctx.y_best, ctx.sense) + std::log(ctx.cost_ratio[m]) + std::log(r);
}

/// omega1(m) mu_m + omega2(m) sigma_m CR(m).
inline double vf_ucb(const MfPosterior& post, std::size_t m, const AcquisitionContext& ctx) {
    if (m >= post.levels() || m >= ctx.levels()) throw ConfigError("fidelity index out of range");
    if (ctx.omega1.size() != ctx.levels() || ctx.omega2.size() != ctx.levels())
        throw ConfigError("VF-UCB needs one (omega1, omega2) pair per fidelity");
    const Posterior p = post.at(m);
    const double mu = ctx.sense == Sense::maximize ? p.mean : -p.mean;
    return ctx.omega1[m] * mu + ctx.omega2[m] * p.sd() * ctx.cost_ratio[m];
}

inline double vf_log_ei(const Eigen::VectorXd& x, std::size_t m, const MultiTaskGP& gp, const AcquisitionContext& ctx) {
    return vf_log_ei(gp.predict(x), m, ctx);
}
inline double vf_ucb(const Eigen::VectorXd& x, std::size_t m, const MultiTaskGP& gp, const AcquisitionContext& ctx) {
    return vf_ucb(gp.predict(x), m, ctx);
}

struct UcbWeights {
    std::vector<double> omega1;
    std::vector<double> omega2;
    std::vector<double> cv;
};

/// Per-fidelity weights from the mean coefficient of variation sigma/|mu|
/// over a Sobol' probe grid (each ratio clipped to [0, 10]):
/// omega2 = cv / (1 + cv), omega1 = 1 - omega2.
inline UcbWeights ucb_weights(const MultiTaskGP& gp, std::size_t probes = 256) {
    const std::size_t M = gp.params().levels();
    const DesignMatrix grid = sobol_sequence(gp.doe().dim(), probes, 1);
    UcbWeights w;
    w.cv.assign(M, 0.0);
    for (std::size_t r = 0; r < grid.rows(); ++r) {
        const MfPosterior p = gp.predict(grid.row(r));
        for (std::size_t m = 0; m < M; ++m) {
            const double mu = std::abs(p.mean_at(m));
            const double sd = std::sqrt(p.var_at(m));
            const double ratio = mu > 0.0 ? std::min(sd / mu, 10.0) : (sd > 0.0 ? 10.0 : 0.0);
            w.cv[m] += ratio;
        }
    }
    for (std::size_t m = 0; m < M; ++m) {
        w.cv[m] /= static_cast<double>(grid.rows());
        w.omega2.push_back(w.cv[m] / (1.0 + w.cv[m]));
        w.omega1.push_back(1.0 - w.omega2.back());
    }
    return w;
}

/// Pearson correlation between fidelity m and the highest fidelity over
/// designs evaluated at both.
inline double estimate_rho(const MfDoe& doe, std::size_t m = 0) {
    const std::size_t top = doe.levels() - 1;
    if (m > top) throw ConfigError("fidelity index out of range");
    if (m == top) return 1.0;
    std::vector<double> lo, hi;
    const auto& Xl = doe.X[m];
    const auto& Xh = doe.X[top];
    std::vector<bool> used(Xh.rows(), false);
    for (std::size_t i = 0; i < Xl.rows(); ++i) {
        const Eigen::VectorXd u = Xl.row(i);
        for (std::size_t j = 0; j < Xh.rows(); ++j) {
            if (used[j] || (Xh.row(j) - u).lpNorm<Eigen::Infinity>() > 1e-12) continue;
            used[j] = true;
            lo.push_back(doe.y[m][static_cast<Eigen::Index>(i)]);
            hi.push_back(doe.y[top][static_cast<Eigen::Index>(j)]);
            break;
        }
    }
    if (lo.size() < 3) throw InsufficientData("correlation needs at least three designs evaluated at both fidelities");
    const auto n = static_cast<Eigen::Index>(lo.size());
    const Eigen::Map<const Eigen::VectorXd> a(lo.data(), n), b(hi.data(), n);
    const Eigen::VectorXd da = a.array() - a.mean();
    const Eigen::VectorXd db = b.array() - b.mean();
    const double den = std::sqrt(da.squaredNorm() * db.squaredNorm());
    if (!(den > 0.0)) throw InsufficientData("correlation undefined for responses without spread");
    return std::clamp(da.dot(db) / den, -1.0, 1.0);
}

struct MaximizeOptions {
    std::size_t pool = 512;
    std::size_t starts = 32;
    std::size_t jobs = 1;
    NelderMeadOptions local{};
};

struct AcquisitionOptimum {
    Eigen::VectorXd x;
    std::size_t fidelity = 0;
    double value = -std::numeric_limits<double>::infinity();
};

using AcquisitionFn = std::function<double(const Eigen::VectorXd&)>;

/// Scores a Sobol' pool (the seed picks its offset), polishes the best
/// `starts` pool points with Nelder-Mead inside [0,1]^D, and returns the best
/// polished point. Ties resolve to the earlier start.
inline AcquisitionOptimum maximize(const AcquisitionFn& acq, std::size_t dim, std::uint64_t seed,
                                   const MaximizeOptions& opt = {}) {
    const std::size_t pool_size = std::max(opt.pool, opt.starts);
    const DesignMatrix pool = sobol_sequence(dim, pool_size, 1 + seed % 1000003);
    std::vector<double> score(pool_size);
    for (std::size_t r = 0; r < pool_size; ++r) {
        const double v = acq(pool.row(r));
        score[r] = std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
    }
    std::vector<std::size_t> order(pool_size);
    for (std::size_t r = 0; r < pool_size; ++r) order[r] = r;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] > score[b]; });
    const std::size_t n_starts = std::min(std::max<std::size_t>(opt.starts, 1), pool_size);

    const Eigen::VectorXd lo = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    const Eigen::VectorXd hi = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(dim));
    std::vector<LocalResult> results(n_starts);
    auto polish = [&](std::size_t k) { results[k] = maximize_box_nelder_mead(acq, pool.row(order[k]), lo, hi, opt.local); };
    const std::size_t jobs = std::clamp<std::size_t>(opt.jobs, 1, n_starts);
    if (jobs == 1) {
        for (std::size_t k = 0; k < n_starts; ++k) polish(k);
    } else {
        std::vector<std::thread> workers;
        for (std::size_t t = 0; t < jobs; ++t)
            workers.emplace_back([&, t] {
                for (std::size_t k = t; k < n_starts; k += jobs) polish(k);
            });
        for (auto& w : workers) w.join();
    }
    AcquisitionOptimum best;
    best.x = pool.row(order[0]);
    best.value = score[order[0]];
    for (const auto& r : results) {
        if (r.value > best.value) {
            best.value = r.value;
            best.x = r.x;
        }
    }
    return best;
}

using FidelityAcquisitionFn = std::function<double(const Eigen::VectorXd&, std::size_t)>;

/// Joint argmax over (x, m): one maximize() per allowed fidelity with the
/// same seed. Ties go to the higher fidelity.
inline AcquisitionOptimum maximize_mf(const FidelityAcquisitionFn& acq, std::size_t dim, std::size_t levels,
                                      std::uint64_t seed, const std::vector<bool>& allowed = {},
                                      const MaximizeOptions& opt = {}) {
    AcquisitionOptimum best;
    bool any = false;
    for (std::size_t m = levels; m-- > 0;) {
        if (!allowed.empty() && !allowed[m]) continue;
        AcquisitionOptimum r = maximize([&](const Eigen::VectorXd& x) { return acq(x, m); }, dim, seed, opt);
        r.fidelity = m;
        if (!any || r.value > best.value) best = std::move(r);
        any = true;
    }
    if (!any) throw ConfigError("no fidelity is eligible for selection");
    return best;
}

}  // namespace mfbo
