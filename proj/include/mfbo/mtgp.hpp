#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfbo/errors.hpp"
#include "mfbo/gp.hpp"

namespace mfbo {

/// M designs-of-experiments ordered by increasing fidelity (index 0 lowest),
/// standardized with one pooled mean/scale so inter-fidelity offsets remain
/// visible to the task covariance.
struct MfDoe {
    std::vector<DesignMatrix> X;
    std::vector<Eigen::VectorXd> y;
    Standardization st;
    bool constant = false;

    static MfDoe make(std::vector<DesignMatrix> X, std::vector<Eigen::VectorXd> y) {
        if (X.empty() || X.size() != y.size()) throw ConfigError("MfDoe needs one (X, y) pair per fidelity");
        std::size_t dim = 0;
        Eigen::Index total = 0;
        for (std::size_t m = 0; m < X.size(); ++m) {
            if (X[m].rows() != static_cast<std::size_t>(y[m].size()))
                throw DimensionMismatch("MfDoe: X and y sizes differ at fidelity " + std::to_string(m + 1));
            if (!X[m].empty()) {
                if (dim != 0 && X[m].cols() != dim) throw DimensionMismatch("MfDoe: fidelities differ in design dimension");
                dim = X[m].cols();
            }
            total += y[m].size();
        }
        Eigen::VectorXd pooled(total);
        Eigen::Index at = 0;
        for (const auto& v : y) {
            pooled.segment(at, v.size()) = v;
            at += v.size();
        }
        MfDoe out{std::move(X), std::move(y), {}, false};
        out.st = Standardization::from_data(pooled, &out.constant);
        return out;
    }

    std::size_t levels() const { return X.size(); }
    std::size_t count(std::size_t m) const { return static_cast<std::size_t>(y.at(m).size()); }

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& v : y) n += static_cast<std::size_t>(v.size());
        return n;
    }

    std::size_t dim() const {
        for (const auto& x : X)
            if (!x.empty()) return x.cols();
        return 0;
    }

    /// Fidelity m's data carrying the pooled standardization.
    Doe level(std::size_t m) const { return Doe::with_standardization(X.at(m), y.at(m), st); }

    /// Designs stacked by fidelity, with the task index of every row.
    Eigen::MatrixXd stacked_designs(std::vector<std::size_t>* tasks = nullptr) const {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(total()), static_cast<Eigen::Index>(dim()));
        Eigen::Index at = 0;
        if (tasks) tasks->clear();
        for (std::size_t m = 0; m < X.size(); ++m) {
            if (X[m].empty()) continue;
            out.middleRows(at, static_cast<Eigen::Index>(X[m].rows())) = X[m].values();
            at += static_cast<Eigen::Index>(X[m].rows());
            if (tasks) tasks->insert(tasks->end(), X[m].rows(), m);
        }
        return out;
    }

    Eigen::VectorXd stacked_standardized() const {
        Eigen::VectorXd out(static_cast<Eigen::Index>(total()));
        Eigen::Index at = 0;
        for (const auto& v : y) {
            out.segment(at, v.size()) = ((v.array() - st.mean) / st.scale).matrix();
            at += v.size();
        }
        return out;
    }
};

/// Inter-fidelity covariance B = L L^T from a lower-triangular factor.
struct TaskCovariance {
    Eigen::MatrixXd L;

    static TaskCovariance identity(std::size_t m) {
        return {Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m))};
    }

    /// Factor of an explicit PSD matrix (pivot-free Cholesky with a tiny ridge
    /// for singular inputs such as all-ones).
    static TaskCovariance from_matrix(const Eigen::MatrixXd& B) {
        Eigen::LLT<Eigen::MatrixXd> llt(B);
        if (llt.info() == Eigen::Success) return {llt.matrixL()};
        Eigen::MatrixXd ridge = B;
        ridge.diagonal().array() += 1e-12 * std::max(1.0, B.diagonal().maxCoeff());
        llt.compute(ridge);
        if (llt.info() != Eigen::Success) throw ConfigError("task covariance is not positive semi-definite");
        return {llt.matrixL()};
    }

    std::size_t size() const { return static_cast<std::size_t>(L.rows()); }
    Eigen::MatrixXd B() const { return L * L.transpose(); }

    double correlation(std::size_t i, std::size_t j) const {
        const Eigen::MatrixXd b = B();
        const auto a = static_cast<Eigen::Index>(i);
        const auto c = static_cast<Eigen::Index>(j);
        return b(a, c) / std::sqrt(b(a, a) * b(c, c));
    }
};

/// Base-kernel amplitude and length scale, per-fidelity noise variances and
/// the task covariance factor.
struct MtParams {
    double amplitude = 1.0;
    double length_scale = 0.2;
    Eigen::VectorXd noise_var;
    TaskCovariance task;

    std::size_t levels() const { return task.size(); }

    KernelParams base(std::size_t m) const { return {amplitude, length_scale, noise_var[static_cast<Eigen::Index>(m)]}; }

    void validate() const {
        if (task.size() == 0) throw ConfigError("multi-task parameters need M >= 1");
        if (static_cast<std::size_t>(noise_var.size()) != task.size())
            throw ConfigError("multi-task parameters need one noise variance per fidelity");
        for (std::size_t m = 0; m < levels(); ++m) base(m).validate();
        const Eigen::MatrixXd b = task.B();
        if ((b.diagonal().array() <= 0.0).any()) throw ConfigError("task covariance needs a positive diagonal");
    }

    static MtParams shared(const KernelParams& p, TaskCovariance task) {
        MtParams out;
        out.amplitude = p.amplitude;
        out.length_scale = p.length_scale;
        out.noise_var = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(task.size()), p.noise_var);
        out.task = std::move(task);
        return out;
    }
};

/// b_ij * kappa(u, v); the noise term enters only when i == j and u == v.
inline double mt_kernel(const Eigen::VectorXd& u, std::size_t i, const Eigen::VectorXd& v, std::size_t j,
                        KernelType kernel, const MtParams& p) {
    if (u.size() != v.size()) throw DimensionMismatch("kernel arguments differ in dimension");
    if (i >= p.levels() || j >= p.levels()) throw ConfigError("fidelity index out of range");
    const Eigen::MatrixXd B = p.task.B();
    const double signal = p.amplitude * detail::correlation(kernel, (u - v).squaredNorm(), p.length_scale);
    const double noise = (i == j && u == v) ? p.noise_var[static_cast<Eigen::Index>(i)] : 0.0;
    return B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * signal + noise;
}

namespace detail {

/// Block Gram matrix plus derivative matrices for (ln c, ln lambda, ln s^2...)
/// and the task-independent signal matrix S (for task-factor gradients).
struct BlockGram {
    Eigen::MatrixXd K;
    Eigen::MatrixXd S;
    std::vector<Eigen::MatrixXd> dK;
};

inline BlockGram block_gram_terms(const Eigen::MatrixXd& V, const std::vector<std::size_t>& task, KernelType kernel,
                                  const MtParams& p, bool shared_noise, bool with_derivatives) {
    const auto n = V.rows();
    const Eigen::MatrixXd B = p.task.B();
    BlockGram g;
    g.K.resize(n, n);
    if (with_derivatives) {
        g.S.resize(n, n);
        g.dK.assign(2, Eigen::MatrixXd(n, n));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double r2 = i == j ? 0.0 : (V.row(i) - V.row(j)).squaredNorm();
            const double b = B(static_cast<Eigen::Index>(task[i]), static_cast<Eigen::Index>(task[j]));
            const double signal = p.amplitude * correlation(kernel, r2, p.length_scale);
            g.K(i, j) = g.K(j, i) = b * signal;
            if (with_derivatives) {
                g.S(i, j) = g.S(j, i) = signal;
                g.dK[0](i, j) = g.dK[0](j, i) = b * signal;
                g.dK[1](i, j) = g.dK[1](j, i) = b * (p.amplitude * correlation_dlog_lambda(kernel, r2, p.length_scale));
            }
        }
        g.K(i, i) += p.noise_var[static_cast<Eigen::Index>(task[i])];
    }
    if (with_derivatives) {
        const auto levels = static_cast<Eigen::Index>(p.levels());
        if (shared_noise) {
            g.dK.emplace_back(p.noise_var[0] * Eigen::MatrixXd::Identity(n, n));
        } else {
            for (Eigen::Index m = 0; m < levels; ++m) {
                Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
                for (Eigen::Index i = 0; i < n; ++i)
                    if (static_cast<Eigen::Index>(task[i]) == m) d(i, i) = p.noise_var[m];
                g.dK.push_back(std::move(d));
            }
        }
    }
    return g;
}

/// Parameter layout: ln c, ln lambda, ln s^2 (one shared or M), then for each
/// task row r >= 1 the entries L(r, 0..r-1) followed by ln L(r, r).
/// L(0,0) is pinned to 1 so c carries the overall amplitude.
struct MtLayout {
    std::size_t levels = 1;
    bool shared_noise = true;

    std::size_t noise_count() const { return shared_noise ? 1 : levels; }
    std::size_t size() const { return 2 + noise_count() + levels * (levels + 1) / 2 - 1; }

    MtParams unpack(const Eigen::VectorXd& theta) const {
        MtParams p;
        p.amplitude = std::exp(theta[0]);
        p.length_scale = std::exp(theta[1]);
        p.noise_var.resize(static_cast<Eigen::Index>(levels));
        for (std::size_t m = 0; m < levels; ++m)
            p.noise_var[static_cast<Eigen::Index>(m)] = std::exp(theta[static_cast<Eigen::Index>(2 + (shared_noise ? 0 : m))]);
        const auto L = static_cast<Eigen::Index>(levels);
        p.task.L = Eigen::MatrixXd::Zero(L, L);
        p.task.L(0, 0) = 1.0;
        auto at = static_cast<Eigen::Index>(2 + noise_count());
        for (Eigen::Index r = 1; r < L; ++r) {
            for (Eigen::Index c = 0; c < r; ++c) p.task.L(r, c) = theta[at++];
            p.task.L(r, r) = std::exp(theta[at++]);
        }
        return p;
    }
};

}  // namespace detail

/// Full (sum N_m) x (sum N_m) covariance: block (i, j) = b_ij K(X_i, X_j),
/// noise on the diagonal.
inline Eigen::MatrixXd block_gram(const MfDoe& doe, KernelType kernel, const MtParams& p) {
    p.validate();
    if (p.levels() != doe.levels()) throw DimensionMismatch("parameters and data differ in fidelity count");
    std::vector<std::size_t> task;
    const Eigen::MatrixXd V = doe.stacked_designs(&task);
    return detail::block_gram_terms(V, task, kernel, p, true, false).K;
}

inline double mf_nll(const MtParams& p, const MfDoe& doe, KernelType kernel) {
    return detail::nll_from_gram(block_gram(doe, kernel, p), doe.stacked_standardized(), p.amplitude);
}

/// Box for the task-factor entries (the kernel part reuses ParameterBox).
struct TaskBox {
    double offdiag_lo = -10.0, offdiag_hi = 10.0;
    double diag_lo = 1e-3, diag_hi = 1e3;
};

struct MfFitOptions {
    std::size_t restarts = 8;
    std::uint64_t seed = 0;
    bool per_fidelity_noise = false;
    ParameterBox box{};
    TaskBox task_box{};
    LbfgsOptions lbfgs{};
};

struct MfFitResult {
    MtParams params;
    double nll = 0.0;
    bool degenerate = false;
    int failed_starts = 0;
    std::vector<double> start_nll;
    std::vector<double> final_nll;
};

namespace detail {

/// NLL and gradient of the multi-task model in the MtLayout parameters.
inline double mt_log_objective(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, const MtLayout& layout,
                               const Eigen::MatrixXd& V, const std::vector<std::size_t>& task, const Eigen::VectorXd& y,
                               KernelType kernel) {
    const auto M = layout.levels;
    const auto L = static_cast<Eigen::Index>(M);
    const MtParams p = layout.unpack(theta);
    try {
        if (!grad) {
            auto g = detail::block_gram_terms(V, task, kernel, p, layout.shared_noise, false);
            return detail::nll_from_gram(g.K, y, p.amplitude);
        }
        auto g = detail::block_gram_terms(V, task, kernel, p, layout.shared_noise, true);
        Eigen::VectorXd head;
        Eigen::MatrixXd W;
        const double value = detail::nll_from_gram(g.K, y, p.amplitude, &g.dK, &head, &W);
        grad->resize(static_cast<Eigen::Index>(layout.size()));
        grad->head(head.size()) = head;
        if (M > 1) {
            // G_ij = sum over block (i, j) of W .* S; dNLL/dB_ij = G_ij.
            Eigen::MatrixXd G = Eigen::MatrixXd::Zero(L, L);
            const Eigen::MatrixXd WS = W.cwiseProduct(g.S);
            for (Eigen::Index i = 0; i < WS.rows(); ++i)
                for (Eigen::Index j = 0; j < WS.cols(); ++j)
                    G(static_cast<Eigen::Index>(task[i]), static_cast<Eigen::Index>(task[j])) += WS(i, j);
            // dB/dL_ab = E_ab L^T + L E_ba, so dNLL/dL_ab = sum_j (G_aj + G_ja) L_jb.
            Eigen::Index k = head.size();
            const Eigen::MatrixXd Gs = G + G.transpose();
            for (Eigen::Index r = 1; r < L; ++r) {
                for (Eigen::Index c = 0; c <= r; ++c, ++k) {
                    const double d = Gs.row(r).dot(p.task.L.col(c));
                    (*grad)[k] = c == r ? d * p.task.L(r, r) : d;
                }
            }
        }
        return value;
    } catch (const IllConditionedKernel&) {
        return std::numeric_limits<double>::infinity();
    }
}

}  // namespace detail

/// Joint maximum likelihood over the base-kernel parameters and the task
/// factor L (B = L L^T stays PSD for every iterate).
inline MfFitResult mf_fit_mle(const MfDoe& doe, KernelType kernel, const MfFitOptions& opt = {}) {
    const std::size_t M = doe.levels();
    for (std::size_t m = 0; m < M; ++m)
        if (doe.count(m) < 1) throw InsufficientData("mf_fit_mle needs at least one observation per fidelity");
    if (doe.total() < (M == 1 ? 2u : 3u)) throw InsufficientData("mf_fit_mle needs at least three observations");

    detail::MtLayout layout{M, !opt.per_fidelity_noise || M == 1};
    const auto P = static_cast<Eigen::Index>(layout.size());
    Eigen::VectorXd lo(P), hi(P);
    lo[0] = std::log(opt.box.amplitude_lo);
    hi[0] = std::log(opt.box.amplitude_hi);
    lo[1] = std::log(opt.box.length_lo);
    hi[1] = std::log(opt.box.length_hi);
    Eigen::Index at = 2;
    for (std::size_t k = 0; k < layout.noise_count(); ++k, ++at) {
        lo[at] = std::log(opt.box.noise_lo);
        hi[at] = std::log(opt.box.noise_hi);
    }
    for (std::size_t r = 1; r < M; ++r) {
        for (std::size_t c = 0; c < r; ++c, ++at) {
            lo[at] = opt.task_box.offdiag_lo;
            hi[at] = opt.task_box.offdiag_hi;
        }
        lo[at] = std::log(opt.task_box.diag_lo);
        hi[at] = std::log(opt.task_box.diag_hi);
        ++at;
    }

    MfFitResult out;
    if (doe.constant) {
        Eigen::VectorXd theta = lo;
        for (Eigen::Index k = 2 + static_cast<Eigen::Index>(layout.noise_count()); k < P; ++k) theta[k] = 0.5 * (lo[k] + hi[k]);
        out.params = layout.unpack(theta);
        out.params.amplitude = opt.box.amplitude_lo;
        out.params.length_scale = std::sqrt(opt.box.length_lo * opt.box.length_hi);
        out.params.noise_var.setConstant(opt.box.noise_lo);
        out.degenerate = true;
        out.nll = mf_nll(out.params, doe, kernel);
        return out;
    }

    std::vector<std::size_t> task;
    const Eigen::MatrixXd V = doe.stacked_designs(&task);
    const Eigen::VectorXd y = doe.stacked_standardized();

    GradientObjective f = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
        return detail::mt_log_objective(theta, grad, layout, V, task, y, kernel);
    };
    const auto best = detail::multistart_minimize(f, lo, hi, opt.restarts, opt.seed, opt.lbfgs);
    out.params = layout.unpack(best.x);
    out.nll = best.value;
    out.failed_starts = best.failed_starts;
    out.start_nll = best.start_values;
    out.final_nll = best.final_values;
    return out;
}

/// Joint predictive distribution across fidelities at one design.
struct MfPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    std::size_t levels() const { return static_cast<std::size_t>(mean.size()); }
    double mean_at(std::size_t m) const { return mean[static_cast<Eigen::Index>(m)]; }
    double var_at(std::size_t m) const { return std::max(cov(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)), 0.0); }
    Posterior at(std::size_t m) const { return {mean_at(m), var_at(m)}; }
};

/// Fitted multi-task GP; immutable after construction.
class MultiTaskGP {
public:
    MultiTaskGP(MfDoe doe, KernelType kernel, MtParams params) : doe_(std::move(doe)), kernel_(kernel), params_(std::move(params)) {
        params_.validate();
        if (params_.levels() != doe_.levels()) throw DimensionMismatch("parameters and data differ in fidelity count");
        V_ = doe_.stacked_designs(&task_);
        B_ = params_.task.B();
        const auto g = detail::block_gram_terms(V_, task_, kernel_, params_, true, false);
        factor_ = detail::factorize(g.K, params_.amplitude);
        alpha_ = detail::solve(factor_, g.K, doe_.stacked_standardized());
    }

    /// Standardized-scale mean vector and covariance (not clamped).
    MfPosterior predict_standardized(const Eigen::VectorXd& x) const {
        if (static_cast<std::size_t>(x.size()) != doe_.dim()) throw DimensionMismatch("prediction point has wrong dimension");
        const auto n = V_.rows();
        const auto M = static_cast<Eigen::Index>(params_.levels());
        Eigen::VectorXd signal(n);
        for (Eigen::Index i = 0; i < n; ++i)
            signal[i] = params_.amplitude * detail::correlation(kernel_, (V_.row(i).transpose() - x).squaredNorm(), params_.length_scale);
        const double prior = params_.amplitude * detail::correlation(kernel_, 0.0, params_.length_scale);
        std::vector<Eigen::VectorXd> v(static_cast<std::size_t>(M));
        MfPosterior out{Eigen::VectorXd(M), Eigen::MatrixXd(M, M)};
        for (Eigen::Index m = 0; m < M; ++m) {
            Eigen::VectorXd k(n);
            for (Eigen::Index i = 0; i < n; ++i) k[i] = B_(m, static_cast<Eigen::Index>(task_[i])) * signal[i];
            out.mean[m] = k.dot(alpha_);
            v[static_cast<std::size_t>(m)] = factor_.llt.matrixL().solve(k);
        }
        for (Eigen::Index i = 0; i < M; ++i)
            for (Eigen::Index j = 0; j <= i; ++j)
                out.cov(i, j) = out.cov(j, i) =
                    B_(i, j) * prior - v[static_cast<std::size_t>(i)].dot(v[static_cast<std::size_t>(j)]);
        return out;
    }

    /// Raw-unit predictive distribution; diagonal clamped at zero.
    MfPosterior predict(const Eigen::VectorXd& x) const {
        MfPosterior z = predict_standardized(x);
        const double s = doe_.st.scale;
        for (Eigen::Index m = 0; m < z.mean.size(); ++m) z.mean[m] = doe_.st.restore(z.mean[m]);
        z.cov *= s * s;
        for (Eigen::Index m = 0; m < z.cov.rows(); ++m) z.cov(m, m) = std::max(z.cov(m, m), 0.0);
        return z;
    }

    const MfDoe& doe() const { return doe_; }
    KernelType kernel() const { return kernel_; }
    const MtParams& params() const { return params_; }
    double jitter() const { return factor_.jitter; }

private:
    MfDoe doe_;
    KernelType kernel_;
    MtParams params_;
    Eigen::MatrixXd V_;
    std::vector<std::size_t> task_;
    Eigen::MatrixXd B_;
    detail::Factor factor_;
    Eigen::VectorXd alpha_;
};

inline MfPosterior mf_posterior(const Eigen::VectorXd& x, const MfDoe& doe, const MtParams& p, KernelType kernel) {
    return MultiTaskGP(doe, kernel, p).predict(x);
}

inline nlohmann::json model_json(const MultiTaskGP& gp, const std::vector<std::string>& training_refs = {}) {
    const auto& p = gp.params();
    nlohmann::json L = nlohmann::json::array();
    for (Eigen::Index r = 0; r < p.task.L.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < p.task.L.cols(); ++c) row.push_back(p.task.L(r, c));
        L.push_back(row);
    }
    nlohmann::json noise = nlohmann::json::array();
    for (Eigen::Index m = 0; m < p.noise_var.size(); ++m) noise.push_back(p.noise_var[m]);
    nlohmann::json counts = nlohmann::json::array();
    for (std::size_t m = 0; m < gp.doe().levels(); ++m) counts.push_back(gp.doe().count(m));
    return {{"schema_version", 1},
            {"kind", "mtgp"},
            {"M", p.levels()},
            {"kernel", to_string(gp.kernel())},
            {"amplitude", p.amplitude},
            {"length_scale", p.length_scale},
            {"noise_var", noise},
            {"L", L},
            {"standardization", {{"mean", gp.doe().st.mean}, {"scale", gp.doe().st.scale}}},
            {"n_per_fidelity", counts},
            {"training_data", training_refs}};
}

}  // namespace mfbo
