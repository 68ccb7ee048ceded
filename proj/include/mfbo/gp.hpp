#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfbo/errors.hpp"
#include "mfbo/local_search.hpp"
#include "mfbo/sampling.hpp"

namespace mfbo {

enum class KernelType { rbf, matern52 };

inline std::string to_string(KernelType k) { return k == KernelType::rbf ? "rbf" : "matern52"; }

inline KernelType kernel_from_string(const std::string& name) {
    if (name == "rbf") return KernelType::rbf;
    if (name == "matern52" || name == "matern") return KernelType::matern52;
    throw ConfigError("unknown kernel '" + name + "' (expected rbf or matern52)");
}

/// Amplitude c, isotropic length scale lambda and noise variance s^2.
struct KernelParams {
    double amplitude = 1.0;
    double length_scale = 0.2;
    double noise_var = 1e-6;

    void validate() const {
        if (!(amplitude > 0.0) || !std::isfinite(amplitude)) throw ConfigError("kernel amplitude must be > 0");
        if (!(length_scale > 0.0) || !std::isfinite(length_scale)) throw ConfigError("kernel length scale must be > 0");
        if (!(noise_var >= 0.0) || !std::isfinite(noise_var)) throw ConfigError("kernel noise variance must be >= 0");
    }
};

namespace detail {

/// Unit-amplitude correlation as a function of squared distance.
inline double correlation(KernelType type, double r2, double lambda) {
    if (type == KernelType::rbf) return std::exp(-r2 / (2.0 * lambda * lambda));
    const double t = std::sqrt(5.0 * r2) / lambda;
    return (1.0 + t + t * t / 3.0) * std::exp(-t);
}

/// d correlation / d ln(lambda).
inline double correlation_dlog_lambda(KernelType type, double r2, double lambda) {
    if (type == KernelType::rbf) return std::exp(-r2 / (2.0 * lambda * lambda)) * r2 / (lambda * lambda);
    const double t = std::sqrt(5.0 * r2) / lambda;
    return std::exp(-t) * t * t * (1.0 + t) / 3.0;
}

inline double squared_distance(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
    return (u - v).squaredNorm();
}

}  // namespace detail

/// c * exp(-|u-v|^2 / (2 lambda^2)) + s^2 [u == v].
inline double kernel_rbf(const Eigen::VectorXd& u, const Eigen::VectorXd& v, const KernelParams& p) {
    if (u.size() != v.size()) throw DimensionMismatch("kernel arguments differ in dimension");
    const double base = p.amplitude * detail::correlation(KernelType::rbf, detail::squared_distance(u, v), p.length_scale);
    return base + (u == v ? p.noise_var : 0.0);
}

/// Matern nu=5/2: c (1 + t + t^2/3) exp(-t), t = sqrt(5) r / lambda, plus s^2 [u == v].
inline double kernel_matern52(const Eigen::VectorXd& u, const Eigen::VectorXd& v, const KernelParams& p) {
    if (u.size() != v.size()) throw DimensionMismatch("kernel arguments differ in dimension");
    const double base =
        p.amplitude * detail::correlation(KernelType::matern52, detail::squared_distance(u, v), p.length_scale);
    return base + (u == v ? p.noise_var : 0.0);
}

inline double kernel_value(KernelType type, const Eigen::VectorXd& u, const Eigen::VectorXd& v, const KernelParams& p) {
    return type == KernelType::rbf ? kernel_rbf(u, v, p) : kernel_matern52(u, v, p);
}

/// Affine map between raw responses and the zero-mean, unit-variance scale
/// the GP is fitted on.
struct Standardization {
    double mean = 0.0;
    double scale = 1.0;

    double apply(double y) const { return (y - mean) / scale; }
    double restore(double z) const { return mean + scale * z; }

    /// Sample mean and standard deviation; `constant` is set when the data
    /// has no spread (scale then defaults to 1).
    static Standardization from_data(const Eigen::VectorXd& y, bool* constant = nullptr) {
        Standardization st;
        const auto n = y.size();
        st.mean = n > 0 ? y.mean() : 0.0;
        double sd = 0.0;
        if (n > 1) sd = std::sqrt((y.array() - st.mean).square().sum() / static_cast<double>(n - 1));
        const bool flat = !(sd > 1e-300) || sd <= 1e-14 * std::abs(st.mean);
        st.scale = flat ? 1.0 : sd;
        if (constant) *constant = flat;
        return st;
    }
};

/// Design of experiments at one fidelity: unit-cube designs X, raw responses y.
struct Doe {
    DesignMatrix X;
    Eigen::VectorXd y;
    Standardization st;
    bool constant = false;

    /// Standardization estimated from y itself.
    static Doe make(DesignMatrix X, Eigen::VectorXd y) {
        if (X.rows() != static_cast<std::size_t>(y.size())) throw DimensionMismatch("Doe: X rows and y length differ");
        Doe d{std::move(X), std::move(y), {}, false};
        d.st = Standardization::from_data(d.y, &d.constant);
        return d;
    }

    /// Standardization supplied by the caller (e.g. pooled across fidelities).
    static Doe with_standardization(DesignMatrix X, Eigen::VectorXd y, Standardization st) {
        if (X.rows() != static_cast<std::size_t>(y.size())) throw DimensionMismatch("Doe: X rows and y length differ");
        bool flat = false;
        Standardization::from_data(y, &flat);
        return Doe{std::move(X), std::move(y), st, flat};
    }

    std::size_t size() const { return static_cast<std::size_t>(y.size()); }
    std::size_t dim() const { return X.cols(); }

    Eigen::VectorXd standardized() const { return ((y.array() - st.mean) / st.scale).matrix(); }
};

/// Gram matrix over the rows of X. The noise variance sits on the diagonal
/// only: each observation carries its own noise draw, so duplicated designs
/// stay distinguishable.
inline Eigen::MatrixXd gram(const DesignMatrix& X, KernelType type, const KernelParams& p) {
    const auto n = static_cast<Eigen::Index>(X.rows());
    const auto& V = X.values();
    Eigen::MatrixXd K(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = p.amplitude * detail::correlation(type, 0.0, p.length_scale) + p.noise_var;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = p.amplitude * detail::correlation(type, (V.row(i) - V.row(j)).squaredNorm(), p.length_scale);
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    return K;
}

namespace detail {

struct Factor {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;
};

/// Cholesky with the jitter ladder 0, 1e-10 c, 1e-9 c, ..., 1e-6 c.
inline Factor factorize(const Eigen::MatrixXd& K, double amplitude) {
    Factor f;
    const double ladder[] = {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6};
    for (double rel : ladder) {
        f.jitter = rel * amplitude;
        if (f.jitter == 0.0) {
            f.llt.compute(K);
        } else {
            Eigen::MatrixXd Kj = K;
            Kj.diagonal().array() += f.jitter;
            f.llt.compute(Kj);
        }
        if (f.llt.info() == Eigen::Success && f.llt.matrixLLT().diagonal().minCoeff() > 0.0) return f;
    }
    throw IllConditionedKernel("Gram matrix not positive definite even with jitter 1e-6*c");
}

/// K^{-1} z. When jitter was needed, conjugate gradients on the unjittered
/// K (preconditioned by the jittered factor) pull the solution back towards
/// the model's own system; the iterate with the smallest residual is kept,
/// which guards against singular K (e.g. duplicates with different responses).
inline Eigen::VectorXd solve(const Factor& f, const Eigen::MatrixXd& K, const Eigen::VectorXd& z) {
    Eigen::VectorXd a = f.llt.solve(z);
    if (f.jitter == 0.0) return a;
    Eigen::VectorXd r = z - K * a;
    Eigen::VectorXd best = a;
    double best_res = r.norm();
    Eigen::VectorXd s = f.llt.solve(r);
    Eigen::VectorXd d = s;
    double rs = r.dot(s);
    for (Eigen::Index it = 0; it < 2 * K.rows() + 10 && best_res > 0.0; ++it) {
        const Eigen::VectorXd Kd = K * d;
        const double curv = d.dot(Kd);
        if (!(curv > 0.0) || !(rs > 0.0)) break;
        const double step = rs / curv;
        a += step * d;
        r -= step * Kd;
        const double res = (z - K * a).norm();
        if (res < best_res) best_res = res, best = a;
        s = f.llt.solve(r);
        const double rs_next = r.dot(s);
        d = s + (rs_next / rs) * d;
        rs = rs_next;
    }
    return best;
}

/// ln det K + y^T K^{-1} y, with the gradient sum_pq (K^{-1} - a a^T)_pq dK_pq
/// for each supplied derivative matrix (a = K^{-1} y).
inline double nll_from_gram(const Eigen::MatrixXd& K, const Eigen::VectorXd& y, double amplitude,
                            const std::vector<Eigen::MatrixXd>* dK = nullptr, Eigen::VectorXd* grad = nullptr,
                            Eigen::MatrixXd* W_out = nullptr) {
    const Factor f = factorize(K, amplitude);
    const Eigen::VectorXd alpha = f.llt.solve(y);
    const double logdet = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();
    const double value = logdet + y.dot(alpha);
    if (dK && grad) {
        Eigen::MatrixXd W = f.llt.solve(Eigen::MatrixXd::Identity(K.rows(), K.cols()));
        W.noalias() -= alpha * alpha.transpose();
        grad->resize(static_cast<Eigen::Index>(dK->size()));
        for (std::size_t k = 0; k < dK->size(); ++k) (*grad)[static_cast<Eigen::Index>(k)] = W.cwiseProduct((*dK)[k]).sum();
        if (W_out) *W_out = std::move(W);
    }
    return value;
}

struct MultistartResult {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    int failed_starts = 0;
    std::vector<double> start_values;
    std::vector<double> final_values;
};

/// Local L-BFGS descents from the box centre and Sobol'-distributed points
/// (the seed selects the Sobol' offset); returns the best.
inline MultistartResult multistart_minimize(const GradientObjective& f, const Eigen::VectorXd& lo,
                                            const Eigen::VectorXd& hi, std::size_t restarts, std::uint64_t seed,
                                            const LbfgsOptions& opt = {}) {
    restarts = std::max<std::size_t>(restarts, 1);
    const auto dim = static_cast<std::size_t>(lo.size());
    std::vector<Eigen::VectorXd> starts;
    starts.push_back(0.5 * (lo + hi));
    if (restarts > 1) {
        const DesignMatrix u = sobol_sequence(dim, restarts - 1, 1 + seed % 10007);
        for (std::size_t i = 0; i < u.rows(); ++i) starts.push_back(lo + u.row(i).cwiseProduct(hi - lo));
    }
    MultistartResult best;
    for (const auto& s : starts) {
        LocalResult r = minimize_box_lbfgs(f, s, lo, hi, opt);
        best.start_values.push_back(r.start_value);
        best.final_values.push_back(r.value);
        if (!std::isfinite(r.start_value)) {
            ++best.failed_starts;
            continue;
        }
        if (r.value < best.value) {
            best.value = r.value;
            best.x = r.x;
        }
    }
    if (!std::isfinite(best.value)) throw IllConditionedKernel("likelihood could not be evaluated at any start");
    return best;
}

}  // namespace detail

/// ln det K + y^T K^{-1} y on the standardized responses.
inline double nll(const KernelParams& p, const Doe& doe, KernelType kernel) {
    p.validate();
    return detail::nll_from_gram(gram(doe.X, kernel, p), doe.standardized(), p.amplitude);
}

/// Log-space search box for (c, lambda, s^2).
struct ParameterBox {
    double amplitude_lo = 1e-3, amplitude_hi = 1e3;
    double length_lo = 1e-3, length_hi = 10.0;
    double noise_lo = 1e-8, noise_hi = 1.0;
};

struct FitOptions {
    std::size_t restarts = 8;
    std::uint64_t seed = 0;
    ParameterBox box{};
    LbfgsOptions lbfgs{};
};

struct FitResult {
    KernelParams params;
    double nll = 0.0;
    bool degenerate = false;
    int failed_starts = 0;
    std::vector<double> start_nll;
    std::vector<double> final_nll;
};

namespace detail {

inline KernelParams params_from_log(const Eigen::VectorXd& theta) {
    return {std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2])};
}

/// NLL and gradient in (ln c, ln lambda, ln s^2).
inline double gp_log_objective(const Eigen::VectorXd& theta, Eigen::VectorXd* grad, const Doe& doe, KernelType kernel,
                               const Eigen::VectorXd& y) {
    const KernelParams p = params_from_log(theta);
    const auto n = static_cast<Eigen::Index>(doe.size());
    const auto& V = doe.X.values();
    Eigen::MatrixXd K(n, n), dC(n, n), dL(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double r2 = i == j ? 0.0 : (V.row(i) - V.row(j)).squaredNorm();
            const double signal = p.amplitude * correlation(kernel, r2, p.length_scale);
            const double dl = p.amplitude * correlation_dlog_lambda(kernel, r2, p.length_scale);
            K(i, j) = K(j, i) = signal;
            dC(i, j) = dC(j, i) = signal;
            dL(i, j) = dL(j, i) = dl;
        }
        K(i, i) += p.noise_var;
    }
    try {
        if (!grad) return nll_from_gram(K, y, p.amplitude);
        std::vector<Eigen::MatrixXd> dK{std::move(dC), std::move(dL),
                                        Eigen::MatrixXd(p.noise_var * Eigen::MatrixXd::Identity(n, n))};
        return nll_from_gram(K, y, p.amplitude, &dK, grad);
    } catch (const IllConditionedKernel&) {
        return std::numeric_limits<double>::infinity();
    }
}

}  // namespace detail

/// Maximum-likelihood hyperparameters by multi-start L-BFGS in log space.
/// A response vector without spread is flagged degenerate and returned at the
/// amplitude and noise lower bounds without searching.
inline FitResult fit_mle(const Doe& doe, KernelType kernel, const FitOptions& opt = {}) {
    if (doe.size() < 2) throw InsufficientData("fit_mle needs at least two observations");
    const auto& box = opt.box;
    FitResult out;
    if (doe.constant) {
        out.params = {box.amplitude_lo, std::sqrt(box.length_lo * box.length_hi), box.noise_lo};
        out.degenerate = true;
        out.nll = nll(out.params, doe, kernel);
        return out;
    }
    Eigen::VectorXd lo(3), hi(3);
    lo << std::log(box.amplitude_lo), std::log(box.length_lo), std::log(box.noise_lo);
    hi << std::log(box.amplitude_hi), std::log(box.length_hi), std::log(box.noise_hi);
    const Eigen::VectorXd y = doe.standardized();
    GradientObjective f = [&](const Eigen::VectorXd& theta, Eigen::VectorXd* grad) {
        return detail::gp_log_objective(theta, grad, doe, kernel, y);
    };
    const auto best = detail::multistart_minimize(f, lo, hi, opt.restarts, opt.seed, opt.lbfgs);
    out.params = detail::params_from_log(best.x);
    out.nll = best.value;
    out.failed_starts = best.failed_starts;
    out.start_nll = best.start_values;
    out.final_nll = best.final_values;
    return out;
}

/// Predictive mean and variance of the latent objective (noise excluded).
struct Posterior {
    double mean = 0.0;
    double var = 0.0;

    double sd() const { return std::sqrt(std::max(var, 0.0)); }
};

/// A fitted GP: training data, kernel, hyperparameters and the cached
/// Cholesky factor. Immutable after construction.
class GaussianProcess {
public:
    GaussianProcess(Doe doe, KernelType kernel, KernelParams params)
        : doe_(std::move(doe)), kernel_(kernel), params_(params) {
        params_.validate();
        const Eigen::MatrixXd K = gram(doe_.X, kernel_, params_);
        factor_ = detail::factorize(K, params_.amplitude);
        alpha_ = detail::solve(factor_, K, doe_.standardized());
    }

    /// Mean and variance on the standardized scale; variance not clamped.
    Posterior predict_standardized(const Eigen::VectorXd& x) const {
        if (static_cast<std::size_t>(x.size()) != doe_.dim()) throw DimensionMismatch("prediction point has wrong dimension");
        const auto n = static_cast<Eigen::Index>(doe_.size());
        const auto& V = doe_.X.values();
        Eigen::VectorXd k(n);
        for (Eigen::Index i = 0; i < n; ++i)
            k[i] = params_.amplitude * detail::correlation(kernel_, (V.row(i).transpose() - x).squaredNorm(), params_.length_scale);
        const double prior = params_.amplitude * detail::correlation(kernel_, 0.0, params_.length_scale);
        const Eigen::VectorXd v = factor_.llt.matrixL().solve(k);
        return {k.dot(alpha_), prior - v.dot(v)};
    }

    /// Posterior in raw response units, variance clamped at zero.
    Posterior predict(const Eigen::VectorXd& x) const {
        const Posterior z = predict_standardized(x);
        return {doe_.st.restore(z.mean), doe_.st.scale * doe_.st.scale * std::max(z.var, 0.0)};
    }

    const Doe& doe() const { return doe_; }
    KernelType kernel() const { return kernel_; }
    const KernelParams& params() const { return params_; }
    double jitter() const { return factor_.jitter; }

private:
    Doe doe_;
    KernelType kernel_;
    KernelParams params_;
    detail::Factor factor_;
    Eigen::VectorXd alpha_;
};

/// One-off posterior at x (builds and discards the factorization).
inline Posterior posterior(const Eigen::VectorXd& x, const Doe& doe, const KernelParams& p, KernelType kernel) {
    return GaussianProcess(doe, kernel, p).predict(x);
}

inline nlohmann::json params_json(const KernelParams& p) {
    return {{"amplitude", p.amplitude}, {"length_scale", p.length_scale}, {"noise_var", p.noise_var}};
}

inline KernelParams params_from_json(const nlohmann::json& j) {
    KernelParams p{j.at("amplitude").get<double>(), j.at("length_scale").get<double>(), j.at("noise_var").get<double>()};
    p.validate();
    return p;
}

inline nlohmann::json model_json(const GaussianProcess& gp, const std::string& training_ref = {}) {
    return {{"schema_version", 1},
            {"kind", "gp"},
            {"kernel", to_string(gp.kernel())},
            {"params", params_json(gp.params())},
            {"standardization", {{"mean", gp.doe().st.mean}, {"scale", gp.doe().st.scale}}},
            {"n_train", gp.doe().size()},
            {"dim", gp.doe().dim()},
            {"jitter", gp.jitter()},
            {"training_data", training_ref}};
}

}  // namespace mfbo
