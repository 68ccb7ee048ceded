#include <cmath>

#include <Eigen/LU>
#include <gtest/gtest.h>

#include "mfbo/gp.hpp"
#include "mfbo/mtgp.hpp"
#include "mfbo/sampling.hpp"

using namespace mfbo;

namespace {

double hi_fn(const Eigen::VectorXd& x) { return std::sin(7 * x[0]) + x[0] * x.tail(x.size() - 1).sum(); }
double lo_fn(const Eigen::VectorXd& x) { return 0.7 * hi_fn(x) + 0.3 * x[0] - 0.2; }

MfDoe two_level(std::size_t n_lo, std::size_t n_hi, std::size_t dim = 2, std::size_t levels = 2) {
    std::vector<DesignMatrix> X;
    std::vector<Eigen::VectorXd> y;
    for (std::size_t m = 0; m < levels; ++m) {
        const std::size_t n = m + 1 == levels ? n_hi : n_lo;
        X.push_back(sobol_sequence(dim, n, 1 + 100 * m));
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            v[static_cast<Eigen::Index>(i)] = m + 1 == levels ? hi_fn(X[m].row(i)) : lo_fn(X[m].row(i)) + 0.1 * m;
        y.push_back(v);
    }
    return MfDoe::make(std::move(X), std::move(y));
}

MtParams sample_params(std::size_t M, bool per_noise) {
    MtParams p;
    p.amplitude = 1.4;
    p.length_scale = 0.3;
    p.noise_var = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(M), 1e-4);
    if (per_noise)
        for (Eigen::Index m = 0; m < p.noise_var.size(); ++m) p.noise_var[m] = 1e-4 * (m + 1);
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M));
    for (Eigen::Index r = 0; r < L.rows(); ++r)
        for (Eigen::Index c = 0; c <= r; ++c) L(r, c) = r == c ? (r == 0 ? 1.0 : 0.4 + 0.2 * r) : 0.9 - 0.3 * c;
    p.task.L = L;
    return p;
}

}  // namespace

TEST(MtGp, BlockGramMatchesKernel) {
    const MfDoe doe = two_level(5, 4);
    const MtParams p = sample_params(2, true);
    const Eigen::MatrixXd K = block_gram(doe, KernelType::matern52, p);
    std::vector<std::size_t> task;
    const Eigen::MatrixXd V = doe.stacked_designs(&task);
    const Eigen::MatrixXd B = p.task.L * p.task.L.transpose();
    for (Eigen::Index i = 0; i < V.rows(); ++i)
        for (Eigen::Index j = 0; j < V.rows(); ++j) {
            const auto ti = task[static_cast<std::size_t>(i)], tj = task[static_cast<std::size_t>(j)];
            const double r = (V.row(i) - V.row(j)).norm();
            const double a = std::sqrt(5.0) * r / p.length_scale;
            double ref = B(ti, tj) * p.amplitude * (1 + a + a * a / 3) * std::exp(-a);
            if (i == j) ref += p.noise_var[ti];
            EXPECT_NEAR(K(i, j), ref, 1e-14);
            EXPECT_NEAR(K(i, j), mt_kernel(V.row(i), ti, V.row(j), tj, KernelType::matern52, p), 1e-14);
        }
}

TEST(MtGp, PosteriorMatchesBruteForce) {
    const MfDoe doe = two_level(8, 5);
    const MtParams p = sample_params(2, false);
    const MultiTaskGP gp(doe, KernelType::rbf, p);
    std::vector<std::size_t> task;
    const Eigen::MatrixXd V = doe.stacked_designs(&task);
    const Eigen::MatrixXd K = block_gram(doe, KernelType::rbf, p);
    const Eigen::MatrixXd Kinv = K.fullPivLu().inverse();
    const Eigen::VectorXd z = doe.stacked_standardized();
    const Eigen::Vector2d x(0.42, 0.77);
    Eigen::MatrixXd k(V.rows(), 2);
    for (Eigen::Index i = 0; i < V.rows(); ++i)
        for (std::size_t m = 0; m < 2; ++m)
            k(i, static_cast<Eigen::Index>(m)) = mt_kernel(V.row(i), task[static_cast<std::size_t>(i)], x, m, KernelType::rbf, p) -
                                                 (V.row(i).transpose() == x ? p.noise_var[0] : 0.0);
    Eigen::Matrix2d prior;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) prior(a, b) = p.task.B()(a, b) * p.amplitude;
    const Eigen::Vector2d mean = k.transpose() * Kinv * z;
    const Eigen::Matrix2d cov = prior - k.transpose() * Kinv * k;
    const auto post = gp.predict_standardized(x);
    EXPECT_NEAR(post.mean[0], mean[0], 1e-9);
    EXPECT_NEAR(post.mean[1], mean[1], 1e-9);
    EXPECT_NEAR(post.cov(0, 0), cov(0, 0), 1e-9);
    EXPECT_NEAR(post.cov(0, 1), cov(0, 1), 1e-9);
    EXPECT_NEAR(post.cov(1, 1), cov(1, 1), 1e-9);
    const auto raw = gp.predict(x);
    EXPECT_NEAR(raw.mean_at(1), doe.st.restore(mean[1]), 1e-9);
    EXPECT_NEAR(raw.var_at(1), doe.st.scale * doe.st.scale * cov(1, 1), 1e-9);

    const double logdet = std::log(K.fullPivLu().determinant());
    EXPECT_NEAR(mf_nll(p, doe, KernelType::rbf), logdet + z.dot(Kinv * z), 1e-8);
}

struct GradCase {
    std::size_t levels;
    bool per_noise;
    KernelType kernel;
};

class MtGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(MtGradient, MatchesFiniteDifferences) {
    const auto c = GetParam();
    const MfDoe doe = two_level(7, 4, 2, c.levels);
    const detail::MtLayout layout{c.levels, !c.per_noise};
    std::vector<std::size_t> task;
    const Eigen::MatrixXd V = doe.stacked_designs(&task);
    const Eigen::VectorXd y = doe.stacked_standardized();
    Eigen::VectorXd theta(static_cast<Eigen::Index>(layout.size()));
    for (Eigen::Index k = 0; k < theta.size(); ++k) theta[k] = 0.3 * std::sin(1.7 * k + 0.4);
    theta[1] = std::log(0.35);
    for (std::size_t k = 0; k < layout.noise_count(); ++k) theta[static_cast<Eigen::Index>(2 + k)] = std::log(1e-3 * (k + 1));
    Eigen::VectorXd g;
    detail::mt_log_objective(theta, &g, layout, V, task, y, c.kernel);
    ASSERT_EQ(g.size(), theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        const double h = 1e-6;
        Eigen::VectorXd tp = theta, tm = theta;
        tp[k] += h;
        tm[k] -= h;
        const double fd = (detail::mt_log_objective(tp, nullptr, layout, V, task, y, c.kernel) -
                           detail::mt_log_objective(tm, nullptr, layout, V, task, y, c.kernel)) / (2 * h);
        EXPECT_NEAR(g[k], fd, 2e-5 * std::max(1.0, std::abs(fd))) << "parameter " << k;
    }
}

INSTANTIATE_TEST_SUITE_P(Layouts, MtGradient,
                         ::testing::Values(GradCase{2, false, KernelType::rbf}, GradCase{2, true, KernelType::matern52},
                                           GradCase{3, false, KernelType::matern52}, GradCase{3, true, KernelType::rbf}));

TEST(MtGp, IdentityTaskCovarianceDecouples) {
    const MfDoe doe = two_level(9, 6);
    const KernelParams base{1.1, 0.25, 1e-5};
    const MultiTaskGP mt(doe, KernelType::matern52, MtParams::shared(base, TaskCovariance::identity(2)));
    for (std::size_t m = 0; m < 2; ++m) {
        const GaussianProcess gp(doe.level(m), KernelType::matern52, base);
        for (const Eigen::Vector2d x : {Eigen::Vector2d(0.1, 0.9), Eigen::Vector2d(0.6, 0.3)}) {
            const auto a = mt.predict(x);
            const auto b = gp.predict(x);
            EXPECT_NEAR(a.mean_at(m), b.mean, 1e-10);
            EXPECT_NEAR(a.var_at(m), b.var, 1e-10);
            EXPECT_NEAR(a.cov(0, 1), 0.0, 1e-12);
        }
    }
}

TEST(MtGp, SingleLevelIsBitIdenticalToGp) {
    const MfDoe mdoe = two_level(0, 11, 2, 1);
    const Doe doe = Doe::make(mdoe.X[0], mdoe.y[0]);
    for (auto kt : {KernelType::rbf, KernelType::matern52}) {
        FitOptions fo;
        fo.restarts = 4;
        fo.seed = 5;
        MfFitOptions mo;
        mo.restarts = 4;
        mo.seed = 5;
        const auto a = fit_mle(doe, kt, fo);
        const auto b = mf_fit_mle(mdoe, kt, mo);
        EXPECT_EQ(a.params.amplitude, b.params.amplitude);
        EXPECT_EQ(a.params.length_scale, b.params.length_scale);
        EXPECT_EQ(a.params.noise_var, b.params.noise_var[0]);
        EXPECT_EQ(a.nll, b.nll);
        const GaussianProcess gp(doe, kt, a.params);
        const MultiTaskGP mt(mdoe, kt, b.params);
        const Eigen::Vector2d x(0.33, 0.21);
        EXPECT_EQ(gp.predict(x).mean, mt.predict(x).mean_at(0));
        EXPECT_EQ(gp.predict(x).var, mt.predict(x).var_at(0));
    }
}

TEST(MtGp, FitFindsStrongCorrelation) {
    const MfDoe doe = two_level(20, 6);
    MfFitOptions o;
    o.restarts = 6;
    const auto fit = mf_fit_mle(doe, KernelType::matern52, o);
    EXPECT_GT(fit.params.task.correlation(0, 1), 0.9);
    EXPECT_DOUBLE_EQ(fit.params.task.L(0, 0), 1.0);
    for (double s : fit.start_nll) EXPECT_LE(fit.nll, s + 1e-12);
    EXPECT_NEAR(fit.nll, mf_nll(fit.params, doe, KernelType::matern52), 1e-8);
}

TEST(MtGp, TaskCovarianceHelpers) {
    Eigen::Matrix2d ones = Eigen::Matrix2d::Ones();
    const auto t = TaskCovariance::from_matrix(ones);
    EXPECT_NEAR(t.correlation(0, 1), 1.0, 1e-9);
    Eigen::Matrix2d b;
    b << 2.0, 0.6, 0.6, 0.5;
    EXPECT_TRUE(TaskCovariance::from_matrix(b).B().isApprox(b, 1e-14));
    Eigen::Matrix2d bad;
    bad << 1.0, 2.0, 2.0, 1.0;
    EXPECT_THROW(TaskCovariance::from_matrix(bad), ConfigError);
}

TEST(MtGp, RejectsInsufficientData) {
    std::vector<DesignMatrix> X{DesignMatrix(), sobol_sequence(2, 3, 1)};
    std::vector<Eigen::VectorXd> y{Eigen::VectorXd(), Eigen::Vector3d(1, 2, 3)};
    const MfDoe doe = MfDoe::make(X, y);
    EXPECT_THROW(mf_fit_mle(doe, KernelType::rbf), InsufficientData);
    EXPECT_THROW(MultiTaskGP(two_level(4, 3), KernelType::rbf, MtParams::shared({1, 0.2, 1e-6}, TaskCovariance::identity(3))),
                 DimensionMismatch);
}

TEST(MtGp, DegenerateDataGivesIdentityTask) {
    std::vector<DesignMatrix> X{sobol_sequence(1, 4, 1), sobol_sequence(1, 3, 9)};
    std::vector<Eigen::VectorXd> y{Eigen::VectorXd::Constant(4, 2.0), Eigen::VectorXd::Constant(3, 2.0)};
    const auto fit = mf_fit_mle(MfDoe::make(X, y), KernelType::rbf);
    EXPECT_TRUE(fit.degenerate);
    EXPECT_TRUE(fit.params.task.L.isApprox(Eigen::Matrix2d::Identity()));
}
