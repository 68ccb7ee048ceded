// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <regex>
#include <sstream>
#include <string>

#include <Eigen/LU>

#include "mfbo/cli.hpp"
#include "mfbo/optimizer.hpp"

using namespace mfbo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// |a - b| relative to |b|, with an absolute floor for values that are near zero.
double rel_err(double a, double b, double floor) { return std::abs(a - b) / std::max(std::abs(b), floor); }

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

long double k_ref(KernelType t, const Eigen::VectorXd& u, const Eigen::VectorXd& v, const KernelParams& p) {
    long double r2 = 0;
    for (Eigen::Index i = 0; i < u.size(); ++i) r2 += static_cast<long double>(u[i] - v[i]) * (u[i] - v[i]);
    const long double r = std::sqrt(r2), l = p.length_scale;
    if (t == KernelType::rbf) return p.amplitude * std::exp(-r2 / (2 * l * l));
    const long double a = std::sqrt(5.0L) * r / l;
    return p.amplitude * (1 + a + 5 * r2 / (3 * l * l)) * std::exp(-a);
}

struct Instance {
    Doe doe;
    KernelType kernel;
    KernelParams p;
};

Instance random_instance(std::mt19937_64& rng, double noise) {
    std::uniform_int_distribution<int> n_dist(3, 20), d_dist(1, 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = n_dist(rng), d = d_dist(rng);
    Eigen::MatrixXd X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = u(rng);
    Eigen::VectorXd y(n);
    const double w = 2 + 8 * u(rng), shift = 5 * (u(rng) - 0.5);
    for (int i = 0; i < n; ++i) y[i] = std::sin(w * X(i, 0)) + X.row(i).sum() * X(i, d - 1) + shift;
    const KernelType kt = u(rng) < 0.5 ? KernelType::rbf : KernelType::matern52;
    const KernelParams p{0.5 + 1.5 * u(rng), 0.05 + 0.35 * u(rng), noise};
    return {Doe::make(DesignMatrix(X), y), kt, p};
}

// --- 1 ---------------------------------------------------------------------
Outcome sensitivity_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    const double a = 7.0, b = 0.1, pi4 = std::pow(std::numbers::pi, 4), pi8 = pi4 * pi4;
    const double v1 = 0.5 * (1 + b * pi4 / 5) * (1 + b * pi4 / 5), v2 = a * a / 8, v13 = 8 * b * b * pi8 / 225;
    const double v = v1 + v2 + v13;
    const double s1[] = {v1 / v, v2 / v, 0.0}, st[] = {(v1 + v13) / v, v2 / v, v13 / v};
    const auto f = make_benchmark("ishigami");
    const auto set = saltelli_sample(3, 1 << 13);
    auto eval = [&](const DesignMatrix& X) {
        Eigen::VectorXd y(static_cast<Eigen::Index>(X.rows()));
        for (std::size_t r = 0; r < X.rows(); ++r) y[static_cast<Eigen::Index>(r)] = f->evaluate(X.row(r), 0);
        return y;
    };
    SaltelliEvaluations ev;
    ev.f_A = eval(set.A);
    ev.f_B = eval(set.B);
    for (const auto& ab : set.AB) ev.f_AB.push_back(eval(ab));
    const auto idx = sobol_indices(ev);
    double e1 = 0, et = 0;
    for (int i = 0; i < 3; ++i) {
        e1 = std::max(e1, std::abs(idx.first_order[i] - s1[i]));
        et = std::max(et, std::abs(idx.total_order[i] - st[i]));
    }
    const double secs = seconds_since(t0);
    return {e1 <= 0.02 && et <= 0.03 && secs < 10.0,
            fmt("max |S1 err| %.4f (<= 0.02), max |ST err| %.4f (<= 0.03), %.2f s", e1, et, secs)};
}

// --- 2 ---------------------------------------------------------------------
Outcome saltelli_structure() {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> d_dist(2, 6), n_dist(2, 300), skip_dist(0, 1000);
    std::size_t checked = 0, bad = 0, trials = 0;
    for (int t = 0; t < 60; ++t, ++trials) {
        const std::size_t D = static_cast<std::size_t>(d_dist(rng)), N = static_cast<std::size_t>(n_dist(rng));
        const auto set = saltelli_sample(D, N, static_cast<std::uint64_t>(skip_dist(rng)));
        if (set.total_count() != N * (D + 2) || set.total_count() % (D + 2) != 0 || set.stacked().rows() != N * (D + 2)) ++bad;
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t r = 0; r < N; ++r)
                for (std::size_t c = 0; c < D; ++c, ++checked)
                    if (set.AB[i](r, c) != (c == i ? set.B(r, c) : set.A(r, c))) ++bad;
    }
    return {bad == 0, fmt("%zu random (D, N) sets, %zu AB entries checked, %zu violations", trials, checked, bad)};
}

// --- 3 ---------------------------------------------------------------------
Outcome gp_correctness() {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double interp = 0, mean_err = 0, var_err = 0, nll_err = 0;
    const int trials = 200;
    for (int t = 0; t < trials; ++t) {
        // Noiseless fit must reproduce the training responses.
        const auto ni = random_instance(rng, 0.0);
        const GaussianProcess g0(ni.doe, ni.kernel, ni.p);
        for (std::size_t i = 0; i < ni.doe.size(); ++i)
            interp = std::max(interp, std::abs(g0.predict(ni.doe.X.row(i)).mean - ni.doe.y[static_cast<Eigen::Index>(i)]));

        // Posterior and likelihood against dense long-double linear algebra.
        const auto in = random_instance(rng, u(rng) < 0.5 ? 1e-6 : 1e-3);
        const GaussianProcess gp(in.doe, in.kernel, in.p);
        const auto n = static_cast<Eigen::Index>(in.doe.size());
        LMatrix K(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                K(i, j) = k_ref(in.kernel, in.doe.X.row(i), in.doe.X.row(j), in.p) + (i == j ? in.p.noise_var + gp.jitter() : 0.0);
        const Eigen::FullPivLU<LMatrix> lu(K);
        const LVector z = in.doe.standardized().cast<long double>();
        const LVector Kz = lu.solve(z);
        for (int q = 0; q < 5; ++q) {
            Eigen::VectorXd x(static_cast<Eigen::Index>(in.doe.dim()));
            for (Eigen::Index c = 0; c < x.size(); ++c) x[c] = u(rng);
            LVector k(n);
            for (Eigen::Index i = 0; i < n; ++i) k[i] = k_ref(in.kernel, in.doe.X.row(i), x, in.p);
            const double m_ref = static_cast<double>(k.dot(Kz));
            const double v_ref = static_cast<double>(in.p.amplitude - k.dot(lu.solve(k)));
            const auto post = gp.predict_standardized(x);
            mean_err = std::max(mean_err, rel_err(post.mean, m_ref, 1e-3));
            var_err = std::max(var_err, rel_err(post.var, v_ref, 1e-3 * in.p.amplitude));
        }
        long double logdet = 0;
        const LMatrix U = lu.matrixLU().triangularView<Eigen::Upper>();
        for (Eigen::Index i = 0; i < n; ++i) logdet += std::log(std::abs(U(i, i)));
        const double nll_ref = static_cast<double>(logdet + z.dot(Kz));
        nll_err = std::max(nll_err, rel_err(nll(in.p, in.doe, in.kernel), nll_ref, 1.0));
    }
    return {interp <= 1e-6 && mean_err <= 1e-8 && var_err <= 1e-8 && nll_err <= 1e-8,
            fmt("%d instances: interpolation %.1e (<= 1e-6), mean rel %.1e, var rel %.1e, NLL rel %.1e (<= 1e-8)", trials,
                interp, mean_err, var_err, nll_err)};
}

// --- 4 ---------------------------------------------------------------------
Outcome mtgp_reduction() {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double err = 0;
    for (int t = 0; t < 50; ++t) {
        const std::size_t M = 2 + static_cast<std::size_t>(t % 2), D = 1 + static_cast<std::size_t>(t % 3);
        std::vector<DesignMatrix> X;
        std::vector<Eigen::VectorXd> y;
        for (std::size_t m = 0; m < M; ++m) {
            const int n = 3 + static_cast<int>(u(rng) * 10);
            Eigen::MatrixXd V(n, static_cast<Eigen::Index>(D));
            for (int i = 0; i < V.size(); ++i) V.data()[i] = u(rng);
            Eigen::VectorXd v(n);
            for (int i = 0; i < n; ++i) v[i] = std::cos(5 * V(i, 0) + static_cast<double>(m)) + V.row(i).sum();
            X.emplace_back(V);
            y.push_back(v);
        }
        const MfDoe doe = MfDoe::make(X, y);
        const KernelParams base{0.5 + u(rng), 0.1 + 0.4 * u(rng), 1e-5};
        const KernelType kt = t % 2 ? KernelType::rbf : KernelType::matern52;
        const MultiTaskGP mt(doe, kt, MtParams::shared(base, TaskCovariance::identity(M)));
        for (std::size_t m = 0; m < M; ++m) {
            const GaussianProcess gp(doe.level(m), kt, base);
            for (int q = 0; q < 5; ++q) {
                Eigen::VectorXd x(static_cast<Eigen::Index>(D));
                for (Eigen::Index c = 0; c < x.size(); ++c) x[c] = u(rng);
                const auto a = mt.predict(x);
                const auto b = gp.predict(x);
                err = std::max({err, rel_err(a.mean_at(m), b.mean, 1e-3), rel_err(a.var_at(m), b.var, 1e-3)});
            }
        }
    }
    std::size_t same = 0, runs = 0;
    for (const char* name : {"quadratic1d", "hartmann3"}) {
        // Highest fidelity only, as a single-fidelity objective.
        const auto full = make_benchmark(name);
        ObjectiveSpec spec = full->spec();
        const std::size_t top = spec.fidelities - 1;
        spec.fidelities = 1;
        spec.cost = {1.0};
        spec.correlation.reset();
        const auto f = std::make_shared<FunctionObjective>(
            spec, [full, top](const Eigen::VectorXd& x, std::size_t) { return full->evaluate(x, top); });
        for (std::uint64_t seed = 0; seed < 3; ++seed, ++runs) {
            InitialDesignOptions io;
            io.budget = 2.0 + 2.0 * static_cast<double>(f->spec().dim);
            io.seed = seed;
            const auto h0 = build_initial_doe(*f, io);
            LoopOptions lo;
            lo.iterations = 6;
            lo.fit_restarts = 3;
            lo.seed = seed;
            lo.kernel = seed % 2 ? KernelType::matern52 : KernelType::rbf;
            const auto bo = run_bo(*f, h0, lo);
            lo.acquisition = AcquisitionKind::vf_logei;
            const auto mf = run_mfbo(*f, h0, lo);
            bool eq = bo.history.size() == mf.history.size();
            for (std::size_t k = 0; eq && k < bo.history.size(); ++k)
                eq = bo.history.records[k].x == mf.history.records[k].x && bo.history.records[k].value == mf.history.records[k].value;
            same += eq;
        }
    }
    return {err <= 1e-8 && same == runs,
            fmt("B = I max rel diff %.1e (<= 1e-8); M = 1 loops bit-identical in %zu/%zu seeded runs", err, same, runs)};
}

// --- 5 ---------------------------------------------------------------------
Outcome acquisition_consistency() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0;
    std::size_t compared = 0;
    for (int i = 0; i < 10000; ++i) {
        const double mu = 10 * (u(rng) - 0.5), sigma = std::exp(6 * u(rng) - 4), best = 10 * (u(rng) - 0.5);
        const Sense s = i % 2 ? Sense::maximize : Sense::minimize;
        const double e = ei(mu, sigma, best, s);
        if (!(e > 1e-10)) continue;
        ++compared;
        worst = std::max(worst, std::abs(std::exp(log_ei(mu, sigma, best, s)) - e) / e);
    }
    // Top fidelity of a fitted multi-task model: VF-LogEI reduces to LogEI.
    const auto f = make_benchmark("tunable2d");
    InitialDesignOptions io;
    io.budget = 6;
    const auto h = build_initial_doe(*f, io);
    const MfDoe doe = detail::history_mfdoe(h, 2);
    const MultiTaskGP gp(doe, KernelType::rbf, mf_fit_mle(doe, KernelType::rbf).params);
    AcquisitionContext ctx;
    ctx.y_best = detail::hf_incumbent(h);
    ctx.cost_ratio = {0.11, 1.0};
    ctx.rho = {0.7, 1.0};
    std::size_t exact = 0, points = 0;
    for (int i = 0; i < 1000; ++i, ++points) {
        const Eigen::Vector2d x(u(rng), u(rng));
        const auto post = gp.predict(x);
        exact += vf_log_ei(post, 1, ctx) == log_ei(post.mean_at(1), post.at(1).sd(), ctx.y_best);
    }
    return {compared > 1000 && worst <= 1e-8 && exact == points,
            fmt("max rel |exp(log_ei) - ei| %.1e over %zu points (<= 1e-8); VF-LogEI == LogEI at top fidelity %zu/%zu", worst,
                compared, exact, points)};
}

// --- 6 ---------------------------------------------------------------------
Outcome acquisition_maximization() {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int ok = 0;
    const int trials = 100;
    double worst_gap = 0;
    for (int t = 0; t < trials; ++t) {
        const std::size_t D = 1 + static_cast<std::size_t>(t % 3);
        const int n = 4 + static_cast<int>(u(rng) * 10);
        Eigen::MatrixXd X(n, static_cast<Eigen::Index>(D));
        for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
        Eigen::VectorXd y(n);
        const double w = 3 + 9 * u(rng);
        for (int i = 0; i < n; ++i) y[i] = std::sin(w * X(i, 0)) * std::cos(3 * X.row(i).sum()) + 0.3 * u(rng);
        const KernelType kt = t % 2 ? KernelType::matern52 : KernelType::rbf;
        const GaussianProcess gp(Doe::make(DesignMatrix(X), y), kt, {1.0, 0.08 + 0.25 * u(rng), 1e-6});
        AcquisitionContext ctx;
        ctx.y_best = y.maxCoeff();
        ctx.beta = 2.0;
        std::function<double(const Eigen::VectorXd&)> acq;
        switch (t % 3) {
            case 0: acq = [&](const Eigen::VectorXd& x) { return ei(x, gp, ctx); }; break;
            case 1: acq = [&](const Eigen::VectorXd& x) { return log_ei(x, gp, ctx); }; break;
            default: acq = [&](const Eigen::VectorXd& x) { return ucb(x, gp, ctx); }; break;
        }
        // Dense grid with at least 10^4 points.
        const int per_axis = D == 1 ? 10000 : D == 2 ? 100 : 22;
        double grid_best = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd grid_arg(static_cast<Eigen::Index>(D)), x(static_cast<Eigen::Index>(D));
        std::vector<int> idx(D, 0);
        while (true) {
            for (std::size_t c = 0; c < D; ++c) x[static_cast<Eigen::Index>(c)] = idx[c] / double(per_axis - 1);
            const double v = acq(x);
            if (v > grid_best) grid_best = v, grid_arg = x;
            std::size_t c = 0;
            while (c < D && ++idx[c] == per_axis) idx[c++] = 0;
            if (c == D) break;
        }
        const auto r = maximize(acq, D, static_cast<std::uint64_t>(t));
        bool good = r.value >= grid_best - 1e-3;
        if (D == 1 && r.value < grid_best) good = good && std::abs(r.x[0] - grid_arg[0]) <= 1e-3;
        worst_gap = std::max(worst_gap, grid_best - r.value);
        ok += good;
    }
    return {ok >= 95, fmt("%d/%d trials within 1e-3 of the dense-grid maximum (>= 95); worst shortfall %.1e", ok, trials,
                          std::max(worst_gap, 0.0))};
}

// --- 7 ---------------------------------------------------------------------
Outcome budget_semantics() {
    ObjectiveSpec s;
    s.name = "mock";
    s.dim = 2;
    s.fidelities = 2;
    s.cost = {0.11, 1.0};
    s.bounds = Bounds::unit(2);
    const auto f = std::make_shared<FunctionObjective>(s, [](const Eigen::VectorXd& x, std::size_t m) -> double {
        if (x[0] > 0.9 && x[1] > 0.9) throw EvaluationError("mock failure");
        const double hf = std::sin(7 * x[0]) * std::sin(5 * x[1]) + 0.3 * x[0];
        return m == 1 ? hf : 0.85 * hf + 0.1 * std::cos(3 * x[0]) - 0.15;
    });
    bool ok = true;
    std::string detail;
    for (auto acq : {AcquisitionKind::vf_logei, AcquisitionKind::vf_ucb}) {
        InitialDesignOptions io;
        io.budget = 10;
        const auto h0 = build_initial_doe(*f, io);
        LoopOptions lo;
        lo.acquisition = acq;
        lo.budget = 50;
        lo.iterations = 1000;
        lo.fit_restarts = 1;
        lo.maximize.pool = 128;
        lo.maximize.starts = 4;
        double running = 0, worst_prefix = 0, max_spent = 0;
        lo.on_record = [&](const EvaluationRecord& r) {
            if (r.phase == "initial") return;
            running += r.cost;
            max_spent = std::max(max_spent, running);
        };
        const auto r = run_mfbo(*f, h0, lo);
        double sum = 0;
        std::size_t lf = 0, hf = 0, failed = 0;
        for (const auto& rec : r.history.records) {
            if (rec.phase == "initial") continue;
            sum += rec.cost;
            (rec.fidelity == 0 ? lf : hf) += 1;
            failed += !rec.ok;
            worst_prefix = std::max(worst_prefix, rec.cumulative_cost - h0.total_cost() - 50.0);
        }
        const double diff = std::abs(r.ledger.spent - sum);
        const bool pass = r.ledger.spent <= 50.0 && max_spent <= 50.0 && worst_prefix <= 1e-12 && diff <= 1e-12 &&
                          !r.ledger.any_affordable();
        ok = ok && pass;
        detail += fmt("%s spent %.2f of 50 (%zu LF, %zu HF, %zu failed), |ledger - sum| %.1e; ", to_string(acq).c_str(),
                      r.ledger.spent, lf, hf, failed, diff);
    }
    return {ok, detail.substr(0, detail.size() - 2)};
}

// --- 8 ---------------------------------------------------------------------
Outcome mfbo_advantage() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto f = make_benchmark("tunable2d");
    const std::vector<double> cost{0.11, 1.0};
    const double budget = 10;
    std::vector<double> bo, mf;
    int wins = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        InitialDesignOptions io;
        io.budget = budget;
        io.cost = cost;
        io.seed = static_cast<std::uint64_t>(s);
        io.top_only = true;
        LoopOptions lo;
        lo.cost = cost;
        lo.seed = static_cast<std::uint64_t>(s);
        lo.fit_restarts = 4;
        lo.kernel = KernelType::rbf;
        lo.acquisition = AcquisitionKind::logei;
        lo.iterations = static_cast<std::size_t>(budget);  // one HF evaluation per iteration
        const auto rb = run_bo(*f, build_initial_doe(*f, io), lo);
        io.top_only = false;
        lo.acquisition = AcquisitionKind::vf_logei;
        lo.budget = budget;
        lo.iterations = 40;
        const auto rm = run_mfbo(*f, build_initial_doe(*f, io), lo);
        bo.push_back(rb.recommendation.y);
        mf.push_back(rm.recommendation.y);
        wins += rm.recommendation.y >= rb.recommendation.y;
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return 0.5 * (v[(v.size() - 1) / 2] + v[v.size() / 2]);
    };
    const double mb = median(bo), mm = median(mf), secs = seconds_since(t0);
    return {mm >= mb && wins >= 12 && secs < 600,
            fmt("tunable2d (corr %.2f, CR 0.11), %g + %g HF-eq: median MFBO %.5f vs BO %.5f, MFBO wins %d/%d, %.0f s",
                *f->spec().correlation, budget, budget, mm, mb, wins, seeds, secs)};
}

// --- 9 ---------------------------------------------------------------------
Outcome ea_ingestion() {
    double worst = 0;
    auto check = [&](std::function<double(double)> P, double dmax, double ea_s, double exact) {
        ForceDisplacementCurve c;
        for (int i = 0; i <= 4000; ++i) {
            c.x.push_back(dmax * i / 4000.0);
            c.P.push_back(P(c.x.back()));
        }
        c.delta_max = dmax;
        c.ea_solid = ea_s;
        worst = std::max(worst, std::abs(ea_normalized(c) - exact));
    };
    check([](double) { return 3.0; }, 2.0, 4.0, 1.5);
    check([](double x) { return 2.0 * x + 1.0; }, 3.0, 2.0, 6.0);
    check([](double x) { return std::sin(x); }, std::numbers::pi, 1.0, 2.0);
    check([](double x) { return 5.0 + std::sin(4.0 * x); }, 2.5, 10.0, (12.5 + (1 - std::cos(10.0)) / 4.0) / 10.0);
    return {worst <= 1e-4, fmt("max |error| %.1e on constant, linear and sinusoidal curves (<= 1e-4)", worst)};
}

// --- 10 --------------------------------------------------------------------
std::string masked(const fs::path& p) {
    static const std::regex wall("\"wall_seconds\": ?[^,}\\n]*");
    return std::regex_replace(io::read_text(p), wall, "\"wall_seconds\":0");
}

// Compares two directory trees file by file; returns the first difference.
std::string tree_diff(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return "file lists differ";
    for (const auto& f : fa)
        if (masked(a / f) != masked(b / f)) return f.string() + " differs";
    return {};
}

Outcome cli_reproducibility() {
    const fs::path root = fs::path(MFBO_TEST_TMP) / "acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    io::write_text(root / "sa.json", R"({
  "seed": 11,
  "objective": {"benchmark": "ishigami"},
  "sampler": {"n_base": 256},
  "evaluate": {"designs": "sa/designs.csv"},
  "analyze": {"samples": "sa", "responses": "sa/responses.csv", "n_boot": 200}
})");
    io::write_text(root / "bo.json", R"({
  "seed": 4,
  "objective": {"benchmark": "forrester"},
  "optimize": {"acquisition": "vf-logei", "initial_budget": 4, "budget": 4, "iterations": 15, "fit_restarts": 2}
})");
    const std::string sa = (root / "sa.json").string(), bo = (root / "bo.json").string();
    struct Step {
        std::vector<std::string> args;
        std::string out;
    };
    const std::vector<Step> steps = {
        {{"sample", "--config", sa}, "sa"},
        {{"evaluate", "--config", sa, "--jobs", "4"}, "sa"},
        {{"analyze", "--config", sa}, "an"},
        {{"optimize", "--config", bo}, "run1"},
        {{"optimize", "--config", bo, "--seed", "9"}, "run2"},
        {{"report", (root / "run1").string(), (root / "run2").string()}, "rep"},
    };
    std::size_t identical = 0;
    std::string detail;
    for (const auto& step : steps) {
        auto args = step.args;
        args.insert(args.end(), {"--out", (root / step.out).string()});
        auto call = [&] {
            std::vector<const char*> argv{"mfbo"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
            if (code != 0) detail += args[0] + " exited " + std::to_string(code) + ": " + err.str();
            return code;
        };
        // Snapshot the directory before this step so both runs start from the same state.
        const fs::path before = root / (step.out + ".before");
        fs::remove_all(before);
        if (fs::exists(root / step.out)) fs::copy(root / step.out, before, fs::copy_options::recursive);
        if (call() != 0) continue;
        const fs::path first = root / (step.out + ".first");
        fs::remove_all(first);
        fs::rename(root / step.out, first);
        if (fs::exists(before)) fs::copy(before, root / step.out, fs::copy_options::recursive);
        if (call() != 0) continue;
        const auto diff = tree_diff(first, root / step.out);
        if (diff.empty()) ++identical;
        else detail += args[0] + ": " + diff + "; ";
        fs::remove_all(first);
        fs::remove_all(before);
    }
    return {identical == steps.size(), fmt("%zu/%zu commands reproduced their outputs byte-identically (wall_seconds masked)%s%s",
                                            identical, steps.size(), detail.empty() ? "" : "; ", detail.c_str())};
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"sensitivity oracle (Ishigami)", sensitivity_oracle},
        {"Saltelli structure", saltelli_structure},
        {"GP correctness", gp_correctness},
        {"MTGP reduction", mtgp_reduction},
        {"acquisition consistency", acquisition_consistency},
        {"acquisition maximization", acquisition_maximization},
        {"budget semantics", budget_semantics},
        {"MFBO advantage", mfbo_advantage},
        {"EA ingestion", ea_ingestion},
        {"CLI reproducibility", cli_reproducibility},
    };
    int failed = 0, k = 0;
    for (const auto& [name, fn] : criteria) {
        ++k;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", k, name, o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
