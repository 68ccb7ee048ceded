#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace mfbo {

/// Objective for gradient-based minimization. Fills `grad` when non-null;
/// returns +inf (or NaN) for infeasible points.
using GradientObjective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct LbfgsOptions {
    int max_iterations = 100;
    int memory = 8;
    double gradient_tolerance = 1e-6;
    double relative_tolerance = 1e-10;
};

struct LocalResult {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    double start_value = std::numeric_limits<double>::infinity();
    int evaluations = 0;
};

namespace detail {

inline Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace detail

/// Box-constrained L-BFGS with projected backtracking (Armijo) steps.
/// Variables pinned at a bound by the gradient are frozen for the step.
/// The returned value never exceeds the start value.
inline LocalResult minimize_box_lbfgs(const GradientObjective& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                                      const Eigen::VectorXd& hi, const LbfgsOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    LocalResult res;
    res.x = detail::project(x0, lo, hi);
    Eigen::VectorXd g(n);
    res.value = f(res.x, &g);
    res.start_value = res.value;
    res.evaluations = 1;
    if (!std::isfinite(res.value) || !g.allFinite()) return res;

    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> history;  // (s, y)
    auto free_mask = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& grad) {
        Eigen::VectorXd mask = Eigen::VectorXd::Ones(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double width = hi[i] - lo[i];
            const double eps = 1e-12 * std::max(1.0, width);
            if ((x[i] <= lo[i] + eps && grad[i] > 0.0) || (x[i] >= hi[i] - eps && grad[i] < 0.0)) mask[i] = 0.0;
        }
        return mask;
    };

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        const Eigen::VectorXd mask = free_mask(res.x, g);
        const Eigen::VectorXd pg = g.cwiseProduct(mask);
        if (pg.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) break;

        // Two-loop recursion restricted to the free variables.
        Eigen::VectorXd q = pg;
        std::vector<double> alphas(history.size());
        for (std::size_t k = history.size(); k-- > 0;) {
            const auto& [s, y] = history[k];
            const double rho = 1.0 / y.cwiseProduct(mask).dot(s.cwiseProduct(mask));
            alphas[k] = rho * s.cwiseProduct(mask).dot(q);
            q -= alphas[k] * y.cwiseProduct(mask);
        }
        if (!history.empty()) {
            const auto& [s, y] = history.back();
            const double sy = s.cwiseProduct(mask).dot(y.cwiseProduct(mask));
            const double yy = y.cwiseProduct(mask).squaredNorm();
            if (sy > 0.0 && yy > 0.0) q *= sy / yy;
        }
        for (std::size_t k = 0; k < history.size(); ++k) {
            const auto& [s, y] = history[k];
            const double rho = 1.0 / y.cwiseProduct(mask).dot(s.cwiseProduct(mask));
            const double beta = rho * y.cwiseProduct(mask).dot(q);
            q += (alphas[k] - beta) * s.cwiseProduct(mask);
        }
        Eigen::VectorXd dir = (-q).cwiseProduct(mask);
        if (!dir.allFinite() || dir.dot(pg) >= 0.0) {
            history.clear();
            dir = -pg;
        }
        if (history.empty()) {
            const double norm = dir.lpNorm<Eigen::Infinity>();
            if (norm > 1.0) dir /= norm;
        }

        double step = 1.0;
        bool accepted = false;
        Eigen::VectorXd x_new(n), g_new(n);
        double f_new = 0.0;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = detail::project(res.x + step * dir, lo, hi);
            f_new = f(x_new, &g_new);
            ++res.evaluations;
            if (std::isfinite(f_new) && g_new.allFinite() && f_new <= res.value + 1e-4 * g.dot(x_new - res.x)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (history.empty()) break;
            history.clear();
            continue;
        }
        const Eigen::VectorXd s = x_new - res.x;
        const Eigen::VectorXd y = g_new - g;
        const double decrease = res.value - f_new;
        res.x = x_new;
        res.value = f_new;
        g = g_new;
        if (s.dot(y) > 1e-12 * std::max(1.0, s.norm() * y.norm())) {
            history.emplace_back(s, y);
            if (static_cast<int>(history.size()) > opt.memory) history.pop_front();
        }
        if (decrease <= opt.relative_tolerance * std::max(1.0, std::abs(res.value))) break;
    }
    return res;
}

struct NelderMeadOptions {
    int max_evaluations = 200;
    double initial_step = 0.05;
    double tolerance = 1e-7;
};

/// Maximizes `f` over the box [lo, hi] with a Nelder-Mead simplex whose
/// trial points are projected into the box. Result value >= f(x0).
inline LocalResult maximize_box_nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                                            const Eigen::VectorXd& hi, const NelderMeadOptions& opt = {}) {
    const Eigen::Index n = x0.size();
    LocalResult res;
    // Minimize g = -f; non-finite values rank last.
    auto g = [&](const Eigen::VectorXd& x) {
        ++res.evaluations;
        const double v = f(x);
        return std::isnan(v) ? std::numeric_limits<double>::infinity() : -v;
    };
    Eigen::VectorXd start = detail::project(x0, lo, hi);
    double start_value = g(start);
    res.start_value = -start_value;
    // Projection can flatten the simplex onto a face of the box; restarting
    // from the incumbent with a fresh simplex recovers the lost directions.
    for (int round = 0; round < 4 && res.evaluations < opt.max_evaluations; ++round) {
        std::vector<Eigen::VectorXd> simplex;
        std::vector<double> values;
        simplex.push_back(start);
        values.push_back(start_value);
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXd v = simplex[0];
            const double width = hi[i] - lo[i];
            const double step = opt.initial_step * width;
            v[i] = (v[i] + step <= hi[i]) ? v[i] + step : v[i] - step;
            simplex.push_back(detail::project(v, lo, hi));
            values.push_back(g(simplex.back()));
        }
        std::vector<std::size_t> order(simplex.size());
        while (res.evaluations < opt.max_evaluations) {
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
            const auto best = order.front();
            const auto worst = order.back();
            const auto second = order[order.size() - 2];
            double spread = 0.0;
            for (const auto& v : simplex) spread = std::max(spread, (v - simplex[best]).lpNorm<Eigen::Infinity>());
            if (spread < opt.tolerance) break;

            Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
            for (std::size_t k = 0; k < simplex.size(); ++k)
                if (k != worst) centroid += simplex[k];
            centroid /= static_cast<double>(n);

            const Eigen::VectorXd xr = detail::project(centroid + (centroid - simplex[worst]), lo, hi);
            const double fr = g(xr);
            if (fr < values[best]) {
                const Eigen::VectorXd xe = detail::project(centroid + 2.0 * (centroid - simplex[worst]), lo, hi);
                const double fe = g(xe);
                if (fe < fr) {
                    simplex[worst] = xe;
                    values[worst] = fe;
                } else {
                    simplex[worst] = xr;
                    values[worst] = fr;
                }
                continue;
            }
            if (fr < values[second]) {
                simplex[worst] = xr;
                values[worst] = fr;
                continue;
            }
            const bool outside = fr < values[worst];
            const Eigen::VectorXd xc = outside ? Eigen::VectorXd(detail::project(centroid + 0.5 * (xr - centroid), lo, hi))
                                               : Eigen::VectorXd(centroid + 0.5 * (simplex[worst] - centroid));
            const double fc = g(xc);
            if (fc < std::min(fr, values[worst])) {
                simplex[worst] = xc;
                values[worst] = fc;
                continue;
            }
            for (std::size_t k = 0; k < simplex.size(); ++k) {
                if (k == best) continue;
                simplex[k] = simplex[best] + 0.5 * (simplex[k] - simplex[best]);
                values[k] = g(simplex[k]);
            }
        }
        std::size_t best = 0;
        for (std::size_t k = 1; k < simplex.size(); ++k)
            if (values[k] < values[best]) best = k;
        const bool improved = values[best] < start_value - opt.tolerance * std::max(1.0, std::abs(start_value));
        if (values[best] < start_value) {
            start = simplex[best];
            start_value = values[best];
        }
        if (!improved) break;
    }
    res.x = start;
    res.value = -start_value;
    return res;
}

}  // namespace mfbo
