#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfbo/acquisition.hpp"
#include "mfbo/errors.hpp"
#include "mfbo/io.hpp"
#include "mfbo/sampling.hpp"

namespace mfbo {

/// Static description of an objective. Fidelities are 0-based in code
/// (0 = cheapest, M-1 = the reference fidelity).
struct ObjectiveSpec {
    std::string name;
    std::string version = "1";
    std::size_t dim = 1;
    std::size_t fidelities = 1;
    std::vector<double> cost;
    Bounds bounds;
    Sense sense = Sense::maximize;
    std::optional<double> known_optimum;
    std::optional<Eigen::VectorXd> known_argmax;  // unit cube
    std::optional<double> correlation;            // lowest vs highest fidelity, Sobol' probe grid of 2^12

    void validate() const {
        if (name.empty()) throw ConfigError("objective needs a name");
        if (dim == 0 || fidelities == 0) throw ConfigError("objective needs D >= 1 and M >= 1");
        if (bounds.dim() != dim) throw DimensionMismatch("objective bounds do not match D");
        if (cost.size() != fidelities) throw ConfigError("objective needs one cost per fidelity");
        for (std::size_t m = 0; m < cost.size(); ++m) {
            if (!(cost[m] > 0.0)) throw ConfigError("fidelity costs must be positive");
            if (m > 0 && cost[m] < cost[m - 1]) throw ConfigError("fidelity costs must be nondecreasing");
        }
    }

    std::vector<double> cost_ratios() const {
        std::vector<double> r;
        for (double c : cost) r.push_back(c / cost.back());
        r.back() = 1.0;
        return r;
    }
};

inline nlohmann::json spec_json(const ObjectiveSpec& s) {
    nlohmann::json j{{"name", s.name},           {"version", s.version}, {"dim", s.dim},
                     {"fidelities", s.fidelities}, {"cost", s.cost},       {"sense", to_string(s.sense)},
                     {"parameters", s.bounds.parameters()}};
    if (s.known_optimum) j["known_optimum"] = *s.known_optimum;
    if (s.known_argmax) j["known_argmax"] = std::vector<double>(s.known_argmax->begin(), s.known_argmax->end());
    if (s.correlation) j["correlation"] = *s.correlation;
    return j;
}

/// An objective at M fidelities. `evaluate` takes unit-cube coordinates and
/// must be safe to call concurrently.
class Objective {
public:
    virtual ~Objective() = default;
    virtual const ObjectiveSpec& spec() const = 0;
    virtual double evaluate(const Eigen::VectorXd& x, std::size_t fidelity) const = 0;

    double operator()(const Eigen::VectorXd& x, std::size_t fidelity) const { return evaluate(x, fidelity); }
    double operator()(const Eigen::VectorXd& x) const { return evaluate(x, spec().fidelities - 1); }

protected:
    void check(const Eigen::VectorXd& x, std::size_t fidelity) const {
        const auto& s = spec();
        if (static_cast<std::size_t>(x.size()) != s.dim)
            throw DimensionMismatch(s.name + ": expected " + std::to_string(s.dim) + " coordinates, got " +
                                    std::to_string(x.size()));
        if (fidelity >= s.fidelities)
            throw ConfigError(s.name + ": fidelity " + std::to_string(fidelity + 1) + " out of range 1.." +
                              std::to_string(s.fidelities));
    }
};

using ObjectivePtr = std::shared_ptr<const Objective>;

/// Objective from a plain callable; counts invocations.
class FunctionObjective : public Objective {
public:
    using Fn = std::function<double(const Eigen::VectorXd&, std::size_t)>;

    FunctionObjective(ObjectiveSpec spec, Fn fn) : spec_(std::move(spec)), fn_(std::move(fn)) { spec_.validate(); }

    const ObjectiveSpec& spec() const override { return spec_; }

    double evaluate(const Eigen::VectorXd& x, std::size_t fidelity) const override {
        check(x, fidelity);
        ++calls_;
        return fn_(x, fidelity);
    }

    std::size_t calls() const { return calls_.load(); }

private:
    ObjectiveSpec spec_;
    Fn fn_;
    mutable std::atomic<std::size_t> calls_{0};
};

// --- force-displacement curves -------------------------------------------

struct ForceDisplacementCurve {
    std::vector<double> x;
    std::vector<double> P;
    double delta_max = 0.0;
    double ea_solid = 1.0;

    void validate() const {
        if (x.size() != P.size()) throw ConfigError("curve: displacement and force lengths differ");
        if (x.size() < 2) throw ConfigError("curve needs at least two samples");
        if (x.front() < 0.0) throw ConfigError("curve displacements must start at x >= 0");
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(x[i]) || !std::isfinite(P[i])) throw ConfigError("curve contains non-finite samples");
            if (i > 0 && !(x[i] > x[i - 1])) throw ConfigError("curve displacements must be strictly increasing");
        }
    }
};

/// (1/EA_s) * integral_0^delta_max P dx by the trapezoid rule, the last
/// interval cut at delta_max by linear interpolation.
inline double ea_normalized(const ForceDisplacementCurve& c) {
    c.validate();
    if (!(c.ea_solid > 0.0)) throw ConfigError("EA_s must be positive");
    if (!(c.delta_max > 0.0)) throw ConfigError("delta_max must be positive");
    if (c.x.front() > 1e-12 * c.delta_max) throw ConfigError("curve does not start at zero displacement");
    if (c.x.back() < c.delta_max)
        throw ConfigError("curve ends at x = " + io::format_double(c.x.back()) + " before delta_max = " +
                          io::format_double(c.delta_max));
    double area = 0.0;
    for (std::size_t i = 1; i < c.x.size(); ++i) {
        const double x0 = c.x[i - 1];
        if (x0 >= c.delta_max) break;
        double x1 = c.x[i];
        double p1 = c.P[i];
        if (x1 > c.delta_max) {
            p1 = c.P[i - 1] + (c.P[i] - c.P[i - 1]) * (c.delta_max - x0) / (x1 - x0);
            x1 = c.delta_max;
        }
        area += 0.5 * (x1 - x0) * (c.P[i - 1] + p1);
    }
    return area / c.ea_solid;
}

/// Two-column curve CSV (displacement, force) with a header row.
inline ForceDisplacementCurve read_curve_csv(const std::string& path, double delta_max, double ea_solid) {
    const io::CsvTable t = io::read_csv(path);
    if (t.header.size() < 2) throw ConfigError(path + ": curve CSV needs displacement and force columns");
    ForceDisplacementCurve c;
    for (const auto& row : t.rows) {
        c.x.push_back(io::parse_double(row[0]));
        c.P.push_back(io::parse_double(row[1]));
    }
    c.delta_max = delta_max;
    c.ea_solid = ea_solid;
    return c;
}

// --- synthetic benchmarks ------------------------------------------------

namespace bench {

inline double forrester(double x) {
    const double a = 6.0 * x - 2.0;
    return a * a * std::sin(12.0 * x - 4.0);
}

inline double hartmann3(const Eigen::VectorXd& x, const std::array<double, 4>& alpha) {
    static constexpr double A[4][3] = {{3.0, 10.0, 30.0}, {0.1, 10.0, 35.0}, {3.0, 10.0, 30.0}, {0.1, 10.0, 35.0}};
    static constexpr double P[4][3] = {{0.3689, 0.1170, 0.2673},
                                       {0.4699, 0.4387, 0.7470},
                                       {0.1091, 0.8732, 0.5547},
                                       {0.0381, 0.5743, 0.8828}};
    double s = 0.0;
    for (int i = 0; i < 4; ++i) {
        double e = 0.0;
        for (int j = 0; j < 3; ++j) e += A[i][j] * (x[j] - P[i][j]) * (x[j] - P[i][j]);
        s += alpha[static_cast<std::size_t>(i)] * std::exp(-e);
    }
    return s;
}

inline double bump(const Eigen::VectorXd& x, double cx, double cy, double width) {
    const double dx = x[0] - cx;
    const double dy = x[1] - cy;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
}

/// High fidelity of the tunable pair: a dominant peak, a broad secondary
/// peak and a gentle ripple.
inline double tunable_high(const Eigen::VectorXd& x) {
    return 1.0 * bump(x, 0.72, 0.30, 0.10) + 0.75 * bump(x, 0.25, 0.70, 0.16) +
           0.15 * std::sin(5.0 * x[0]) * std::cos(4.0 * x[1]);
}

/// Discrepancy added at the low fidelity: smooth and uncorrelated in shape
/// with the high fidelity.
inline double tunable_discrepancy(const Eigen::VectorXd& x) {
    return std::cos(2.0 * std::numbers::pi * x[0]) * std::sin(std::numbers::pi * x[1]) + 0.5 * x[1];
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const Eigen::VectorXd da = a.array() - a.mean();
    const Eigen::VectorXd db = b.array() - b.mean();
    return da.dot(db) / std::sqrt(da.squaredNorm() * db.squaredNorm());
}

/// Weight g such that corr(h + g d, h) over the probe grid equals `target`
/// (bisection; the correlation is monotone in g for g >= 0 here).
inline double solve_discrepancy_weight(double target) {
    const DesignMatrix grid = sobol_sequence(2, 4096, 0);
    Eigen::VectorXd h(4096), d(4096);
    for (std::size_t r = 0; r < grid.rows(); ++r) {
        h[static_cast<Eigen::Index>(r)] = tunable_high(grid.row(r));
        d[static_cast<Eigen::Index>(r)] = tunable_discrepancy(grid.row(r));
    }
    double lo = 0.0, hi = 100.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (pearson(h + mid * d, h) > target) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace bench

/// Correlation between the lowest and highest fidelity over a 2^12-point
/// Sobol' grid.
inline double probe_correlation(const Objective& f, std::size_t lo_fidelity = 0) {
    const auto& s = f.spec();
    const DesignMatrix grid = sobol_sequence(s.dim, 4096, 0);
    Eigen::VectorXd a(4096), b(4096);
    for (std::size_t r = 0; r < grid.rows(); ++r) {
        a[static_cast<Eigen::Index>(r)] = f.evaluate(grid.row(r), lo_fidelity);
        b[static_cast<Eigen::Index>(r)] = f.evaluate(grid.row(r), s.fidelities - 1);
    }
    return bench::pearson(a, b);
}

inline std::vector<std::string> benchmark_names() {
    return {"forrester", "hartmann3", "tunable2d", "ishigami", "linear-x1", "quadratic1d"};
}

/// Registry of synthetic objectives (all in maximization form).
///
///   forrester    D=1, M=2. HF = -(6x-2)^2 sin(12x-4); LF = -(0.5 f + 10(x-0.5) + 5).
///   hartmann3    D=3, M=2. HF = Hartmann-3 (maximized); LF shifts the mixture
///                weights by -0.1 * (0.01, -0.01, -0.1, 0.1).
///   tunable2d    D=2, M=2. LF = HF + g * discrepancy, g solved for a probe-grid
///                correlation of `target_correlation` (default 0.68).
///   ishigami     D=3, M=1 on [-pi, pi]^3, a = 7, b = 0.1.
///   linear-x1    D=3, M=1. f = x1 (only the first parameter matters).
///   quadratic1d  D=1, M=1. f = -(x - 0.6)^2.
inline ObjectivePtr make_benchmark(const std::string& name, double target_correlation = 0.68) {
    ObjectiveSpec s;
    s.name = name;
    if (name == "forrester") {
        s.dim = 1;
        s.fidelities = 2;
        s.cost = {0.1, 1.0};
        s.bounds = Bounds::unit(1);
        s.known_optimum = 6.020740055767081;
        s.known_argmax = Eigen::VectorXd::Constant(1, 0.7572487561660257);
        s.correlation = 0.7353;
        auto f = std::make_shared<FunctionObjective>(s, [](const Eigen::VectorXd& x, std::size_t m) {
            const double hf = bench::forrester(x[0]);
            return m == 1 ? -hf : -(0.5 * hf + 10.0 * (x[0] - 0.5) + 5.0);
        });
        return f;
    }
    if (name == "hartmann3") {
        s.dim = 3;
        s.fidelities = 2;
        s.cost = {0.1, 1.0};
        s.bounds = Bounds::unit(3);
        s.known_optimum = 3.862779787332663;
        s.known_argmax = Eigen::Vector3d(0.11458888, 0.5556489, 0.85254698);
        s.correlation = 1.0;
        return std::make_shared<FunctionObjective>(s, [](const Eigen::VectorXd& x, std::size_t m) {
            std::array<double, 4> alpha{1.0, 1.2, 3.0, 3.2};
            if (m == 0) {
                const std::array<double, 4> delta{0.01, -0.01, -0.1, 0.1};
                for (std::size_t i = 0; i < 4; ++i) alpha[i] -= 0.1 * delta[i];
            }
            return bench::hartmann3(x, alpha);
        });
    }
    if (name == "tunable2d") {
        if (!(target_correlation > 0.0 && target_correlation < 1.0))
            throw ConfigError("tunable2d target correlation must lie in (0,1)");
        const double g = bench::solve_discrepancy_weight(target_correlation);
        s.dim = 2;
        s.fidelities = 2;
        s.cost = {0.11, 1.0};
        s.bounds = Bounds::unit(2);
        s.version = "1;rho=" + io::format_double(target_correlation);
        s.correlation = target_correlation;
        s.known_optimum = 0.9770175316831765;
        s.known_argmax = Eigen::Vector2d(0.71752221, 0.3024976);
        return std::make_shared<FunctionObjective>(s, [g](const Eigen::VectorXd& x, std::size_t m) {
            const double hf = bench::tunable_high(x);
            return m == 1 ? hf : hf + g * bench::tunable_discrepancy(x);
        });
    }
    if (name == "ishigami") {
        s.dim = 3;
        s.cost = {1.0};
        s.bounds = Bounds({{"x1", -std::numbers::pi, std::numbers::pi, ""},
                           {"x2", -std::numbers::pi, std::numbers::pi, ""},
                           {"x3", -std::numbers::pi, std::numbers::pi, ""}});
        return std::make_shared<FunctionObjective>(s, [](const Eigen::VectorXd& x, std::size_t) {
            const Eigen::VectorXd p = (-std::numbers::pi + 2.0 * std::numbers::pi * x.array()).matrix();
            return std::sin(p[0]) + 7.0 * std::sin(p[1]) * std::sin(p[1]) + 0.1 * std::pow(p[2], 4) * std::sin(p[0]);
        });
    }
    if (name == "linear-x1") {
        s.dim = 3;
        s.cost = {1.0};
        s.bounds = Bounds::unit(3);
        s.known_optimum = 1.0;
        return std::make_shared<FunctionObjective>(s, [](const Eigen::VectorXd& x, std::size_t) { return x[0]; });
    }
    if (name == "quadratic1d") {
        s.dim = 1;
        s.cost = {1.0};
        s.bounds = Bounds::unit(1);
        s.known_optimum = 0.0;
        s.known_argmax = Eigen::VectorXd::Constant(1, 0.6);
        return std::make_shared<FunctionObjective>(s, [](const Eigen::VectorXd& x, std::size_t) {
            return -(x[0] - 0.6) * (x[0] - 0.6);
        });
    }
    throw ConfigError("unknown benchmark '" + name + "'");
}

}  // namespace mfbo
