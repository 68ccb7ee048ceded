#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfbo/errors.hpp"
#include "mfbo/io.hpp"
#include "mfbo/sobol_directions.hpp"

namespace mfbo {

/// N design points in the unit hypercube [0,1]^D, one per row.
class DesignMatrix {
public:
    DesignMatrix() = default;

    DesignMatrix(std::size_t rows, std::size_t cols) : values_(Eigen::MatrixXd::Zero(rows, cols)) {
        if (rows == 0 || cols == 0) throw ConfigError("design matrix needs N >= 1 and D >= 1");
    }

    explicit DesignMatrix(Eigen::MatrixXd values) : values_(std::move(values)) {
        if (values_.rows() == 0 || values_.cols() == 0)
            throw ConfigError("design matrix needs N >= 1 and D >= 1");
        for (Eigen::Index i = 0; i < values_.size(); ++i) {
            double v = values_.data()[i];
            if (!(v >= 0.0 && v <= 1.0))
                throw ConfigError("design value " + io::format_double(v) + " outside [0,1]");
        }
    }

    std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(values_.cols()); }
    bool empty() const { return values_.size() == 0; }

    double operator()(std::size_t r, std::size_t c) const { return values_(r, c); }

    void set(std::size_t r, std::size_t c, double v) {
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError("design value " + io::format_double(v) + " outside [0,1]");
        values_(r, c) = v;
    }

    Eigen::VectorXd row(std::size_t r) const { return values_.row(static_cast<Eigen::Index>(r)).transpose(); }
    const Eigen::MatrixXd& values() const { return values_; }

    /// First `n` rows.
    DesignMatrix head(std::size_t n) const {
        if (n == 0 || n > rows()) throw ConfigError("head(): row count out of range");
        return DesignMatrix(Eigen::MatrixXd(values_.topRows(static_cast<Eigen::Index>(n))));
    }

    /// Appends one row; the matrix may start empty.
    void append(const Eigen::VectorXd& x) {
        if (!empty() && static_cast<std::size_t>(x.size()) != cols())
            throw DimensionMismatch("appended design has wrong dimension");
        for (Eigen::Index k = 0; k < x.size(); ++k)
            if (!(x[k] >= 0.0 && x[k] <= 1.0)) throw ConfigError("appended design outside [0,1]");
        Eigen::MatrixXd grown(values_.rows() + 1, x.size());
        if (values_.rows() > 0) grown.topRows(values_.rows()) = values_;
        grown.row(values_.rows()) = x.transpose();
        values_ = std::move(grown);
    }

    friend bool operator==(const DesignMatrix& a, const DesignMatrix& b) {
        return a.values_.rows() == b.values_.rows() && a.values_.cols() == b.values_.cols() &&
               a.values_ == b.values_;
    }

private:
    Eigen::MatrixXd values_;
};

struct Parameter {
    std::string name;
    double lower = 0.0;
    double upper = 1.0;
    std::string unit;
};

/// Per-dimension physical ranges.
class Bounds {
public:
    Bounds() = default;
    explicit Bounds(std::vector<Parameter> params) : params_(std::move(params)) {
        for (const auto& p : params_)
            if (!(p.lower < p.upper))
                throw ConfigError("parameter '" + p.name + "' needs lower < upper");
    }

    /// Unit box with names x1..xD.
    static Bounds unit(std::size_t dim) {
        std::vector<Parameter> ps;
        for (std::size_t i = 0; i < dim; ++i) ps.push_back({"x" + std::to_string(i + 1), 0.0, 1.0, ""});
        return Bounds(std::move(ps));
    }

    std::size_t dim() const { return params_.size(); }
    const Parameter& operator[](std::size_t i) const { return params_.at(i); }
    const std::vector<Parameter>& parameters() const { return params_; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& p : params_) out.push_back(p.name);
        return out;
    }

private:
    std::vector<Parameter> params_;
};

inline void to_json(nlohmann::json& j, const Parameter& p) {
    j = {{"name", p.name}, {"lower", p.lower}, {"upper", p.upper}, {"unit", p.unit}};
}

inline void from_json(const nlohmann::json& j, Parameter& p) {
    p.name = j.at("name").get<std::string>();
    p.lower = j.at("lower").get<double>();
    p.upper = j.at("upper").get<double>();
    p.unit = j.value("unit", std::string{});
}

/// Saltelli design collection: base matrices A and B plus the D
/// cross-combinations AB[i], where AB[i] copies A except column i, taken from B.
struct SaltelliSet {
    DesignMatrix A;
    DesignMatrix B;
    std::vector<DesignMatrix> AB;
    std::size_t base_count = 0;

    std::size_t dim() const { return A.cols(); }
    std::size_t total_count() const { return base_count * (dim() + 2); }

    /// All designs in file order: A, B, AB_1, ..., AB_D.
    DesignMatrix stacked() const {
        const auto n = static_cast<Eigen::Index>(base_count);
        Eigen::MatrixXd all(static_cast<Eigen::Index>(total_count()), static_cast<Eigen::Index>(dim()));
        all.topRows(n) = A.values();
        all.middleRows(n, n) = B.values();
        for (std::size_t i = 0; i < AB.size(); ++i)
            all.middleRows(n * static_cast<Eigen::Index>(i + 2), n) = AB[i].values();
        return DesignMatrix(std::move(all));
    }
};

namespace detail {

inline constexpr int kSobolBits = 32;

/// Direction integers V_1..V_32 for one dimension (already shifted to 32 bits).
inline std::array<std::uint32_t, kSobolBits> sobol_directions(std::size_t dim_index) {
    const auto& entry = kSobolTable[dim_index];
    std::array<std::uint32_t, kSobolBits> v{};
    if (entry.degree == 0) {
        for (int k = 0; k < kSobolBits; ++k) v[k] = 1u << (kSobolBits - 1 - k);
        return v;
    }
    const std::uint32_t s = entry.degree;
    std::array<std::uint32_t, kSobolBits> m{};
    for (std::uint32_t k = 0; k < s && k < kSobolBits; ++k) m[k] = entry.m[k];
    for (std::uint32_t k = s; k < kSobolBits; ++k) {
        std::uint32_t value = m[k - s] ^ (m[k - s] << s);
        for (std::uint32_t j = 1; j < s; ++j) {
            std::uint32_t a_j = (entry.coeffs >> (s - 1 - j)) & 1u;
            if (a_j) value ^= m[k - j] << j;
        }
        m[k] = value;
    }
    for (int k = 0; k < kSobolBits; ++k) v[k] = m[k] << (kSobolBits - 1 - k);
    return v;
}

}  // namespace detail

/// Largest dimension supported by the embedded direction-number table.
inline constexpr std::size_t sobol_max_dimension() { return detail::kSobolMaxDimension; }

/// Points skip, skip+1, ..., skip+n-1 of the unscrambled Sobol' sequence in
/// [0,1)^dim (Gray-code order; point 0 is the origin).
inline DesignMatrix sobol_sequence(std::size_t dim, std::size_t n, std::uint64_t skip = 0) {
    if (dim == 0 || n == 0) throw ConfigError("sobol_sequence needs dim >= 1 and n >= 1");
    if (dim > detail::kSobolMaxDimension)
        throw UnsupportedDimension("Sobol' dimension " + std::to_string(dim) +
                                   " exceeds the direction-number table (max " +
                                   std::to_string(detail::kSobolMaxDimension) + ")");
    if (skip + n > (std::uint64_t{1} << detail::kSobolBits))
        throw ConfigError("Sobol' index range exceeds 2^32 points");

    std::vector<std::array<std::uint32_t, detail::kSobolBits>> dirs;
    dirs.reserve(dim);
    for (std::size_t d = 0; d < dim; ++d) dirs.push_back(detail::sobol_directions(d));

    // State for index `skip` from its Gray code, then one XOR per step.
    std::vector<std::uint32_t> state(dim, 0u);
    const std::uint64_t gray = skip ^ (skip >> 1);
    for (int k = 0; k < detail::kSobolBits; ++k)
        if ((gray >> k) & 1u)
            for (std::size_t d = 0; d < dim; ++d) state[d] ^= dirs[d][k];

    constexpr double scale = 1.0 / 4294967296.0;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    std::uint64_t index = skip;
    for (std::size_t i = 0; i < n; ++i, ++index) {
        for (std::size_t d = 0; d < dim; ++d) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = state[d] * scale;
        if (i + 1 == n) break;
        int c = 0;
        while ((index >> c) & 1u) ++c;  // lowest zero bit of the current index
        for (std::size_t d = 0; d < dim; ++d) state[d] ^= dirs[d][c];
    }
    return DesignMatrix(std::move(out));
}

/// A and B are the first and last `dim` columns of a 2*dim Sobol' sample.
inline SaltelliSet saltelli_sample(std::size_t dim, std::size_t n_base, std::uint64_t skip = 0) {
    if (dim == 0) throw ConfigError("saltelli_sample needs dim >= 1");
    if (n_base < 2) throw ConfigError("saltelli_sample needs n_base >= 2");
    DesignMatrix base = sobol_sequence(2 * dim, n_base, skip);
    const auto d = static_cast<Eigen::Index>(dim);
    SaltelliSet set;
    set.base_count = n_base;
    set.A = DesignMatrix(Eigen::MatrixXd(base.values().leftCols(d)));
    set.B = DesignMatrix(Eigen::MatrixXd(base.values().rightCols(d)));
    for (Eigen::Index i = 0; i < d; ++i) {
        Eigen::MatrixXd ab = set.A.values();
        ab.col(i) = set.B.values().col(i);
        set.AB.emplace_back(std::move(ab));
    }
    return set;
}

/// Affine map from the unit hypercube to physical units.
inline Eigen::MatrixXd scale(const DesignMatrix& points, const Bounds& bounds) {
    if (points.cols() != bounds.dim()) throw DimensionMismatch("scale(): design and bounds dimensions differ");
    Eigen::MatrixXd out(points.values().rows(), points.values().cols());
    for (std::size_t c = 0; c < bounds.dim(); ++c) {
        const double lo = bounds[c].lower;
        const double width = bounds[c].upper - bounds[c].lower;
        out.col(static_cast<Eigen::Index>(c)) =
            (points.values().col(static_cast<Eigen::Index>(c)).array() * width + lo).matrix();
    }
    return out;
}

inline Eigen::VectorXd scale_point(const Eigen::VectorXd& x, const Bounds& bounds) {
    if (static_cast<std::size_t>(x.size()) != bounds.dim())
        throw DimensionMismatch("scale_point(): dimension mismatch");
    Eigen::VectorXd out(x.size());
    for (Eigen::Index c = 0; c < x.size(); ++c) {
        const auto& p = bounds[static_cast<std::size_t>(c)];
        out[c] = p.lower + x[c] * (p.upper - p.lower);
    }
    return out;
}

/// Inverse of scale(); values are clamped into [0,1] to absorb round-off at
/// the bounds.
inline DesignMatrix unscale(const Eigen::MatrixXd& physical, const Bounds& bounds) {
    if (static_cast<std::size_t>(physical.cols()) != bounds.dim())
        throw DimensionMismatch("unscale(): design and bounds dimensions differ");
    Eigen::MatrixXd out(physical.rows(), physical.cols());
    for (std::size_t c = 0; c < bounds.dim(); ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        const double lo = bounds[c].lower;
        const double width = bounds[c].upper - bounds[c].lower;
        for (Eigen::Index r = 0; r < physical.rows(); ++r) {
            double u = (physical(r, ci) - lo) / width;
            if (u < 0.0 && u > -1e-12) u = 0.0;
            if (u > 1.0 && u < 1.0 + 1e-12) u = 1.0;
            out(r, ci) = u;
        }
    }
    return DesignMatrix(std::move(out));
}

// --- serialization -------------------------------------------------------

inline std::string design_csv(const DesignMatrix& m, const std::vector<std::string>& names) {
    if (names.size() != m.cols()) throw DimensionMismatch("design_csv(): header size differs from columns");
    std::string out;
    for (std::size_t c = 0; c < names.size(); ++c) out += (c ? "," : "") + names[c];
    out += '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) out += (c ? "," : "") + io::format_double(m(r, c));
        out += '\n';
    }
    return out;
}

inline std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
    std::string out;
    for (std::size_t c = 0; c < names.size(); ++c) out += (c ? "," : "") + names[c];
    out += '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out += (c ? "," : "") + io::format_double(m(r, c));
        out += '\n';
    }
    return out;
}

inline void write_design_csv(const std::filesystem::path& path, const DesignMatrix& m,
                             const std::vector<std::string>& names) {
    io::write_text(path, design_csv(m, names));
}

inline DesignMatrix read_design_csv(const std::filesystem::path& path, std::vector<std::string>* names = nullptr) {
    auto table = io::read_csv(path);
    if (table.rows.empty()) throw ConfigError(path.string() + ": no designs");
    Eigen::MatrixXd values(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(table.header.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r)
        for (std::size_t c = 0; c < table.header.size(); ++c)
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = io::parse_double(table.rows[r][c]);
    if (names) *names = table.header;
    return DesignMatrix(std::move(values));
}

inline nlohmann::json design_json(const DesignMatrix& m, const Bounds& bounds) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return {{"schema_version", 1}, {"parameters", bounds.parameters()}, {"rows", std::move(rows)}};
}

inline DesignMatrix design_from_json(const nlohmann::json& j) {
    const auto& rows = j.at("rows");
    if (rows.empty()) throw ConfigError("design JSON has no rows");
    const auto cols = rows.at(0).size();
    Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != cols) throw ConfigError("design JSON rows have unequal length");
        for (std::size_t c = 0; c < cols; ++c)
            values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
    }
    return DesignMatrix(std::move(values));
}

inline constexpr int kSaltelliSchemaVersion = 1;

/// Writes A.csv, B.csv, AB_1.csv..AB_D.csv (unit hypercube), the stacked
/// designs in unit and physical units, and manifest.json.
inline void write_saltelli_dir(const std::filesystem::path& dir, const SaltelliSet& set, const Bounds& bounds,
                               std::uint64_t skip) {
    if (bounds.dim() != set.dim()) throw DimensionMismatch("Saltelli set and bounds dimensions differ");
    std::filesystem::create_directories(dir);
    const auto names = bounds.names();
    nlohmann::json files = nlohmann::json::array();
    auto emit = [&](const std::string& file, const DesignMatrix& m, const std::string& role) {
        write_design_csv(dir / file, m, names);
        files.push_back({{"file", file}, {"role", role}, {"rows", m.rows()}, {"schema_version", kSaltelliSchemaVersion}});
    };
    emit("A.csv", set.A, "A");
    emit("B.csv", set.B, "B");
    for (std::size_t i = 0; i < set.AB.size(); ++i) emit("AB_" + std::to_string(i + 1) + ".csv", set.AB[i], "AB");
    const DesignMatrix all = set.stacked();
    emit("designs.csv", all, "stacked");
    io::write_text(dir / "designs_physical.csv", matrix_csv(scale(all, bounds), names));
    files.push_back({{"file", "designs_physical.csv"}, {"role", "stacked_physical"}, {"rows", all.rows()},
                     {"schema_version", kSaltelliSchemaVersion}});
    nlohmann::json manifest = {{"schema_version", kSaltelliSchemaVersion},
                               {"kind", "saltelli"},
                               {"dim", set.dim()},
                               {"n_base", set.base_count},
                               {"skip", skip},
                               {"total_designs", set.total_count()},
                               {"parameters", bounds.parameters()},
                               {"files", files}};
    io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline SaltelliSet read_saltelli_dir(const std::filesystem::path& dir, Bounds* bounds = nullptr) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad Saltelli manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("kind", std::string{}) != "saltelli") throw ConfigError(dir.string() + " is not a Saltelli set");
    const auto dim = manifest.at("dim").get<std::size_t>();
    SaltelliSet set;
    set.A = read_design_csv(dir / "A.csv");
    set.B = read_design_csv(dir / "B.csv");
    for (std::size_t i = 0; i < dim; ++i) set.AB.push_back(read_design_csv(dir / ("AB_" + std::to_string(i + 1) + ".csv")));
    set.base_count = set.A.rows();
    if (set.A.cols() != dim || set.B.rows() != set.base_count)
        throw ConfigError("Saltelli matrices in " + dir.string() + " have inconsistent shapes");
    if (bounds) *bounds = Bounds(manifest.at("parameters").get<std::vector<Parameter>>());
    return set;
}

}  // namespace mfbo
