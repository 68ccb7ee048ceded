#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfbo/errors.hpp"
#include "mfbo/io.hpp"
#include "mfbo/objectives.hpp"

namespace mfbo {

/// Content-addressed store of objective values, optionally persisted as
/// JSON lines. Keys combine objective name@version, fidelity and the design
/// rounded to 12 decimals. Many readers, one writer at a time.
class EvaluationCache {
public:
    EvaluationCache() = default;

    /// Loads `path` if it exists. Unparseable lines are dropped with a warning
    /// and the file is rewritten from the surviving entries.
    explicit EvaluationCache(std::filesystem::path path) : path_(std::move(path)) { load(); }

    static std::string key(const ObjectiveSpec& spec, const Eigen::VectorXd& x, std::size_t fidelity) {
        std::string k = spec.name + "@" + spec.version + "|" + std::to_string(fidelity);
        char buf[48];
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.12f", x[i]);
            std::string c = buf;
            if (c.find_first_not_of("-0.") == std::string::npos) c = "0." + std::string(12, '0');
            k += "|" + c;
        }
        return k;
    }

    std::optional<double> find(const std::string& k) const {
        std::shared_lock lock(mutex_);
        auto it = entries_.find(k);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void store(const std::string& k, double value) {
        std::unique_lock lock(mutex_);
        if (!entries_.emplace(k, value).second) return;
        if (!path_.empty()) {
            std::ofstream out(path_, std::ios::app);
            if (!out) throw ConfigError("cannot append to cache " + path_.string());
            out << line(k, value) << '\n';
        }
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }

    /// Rewrites the file with one line per entry in key order, so the file no
    /// longer depends on the order concurrent writers finished in.
    void compact() {
        std::unique_lock lock(mutex_);
        rewrite();
    }

    const std::filesystem::path& path() const { return path_; }
    bool rebuilt() const { return rebuilt_; }

private:
    static std::string line(const std::string& k, double v) {
        return nlohmann::json{{"schema_version", 1}, {"key", k}, {"value", io::format_double(v)}}.dump();
    }

    void load() {
        if (path_.empty() || !std::filesystem::exists(path_)) return;
        std::ifstream in(path_);
        std::string text;
        std::size_t bad = 0;
        while (std::getline(in, text)) {
            if (io::trim(text).empty()) continue;
            try {
                const auto j = nlohmann::json::parse(text);
                entries_[j.at("key").get<std::string>()] = io::parse_double(j.at("value").get<std::string>());
            } catch (const std::exception&) {
                ++bad;
            }
        }
        if (bad == 0) return;
        std::cerr << "warning: cache " << path_.string() << ": dropped " << bad
                  << " corrupt line(s); rebuilding from " << entries_.size() << " valid entries\n";
        rewrite();
        rebuilt_ = true;
    }

    void rewrite() {
        if (path_.empty()) return;
        std::string text;
        for (const auto& [k, v] : entries_) text += line(k, v) + "\n";
        io::write_text(path_, text);
    }

    std::filesystem::path path_;
    std::map<std::string, double> entries_;
    mutable std::shared_mutex mutex_;
    bool rebuilt_ = false;
};

/// Objective wrapper that serves repeated requests from an EvaluationCache.
/// Failures are never cached.
class CachedObjective : public Objective {
public:
    CachedObjective(ObjectivePtr inner, std::shared_ptr<EvaluationCache> cache)
        : inner_(std::move(inner)), cache_(std::move(cache)) {}

    const ObjectiveSpec& spec() const override { return inner_->spec(); }

    double evaluate(const Eigen::VectorXd& x, std::size_t fidelity) const override {
        check(x, fidelity);
        const std::string k = EvaluationCache::key(spec(), x, fidelity);
        if (auto v = cache_->find(k)) {
            ++hits_;
            return *v;
        }
        ++misses_;
        const double v = inner_->evaluate(x, fidelity);
        cache_->store(k, v);
        return v;
    }

    std::size_t hits() const { return hits_.load(); }
    std::size_t misses() const { return misses_.load(); }
    const EvaluationCache& cache() const { return *cache_; }

private:
    ObjectivePtr inner_;
    std::shared_ptr<EvaluationCache> cache_;
    mutable std::atomic<std::size_t> hits_{0};
    mutable std::atomic<std::size_t> misses_{0};
};

}  // namespace mfbo
