#pragma once

#include <atomic>
#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <thread>
#include <utility>

#include <fcntl.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Dense>
#include <json.hpp>

#include "mfbo/errors.hpp"
#include "mfbo/io.hpp"
#include "mfbo/objectives.hpp"
#include "mfbo/sampling.hpp"

namespace mfbo {

inline constexpr int kExternalSchemaVersion = 1;

/// Settings for driving a simulator through request/response files.
///
/// The command runs under /bin/sh in the request's own directory after the
/// placeholders {request}, {response}, {workdir}, {id} and {fidelity}
/// (1-based) are substituted. Configs may also use {config_dir}, expanded
/// when the config is loaded.
struct ExternalConfig {
    std::string command;
    std::filesystem::path workdir = "work";
    double timeout_seconds = 600.0;
    double ea_solid = 1.0;   // used when a response returns a curve without its own ea_solid
    double delta_max = 0.0;  // 0: integrate over the whole curve
};

namespace detail {

inline std::string substitute(std::string text, const std::string& key, const std::string& value) {
    for (std::size_t at = text.find(key); at != std::string::npos; at = text.find(key, at + value.size()))
        text.replace(at, key.size(), value);
    return text;
}

inline std::string tail(const std::filesystem::path& p, std::size_t n = 2000) {
    if (!std::filesystem::exists(p)) return {};
    std::string s = io::read_text(p);
    return s.size() > n ? s.substr(s.size() - n) : s;
}

struct ProcessOutcome {
    bool timed_out = false;
    int exit_code = -1;
    int signal = 0;
};

/// Runs `/bin/sh -c command` in `dir` with stdout/stderr captured to files;
/// the whole process group is killed once `timeout` elapses.
inline ProcessOutcome run_shell(const std::string& command, const std::filesystem::path& dir, double timeout,
                                const std::filesystem::path& out_log, const std::filesystem::path& err_log) {
    const pid_t pid = fork();
    if (pid < 0) throw EvaluationError(std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
        setpgid(0, 0);
        if (chdir(dir.c_str()) != 0) _exit(126);
        const int out = open(out_log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        const int err = open(err_log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (out >= 0) dup2(out, STDOUT_FILENO);
        if (err >= 0) dup2(err, STDERR_FILENO);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    setpgid(pid, pid);
    ProcessOutcome outcome;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout);
    auto wait_ms = std::chrono::milliseconds(1);
    int status = 0;
    while (true) {
        const pid_t r = waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0 && errno != EINTR) throw EvaluationError(std::string("waitpid failed: ") + std::strerror(errno));
        if (std::chrono::steady_clock::now() >= deadline) {
            kill(-pid, SIGKILL);
            kill(pid, SIGKILL);
            waitpid(pid, &status, 0);
            outcome.timed_out = true;
            return outcome;
        }
        std::this_thread::sleep_for(wait_ms);
        wait_ms = std::min(wait_ms * 2, std::chrono::milliseconds(50));
    }
    if (WIFEXITED(status)) outcome.exit_code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) outcome.signal = WTERMSIG(status);
    return outcome;
}

}  // namespace detail

/// Objective backed by an external process. Each call gets a fresh
/// directory workdir/<id>/ holding request.json, response.json and the
/// captured stdout/stderr, so concurrent calls never share files.
class ExternalObjective : public Objective {
public:
    ExternalObjective(ObjectiveSpec spec, ExternalConfig config) : spec_(std::move(spec)), config_(std::move(config)) {
        spec_.validate();
        if (config_.command.empty()) throw ConfigError("external objective needs a command");
        if (!(config_.timeout_seconds > 0.0)) throw ConfigError("external objective needs a positive timeout");
    }

    const ObjectiveSpec& spec() const override { return spec_; }

    double evaluate(const Eigen::VectorXd& x, std::size_t fidelity) const override {
        check(x, fidelity);
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "req-%06zu", counter_.fetch_add(1) + 1);
        const std::string id = idbuf;
        const auto workdir = std::filesystem::absolute(config_.workdir);
        const auto dir = workdir / id;
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        const auto request = dir / "request.json";
        const auto response = dir / "response.json";

        nlohmann::json design = nlohmann::json::object();
        nlohmann::json units = nlohmann::json::object();
        const Eigen::VectorXd phys = scale_point(x, spec_.bounds);
        for (std::size_t i = 0; i < spec_.dim; ++i) {
            design[spec_.bounds[i].name] = phys[static_cast<Eigen::Index>(i)];
            units[spec_.bounds[i].name] = spec_.bounds[i].unit;
        }
        const nlohmann::json req{{"schema_version", kExternalSchemaVersion},
                                 {"id", id},
                                 {"objective", spec_.name},
                                 {"design", design},
                                 {"fidelity", fidelity + 1},
                                 {"units", units}};
        io::write_text(request, req.dump(2) + "\n");

        std::string cmd = config_.command;
        cmd = detail::substitute(cmd, "{request}", request.string());
        cmd = detail::substitute(cmd, "{response}", response.string());
        cmd = detail::substitute(cmd, "{workdir}", dir.string());
        cmd = detail::substitute(cmd, "{id}", id);
        cmd = detail::substitute(cmd, "{fidelity}", std::to_string(fidelity + 1));

        const auto out_log = dir / "stdout.log";
        const auto err_log = dir / "stderr.log";
        const auto outcome = detail::run_shell(cmd, dir, config_.timeout_seconds, out_log, err_log);
        auto diagnostics = [&] { return "stderr: " + detail::tail(err_log) + "\nstdout: " + detail::tail(out_log); };
        if (outcome.timed_out)
            throw EvaluationError(id + ": timed out after " + io::format_double(config_.timeout_seconds) + " s", id,
                                  diagnostics());
        if (outcome.signal != 0)
            throw EvaluationError(id + ": killed by signal " + std::to_string(outcome.signal), id, diagnostics());
        if (outcome.exit_code != 0)
            throw EvaluationError(id + ": command exited with status " + std::to_string(outcome.exit_code), id,
                                  diagnostics());
        return read_response(response, dir, id, diagnostics());
    }

    const ExternalConfig& config() const { return config_; }

private:
    double read_response(const std::filesystem::path& path, const std::filesystem::path& dir, const std::string& id,
                         const std::string& diagnostics) const {
        if (!std::filesystem::exists(path)) throw EvaluationError(id + ": no response file written", id, diagnostics);
        nlohmann::json r;
        try {
            r = nlohmann::json::parse(io::read_text(path));
        } catch (const std::exception& e) {
            throw EvaluationError(id + ": malformed response: " + e.what(), id, diagnostics);
        }
        try {
            if (r.value("schema_version", kExternalSchemaVersion) != kExternalSchemaVersion)
                throw EvaluationError(id + ": unsupported response schema_version", id, diagnostics);
            if (r.contains("id") && r.at("id").get<std::string>() != id)
                throw EvaluationError(id + ": response id mismatch", id, diagnostics);
            const std::string status = r.value("status", std::string{"ok"});
            if (status != "ok")
                throw EvaluationError(id + ": simulator reported error: " + r.value("message", std::string{}), id,
                                      diagnostics);
            if (r.contains("curve_path")) {
                std::filesystem::path curve = r.at("curve_path").get<std::string>();
                if (curve.is_relative()) curve = dir / curve;
                const double ea_s = r.value("ea_solid", config_.ea_solid);
                ForceDisplacementCurve c = read_curve_csv(curve.string(), config_.delta_max, ea_s);
                c.delta_max = r.value("delta_max", config_.delta_max > 0.0 ? config_.delta_max : c.x.back());
                return ea_normalized(c);
            }
            if (!r.contains("value") || !r.at("value").is_number())
                throw EvaluationError(id + ": response has neither value nor curve_path", id, diagnostics);
            const double v = r.at("value").get<double>();
            if (!std::isfinite(v)) throw EvaluationError(id + ": non-finite value", id, diagnostics);
            return v;
        } catch (const EvaluationError&) {
            throw;
        } catch (const std::exception& e) {
            throw EvaluationError(id + ": " + e.what(), id, diagnostics);
        }
    }

    ObjectiveSpec spec_;
    ExternalConfig config_;
    mutable std::atomic<std::size_t> counter_{0};
};

}  // namespace mfbo
