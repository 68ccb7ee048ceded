#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "mfbo/cli.hpp"
#include "test_util.hpp"

using namespace mfbo;
namespace fs = std::filesystem;

namespace {

struct Invocation {
    int code;
    std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "mfbo");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string masked_history(const fs::path& p) {
    static const std::regex wall("\"wall_seconds\":[^,}]*");
    return std::regex_replace(io::read_text(p), wall, "\"wall_seconds\":0");
}

std::size_t lines(const fs::path& p) {
    const auto t = io::read_text(p);
    return static_cast<std::size_t>(std::count(t.begin(), t.end(), '\n'));
}

const char* kIshigami = R"({
  "seed": 3,
  "objective": {"benchmark": "ishigami"},
  "sampler": {"n_base": 512},
  "evaluate": {"designs": "sa/designs.csv"},
  "analyze": {"samples": "sa", "responses": "sa/responses.csv", "n_boot": 200}
})";

const char* kForrester = R"({
  "seed": 1,
  "objective": {"benchmark": "forrester"},
  "optimize": {"acquisition": "vf-logei", "initial_budget": 4, "budget": 3, "iterations": 8, "fit_restarts": 2,
               "multistart": {"pool": 128, "starts": 8}}
})";

}  // namespace

TEST(Cli, SampleEvaluateAnalyze) {
    const auto dir = mfbo::test::scratch_dir();
    io::write_text(dir / "exp.json", kIshigami);
    const auto cfg = (dir / "exp.json").string();
    const auto sa = (dir / "sa").string();

    auto r = invoke({"sample", "--config", cfg, "--out", sa});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("designs: 2560"), std::string::npos) << r.out;
    EXPECT_EQ(lines(dir / "sa" / "designs.csv"), 2561u);
    EXPECT_EQ(io::read_text(dir / "sa" / "config.json"), kIshigami);
    const auto m = nlohmann::json::parse(io::read_text(dir / "sa" / "manifest.json"));
    EXPECT_EQ(m.at("command"), "sample");

    r = invoke({"evaluate", "--config", cfg, "--out", sa, "--jobs", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::smatch hit;
    ASSERT_TRUE(std::regex_search(r.out, hit, std::regex("invocations: (\\d+) cache hits: (\\d+)"))) << r.out;
    EXPECT_EQ(std::stoul(hit[1]) + std::stoul(hit[2]), 2560u);  // Saltelli rows can coincide
    EXPECT_GT(std::stoul(hit[1]), 2400u);
    EXPECT_EQ(lines(dir / "sa" / "responses.csv"), 2561u);
    const auto first = io::read_text(dir / "sa" / "responses.csv");
    r = invoke({"evaluate", "--config", cfg, "--out", sa});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("invocations: 0 cache hits: 2560"), std::string::npos) << r.out;
    EXPECT_EQ(io::read_text(dir / "sa" / "responses.csv"), first);

    const auto an = (dir / "an").string();
    r = invoke({"analyze", "--config", cfg, "--out", an});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rep = nlohmann::json::parse(io::read_text(dir / "an" / "sensitivity.json"));
    ASSERT_EQ(rep.at("parameters").size(), 3u);
    const double s1_exact[] = {0.3139, 0.4424, 0.0};
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& p = rep["parameters"][i];
        EXPECT_LE(p["S1_ci"][0].get<double>(), s1_exact[i]) << i;
        EXPECT_GE(p["S1_ci"][1].get<double>(), s1_exact[i]) << i;
    }
    EXPECT_TRUE(fs::exists(dir / "an" / "convergence.csv"));
}

TEST(Cli, OptimizeIsReproducibleAndResumable) {
    const auto dir = mfbo::test::scratch_dir();
    io::write_text(dir / "exp.json", kForrester);
    const auto cfg = (dir / "exp.json").string();
    auto run = [&](const std::string& out, std::vector<std::string> extra = {}) {
        std::vector<std::string> a{"optimize", "--config", cfg, "--out", (dir / out).string()};
        a.insert(a.end(), extra.begin(), extra.end());
        return invoke(a);
    };
    auto r = run("a");
    ASSERT_EQ(r.code, 0) << r.err;
    ASSERT_EQ(run("b").code, 0);
    EXPECT_EQ(masked_history(dir / "a" / "history.jsonl"), masked_history(dir / "b" / "history.jsonl"));
    EXPECT_EQ(io::read_text(dir / "a" / "recommendation.json"), io::read_text(dir / "b" / "recommendation.json"));
    ASSERT_EQ(run("c", {"--seed", "2"}).code, 0);
    EXPECT_NE(masked_history(dir / "a" / "history.jsonl"), masked_history(dir / "c" / "history.jsonl"));

    const auto rec = nlohmann::json::parse(io::read_text(dir / "a" / "recommendation.json"));
    EXPECT_LE(rec.at("ledger").at("spent").get<double>(), 3.0 + 1e-12);
    EXPECT_EQ(rec.at("parameters").size(), 1u);
    const auto m = nlohmann::json::parse(io::read_text(dir / "a" / "manifest.json"));
    EXPECT_EQ(m.at("acquisition"), "vf-logei");
    EXPECT_EQ(m.at("initial_counts"), (std::vector<std::size_t>{20, 2}));

    // Simulate a crash: keep the initial design plus two loop records and a torn line.
    fs::create_directories(dir / "d");
    const auto full = io::read_text(dir / "a" / "history.jsonl");
    std::size_t cut = 0;
    for (int k = 0; k < 24; ++k) cut = full.find('\n', cut) + 1;
    io::write_text(dir / "d" / "history.jsonl", full.substr(0, cut) + full.substr(cut, 40));
    r = run("d", {"--resume"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("resumed"), std::string::npos);
    EXPECT_EQ(masked_history(dir / "a" / "history.jsonl"), masked_history(dir / "d" / "history.jsonl"));
    EXPECT_EQ(io::read_text(dir / "a" / "recommendation.json"), io::read_text(dir / "d" / "recommendation.json"));

    r = invoke({"report", "--out", (dir / "rep").string(), (dir / "a").string(), (dir / "c").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(lines(dir / "rep" / "summary.csv"), 3u);
    EXPECT_TRUE(fs::exists(dir / "rep" / "curves.csv"));
    EXPECT_NE(io::read_text(dir / "rep" / "curves.svg").find("<svg"), std::string::npos);
}

TEST(Cli, ExitCodes) {
    const auto dir = mfbo::test::scratch_dir();
    const auto out = (dir / "out").string();
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"optimize", "--bogus"}).code, 2);
    EXPECT_EQ(invoke({"optimize", "--out", out}).code, 2);
    EXPECT_EQ(invoke({"optimize", "--config", (dir / "missing.json").string(), "--out", out}).code, 2);
    io::write_text(dir / "typo.json", R"({"optimize": {"budgett": 3}})");
    const auto typo = invoke({"optimize", "--config", (dir / "typo.json").string(), "--out", out});
    EXPECT_EQ(typo.code, 2);
    EXPECT_NE(typo.err.find("budgett"), std::string::npos);
    EXPECT_EQ(invoke({"report", "--out", out, (dir / "nowhere").string()}).code, 2);

    io::write_text(dir / "fail.json", R"({
      "objective": {"fidelities": 1, "parameters": [{"name": "t", "lower": 0, "upper": 1}],
                    "external": {"command": "exit 7", "timeout_seconds": 5}},
      "sampler": {"n_base": 4},
      "evaluate": {"designs": "sa/designs.csv"},
      "optimize": {"initial_budget": 3, "iterations": 1}
    })");
    const auto fail = (dir / "fail.json").string();
    ASSERT_EQ(invoke({"sample", "--config", fail, "--out", (dir / "sa").string()}).code, 0);
    const auto ev = invoke({"evaluate", "--config", fail, "--out", (dir / "sa").string()});
    EXPECT_EQ(ev.code, 3);
    EXPECT_NE(ev.err.find("status 7"), std::string::npos) << ev.err;
    EXPECT_EQ(invoke({"optimize", "--config", fail, "--out", out}).code, 3);

    io::write_text(dir / "flat.json", R"({
      "objective": {"fidelities": 1, "parameters": [{"name": "t", "lower": 0, "upper": 1}, {"name": "u", "lower": 0, "upper": 1}],
                    "external": {"command": "echo '{\"value\": 1.0}' > {response}", "timeout_seconds": 5}},
      "sampler": {"n_base": 8},
      "evaluate": {"designs": "flat/designs.csv"},
      "analyze": {"samples": "flat", "responses": "flat/responses.csv"}
    })");
    const auto flat = (dir / "flat.json").string();
    ASSERT_EQ(invoke({"sample", "--config", flat, "--out", (dir / "flat").string()}).code, 0);
    ASSERT_EQ(invoke({"evaluate", "--config", flat, "--out", (dir / "flat").string()}).code, 0);
    const auto an = invoke({"analyze", "--config", flat, "--out", (dir / "flat_an").string()});
    EXPECT_EQ(an.code, 4);
    EXPECT_NE(an.err.find("zero variance"), std::string::npos) << an.err;
}
