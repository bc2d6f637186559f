// entroflow: run scenario configs and report verdicts.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "entroflow/entroflow.hpp"

namespace fs = std::filesystem;
using namespace entroflow;

namespace {

constexpr int kExitFailedVerdicts = 1;
constexpr int kExitError = 2;

void setup_logging()
{
    auto logger = spdlog::stderr_color_mt("entroflow");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("ENTROFLOW_LOG")) {
        const auto level = spdlog::level::from_str(env);
        if (level == spdlog::level::off && std::string(env) != "off")
            spdlog::warn("ENTROFLOW_LOG='{}' is not a log level; keeping 'warn'", env);
        else
            spdlog::set_level(level);
    }
}

void print_verdicts(const RunResult& r)
{
    std::printf("%s (%s): %s\n", r.scenario.c_str(), std::string(to_string(r.kind)).c_str(),
                r.all_pass() ? "PASS" : "FAIL");
    for (const Verdict& v : r.verdicts)
        std::printf("  %-4s %-24s residual %-12.4g tolerance %.4g\n", v.pass ? "ok" : "FAIL", v.name.c_str(),
                    v.residual, v.tolerance);
}

void report_failures(const RunResult& r)
{
    for (const Verdict& v : r.verdicts)
        if (!v.pass)
            std::fprintf(stderr, "failed: %s/%s residual %.6g > tolerance %.6g\n", r.scenario.c_str(), v.name.c_str(),
                         v.residual, v.tolerance);
}

RunResult run_one(const Scenario& s, const fs::path& prefix)
{
    spdlog::info("running {} ({})", s.name, to_string(s.kind));
    RunResult r = run_scenario(s);
    const OutputPaths paths = write_outputs(r, prefix);
    spdlog::info("wrote {} and {}", paths.csv.string(), paths.json.string());
    return r;
}

int cmd_run(const std::string& config, const std::string& out, bool quiet)
{
    const Scenario s = load_scenario(config);
    const fs::path prefix = !out.empty() ? fs::path(out) : fs::path(s.output.empty() ? s.name : s.output);
    const RunResult r = run_one(s, prefix);
    if (!quiet) print_verdicts(r);
    report_failures(r);
    return r.all_pass() ? 0 : kExitFailedVerdicts;
}

int cmd_verify_all(const std::string& dir, const std::string& out, bool quiet)
{
    if (!fs::is_directory(dir)) fail(ErrorKind::io_error, dir + " is not a directory");
    std::vector<fs::path> configs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && config_format(e.path())) configs.push_back(e.path());
    std::sort(configs.begin(), configs.end());
    if (configs.empty()) fail(ErrorKind::config_error, "no .toml or .json scenarios in " + dir);

    const fs::path out_dir = out.empty() ? fs::path("entroflow-out") : fs::path(out);
    nlohmann::json summary = nlohmann::json::array();
    bool all = true;
    for (const fs::path& path : configs) {
        try {
            const Scenario s = load_scenario(path);
            const RunResult r = run_one(s, out_dir / s.name);
            if (!quiet) print_verdicts(r);
            report_failures(r);
            all = all && r.all_pass();
            summary.push_back(verdict_json(r));
        } catch (const Error& e) {
            std::fprintf(stderr, "failed: %s: %s\n", path.string().c_str(), e.what());
            all = false;
            summary.push_back({{"scenario", path.stem().string()}, {"pass", false}, {"error", e.what()}});
        }
    }
    fs::create_directories(out_dir);
    const fs::path summary_path = out_dir / "summary.json";
    std::FILE* f = std::fopen(summary_path.string().c_str(), "wb");
    if (!f) fail(ErrorKind::io_error, "cannot write " + summary_path.string());
    const std::string text = nlohmann::json{{"pass", all}, {"scenarios", summary}}.dump(2) + "\n";
    const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
    std::fclose(f);
    if (!ok) fail(ErrorKind::io_error, "cannot write " + summary_path.string());
    if (!quiet) std::printf("%zu scenarios, %s\n", configs.size(), all ? "all verdicts pass" : "FAILURES");
    return all ? 0 : kExitFailedVerdicts;
}

double gaussian_kl(double m1, double v1, double m2, double v2)
{
    return 0.5 * (std::log(v2 / v1) + (v1 + (m1 - m2) * (m1 - m2)) / v2 - 1.0);
}

double gaussian_fisher(double m1, double v1, double m2, double v2)
{
    const double a = 1.0 / v2 - 1.0 / v1;
    return a * a * v1 + (m1 - m2) * (m1 - m2) / (v2 * v2);
}

int cmd_oracles()
{
    auto line = [](const char* name, double v) { std::printf("%-44s %.17g\n", name, v); };
    const double e8 = std::exp(-8.0);
    line("w2.gauss(0,1)-gauss(3,1)", 3.0);
    line("w2.gauss(0,1)-gauss(0,4)", 1.0);
    line("bb_action.gauss(0,1)-gauss(4,1)", 16.0);
    line("displacement.mid.gauss(0,1)-gauss(4,1).mean", 2.0);
    line("displacement.mid.gauss(0,1)-gauss(4,1).variance", 1.0);
    line("sorted_matching.{0,1}-{5,6}", 25.0);
    line("ou(k=1,s2=2).from(2,0.25).mean(t=8)", 2.0 * e8);
    line("ou(k=1,s2=2).from(2,0.25).variance(t=8)", 1.0 - 0.75 * e8 * e8);
    line("kl.gauss(2,0.25)||gauss(0,1)", gaussian_kl(2.0, 0.25, 0.0, 1.0));
    line("fisher.gauss(2,0.25)||gauss(0,1)", gaussian_fisher(2.0, 0.25, 0.0, 1.0));
    line("kl.gauss(1,0.8)||gauss(0,1)", gaussian_kl(1.0, 0.8, 0.0, 1.0));
    line("entropy.gauss(0,1)", 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e));
    line("log_partition.ou(k=1,theta=1)", 0.5 * std::log(2.0 * std::numbers::pi));
    line("heat(s2=2).from(0,1).variance(t=1)", 3.0);
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Deterministic 1-D lab for Fokker-Planck relaxation, optimal transport and Schroedinger bridges",
                 "entroflow"};
    app.require_subcommand(1);
    std::string out;
    bool quiet = false;
    app.add_option("--out", out, "Output prefix (run) or directory (verify-all)");
    app.add_flag("--quiet", quiet, "Print nothing on success");

    std::string config;
    CLI::App* run = app.add_subcommand("run", "Run one scenario config (.toml or .json)");
    run->add_option("config", config, "Scenario file")->required();
    run->fallthrough();

    std::string dir;
    CLI::App* verify = app.add_subcommand("verify-all", "Run every scenario in a directory and aggregate verdicts");
    verify->add_option("dir", dir, "Directory of scenario files")->required();
    verify->fallthrough();

    CLI::App* oracles = app.add_subcommand("oracles", "Print closed-form reference values");
    oracles->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitError;
    }
    setup_logging();

    try {
        if (*run) return cmd_run(config, out, quiet);
        if (*verify) return cmd_verify_all(dir, out, quiet);
        if (*oracles) return cmd_oracles();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitError;
    }
    return kExitError;
}
