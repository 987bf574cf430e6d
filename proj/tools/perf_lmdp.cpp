#include <CLI11.hpp>
#include <iostream>
#include <spdlog/spdlog.h>

#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/experiments.hpp"

using namespace plmdp;
namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::optional<uint64_t> seed;
    std::string lambda;
    std::optional<int> rounds;
    std::optional<double> stop_delta;
    std::string preset;
    std::string m_schedule;
    std::string solver;
    std::string sigma;
    std::optional<double> ridge;
    std::string dataset;
    std::optional<int> T, K;
    std::optional<double> eta_omega, eta_pi, b_cov;
    std::string game;
    std::string mode;
};

void apply(ExperimentConfig& c, const Overrides& o) {
    if (o.seed) {
        if (*o.seed > static_cast<uint64_t>(INT64_MAX)) throw ConfigError("--seed must fit in a signed 64-bit integer");
        c.seed = *o.seed;
    }
    if (!o.lambda.empty()) {
        if (o.lambda == "auto") {
            c.lambda.reset();
        } else {
            double v;
            try {
                v = std::stod(o.lambda);
            } catch (const std::exception&) {
                throw ConfigError("--lambda must be a positive number or auto");
            }
            if (!(v > 0.0)) throw ConfigError("--lambda must be positive");
            c.lambda = v;
        }
    }
    if (o.rounds) c.rounds = *o.rounds;
    if (o.stop_delta) c.stop_delta = *o.stop_delta;
    if (!o.preset.empty()) c.preset = o.preset;
    if (!o.m_schedule.empty()) {
        bool numeric = o.m_schedule.find_first_not_of("0123456789") == std::string::npos;
        if (numeric) {
            c.m_schedule = {std::stol(o.m_schedule)};
            c.m_schedule_file.clear();
        } else {
            if (!fs::exists(o.m_schedule)) throw ConfigError("m-schedule file not found: " + o.m_schedule);
            c.m_schedule_file = fs::absolute(o.m_schedule).string();
        }
    }
    if (!o.solver.empty()) c.finite_solver = o.solver;
    if (!o.sigma.empty()) c.sigma_mode = o.sigma;
    if (o.ridge) c.ridge = *o.ridge;
    if (!o.dataset.empty()) {
        if (!fs::exists(o.dataset)) throw ConfigError("dataset not found: " + o.dataset);
        c.dataset_file = fs::absolute(o.dataset).string();
        if (c.sigma_mode == "exact") c.sigma_mode = "estimated";
    }
    if (o.T) c.pd_T = *o.T;
    if (o.K) c.pd_K = *o.K;
    if (o.eta_omega) c.eta_omega = o.eta_omega;
    if (o.eta_pi) c.eta_pi = o.eta_pi;
    if (o.b_cov) c.b_cov = o.b_cov;
    if (!o.game.empty()) {
        if (!fs::exists(o.game)) throw ConfigError("game file not found: " + o.game);
        if (!c.game) c.game = GameConfig{};
        c.game->file = fs::absolute(o.game).string();
    }
    if (!o.mode.empty()) c.stackelberg_mode = o.mode;
    if (c.driver == Driver::stackelberg && !c.game) c.game = GameConfig{};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Performative reinforcement learning in linear MDPs: solvers, retraining drivers and diagnostics"};
    app.require_subcommand(1);
    app.fallthrough();

    std::vector<std::string> configs;
    std::string out = "runs";
    std::string log_level = "info";
    Overrides o;
    app.add_option("--config", configs, "TOML experiment config (repeat to run several in parallel)")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Run seed");
    app.add_option("--out", out, "Output directory");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--lambda", o.lambda, "Regularization strength or auto");
        sub->add_option("--preset", o.preset, "reference, single-state, random-certified or files")
            ->check(CLI::IsMember({"reference", "single-state", "random-certified", "files"}));
    };
    auto add_rounds = [&](CLI::App* sub) {
        sub->add_option("--rounds", o.rounds, "Maximum retraining rounds")->check(CLI::PositiveNumber);
        sub->add_option("--stop-delta", o.stop_delta, "Stop when the step norm falls to this value")
            ->check(CLI::NonNegativeNumber);
    };

    std::vector<std::pair<CLI::App*, Driver>> subs;
    auto* certify = app.add_subcommand("certify", "Convergence certificate and bound values");
    add_common(certify);
    subs.emplace_back(certify, Driver::certify);
    auto* solve = app.add_subcommand("solve", "Regularized occupancy solve on the base environment");
    add_common(solve);
    subs.emplace_back(solve, Driver::solve);
    auto* exact = app.add_subcommand("retrain-exact", "Repeated optimization with exact solves");
    add_common(exact);
    add_rounds(exact);
    subs.emplace_back(exact, Driver::retrain_exact);
    auto* finite = app.add_subcommand("retrain-finite", "Repeated optimization from finite samples");
    add_common(finite);
    add_rounds(finite);
    finite->add_option("--m-schedule", o.m_schedule, "Samples per round, or a file with one count per line");
    finite->add_option("--solver", o.solver, "exact-saddle or primal-dual")
        ->check(CLI::IsMember({"exact-saddle", "primal-dual"}));
    finite->add_option("--sigma", o.sigma, "exact or estimated")->check(CLI::IsMember({"exact", "estimated"}));
    finite->add_option("--ridge", o.ridge, "Ridge added to singular covariances")->check(CLI::NonNegativeNumber);
    subs.emplace_back(finite, Driver::retrain_finite);
    auto* pd = app.add_subcommand("primal-dual", "Offline regularized primal-dual solver");
    add_common(pd);
    pd->add_option("--dataset", o.dataset, "Dataset CSV (s0,s,a,r,s_next)");
    pd->add_option("--T", o.T, "Outer iterations")->check(CLI::PositiveNumber);
    pd->add_option("--K", o.K, "Inner gradient steps")->check(CLI::PositiveNumber);
    pd->add_option("--eta-omega", o.eta_omega, "Step size for omega")->check(CLI::PositiveNumber);
    pd->add_option("--eta-pi", o.eta_pi, "Policy step size")->check(CLI::PositiveNumber);
    pd->add_option("--b-cov", o.b_cov, "Coverage constant")->check(CLI::PositiveNumber);
    subs.emplace_back(pd, Driver::primal_dual);
    auto* st = app.add_subcommand("stackelberg", "Leader-follower game: sensitivity checks or retraining");
    add_common(st);
    add_rounds(st);
    st->add_option("--game", o.game, "Game TOML file");
    st->add_option("--mode", o.mode, "retrain or check")->check(CLI::IsMember({"retrain", "check"}));
    subs.emplace_back(st, Driver::stackelberg);
    auto* diag = app.add_subcommand("diagnose", "Spectral constants, sensitivities and coverage");
    add_common(diag);
    subs.emplace_back(diag, Driver::diagnose);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }
    spdlog::set_level(spdlog::level::from_str(log_level));

    Driver driver = Driver::certify;
    for (const auto& [sub, d] : subs)
        if (sub->parsed()) driver = d;

    std::vector<std::pair<ExperimentConfig, fs::path>> jobs;
    try {
        if (configs.empty()) {
            ExperimentConfig c;
            c.driver = driver;
            c.base_dir = fs::current_path();
            apply(c, o);
            jobs.emplace_back(c, fs::path(out));
        } else {
            for (const auto& path : configs) {
                ExperimentConfig c = parse_config(path);
                c.driver = driver;
                apply(c, o);
                fs::path dir = configs.size() == 1 ? fs::path(out) : fs::path(out) / fs::path(path).stem();
                jobs.emplace_back(c, dir);
            }
        }
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return exit_config;
    }
    return jobs.size() == 1 ? run_command(jobs[0].first, jobs[0].second) : run_many(jobs);
}
