#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "perf_lmdp/retraining.hpp"
#include "perf_lmdp/sampling.hpp"
#include "perf_lmdp/stackelberg.hpp"

namespace plmdp {

enum class Driver { certify, solve, retrain_exact, retrain_finite, primal_dual, stackelberg, diagnose };

std::string to_string(Driver driver);
Driver driver_from_string(const std::string& name);

/// Game source: a TOML game file or a random game drawn from `seed`.
struct GameConfig {
    std::string file;
    uint64_t seed = 1;
    int num_states = 2;
    int leader_actions = 2;
    int follower_actions = 2;
    double discount = 0.9;
    double beta = 0.1;

    bool operator==(const GameConfig&) const = default;
};

/// Relative paths are resolved against `base_dir`, the directory of the config file.
struct ExperimentConfig {
    Driver driver = Driver::certify;
    uint64_t seed = 0;
    std::filesystem::path base_dir;

    // [mdp]
    std::string preset = "reference";  // reference | single-state | random-certified | files
    uint64_t preset_seed = 1;
    int num_states = 0;
    int num_actions = 0;
    double discount = 0.0;
    std::string start_dist_file;
    std::string features_file;  // tabular features when empty
    std::string reward_file;
    std::string kernel_file;

    // [response]
    std::string response_kind;  // empty keeps the preset's own response
    std::optional<double> eps_theta;
    std::optional<double> eps_mu;
    uint64_t directions_seed = 7;
    std::string theta_dir_file;
    std::string mu_dir_file;

    // [game]
    std::optional<GameConfig> game;

    // [run]
    std::optional<double> lambda;  // empty means "auto"
    int rounds = 50;
    double stop_delta = 1e-8;
    bool record_stability_gap = true;

    // [finite]
    std::vector<long> m_schedule{20000};
    std::string m_schedule_file;
    std::string finite_solver = "exact-saddle";
    std::string sigma_mode = "exact";
    double ridge = 1e-6;
    double reward_noise = 0.0;

    // [primal_dual]
    int pd_T = 200;
    int pd_K = 200;
    std::optional<double> eta_omega;
    std::optional<double> eta_pi;
    std::optional<double> b_cov;
    std::string dataset_file;
    long pd_samples = 20000;

    // [stackelberg]
    std::string stackelberg_mode = "retrain";  // retrain | check
    int policy_pairs = 200;
    int kernel_pairs = 100;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Throws ConfigError; messages carry "path:line:" context where the offending key has a source position.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_string(const std::string& text, const std::filesystem::path& base_dir,
                                     const std::string& source_name = "<config>");

/// TOML text that parse_config_string maps back to an equal config.
std::string serialize(const ExperimentConfig& config);

/// Everything a driver needs, loaded and validated up front.
struct Problem {
    LinearMdpSpec spec;
    MdpParams base;
    std::shared_ptr<const ResponseMap> response;
    std::shared_ptr<const StackelbergGame> game;
};

Problem load_problem(const ExperimentConfig& config);

/// One JSON object per line, flushed after each record. Throws IoError when the stream fails.
class TraceSink {
public:
    explicit TraceSink(std::ostream& out) : out_(out) {}
    void emit(const TraceRecord& record);

private:
    std::ostream& out_;
};

std::string trace_record_json(const TraceRecord& record);
void emit_trace(const std::vector<TraceRecord>& records, std::ostream& sink);

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_numerical = 2 };

/// Runs one config into `out_dir`. Config problems are detected before `out_dir` is touched.
int run_command(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Runs several configs, at most PERF_LMDP_THREADS at a time; returns the largest exit code.
int run_many(const std::vector<std::pair<ExperimentConfig, std::filesystem::path>>& jobs);

std::string sha256_hex(const std::string& data);

}  // namespace plmdp
