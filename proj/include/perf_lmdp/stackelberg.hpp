#pragma once

#include <filesystem>
#include <vector>

#include "perf_lmdp/mdp_core.hpp"
#include "perf_lmdp/response_maps.hpp"

namespace plmdp {

/// Two-agent stochastic game. Tensors are flattened with s-major, a1-middle, a2-minor order:
/// entry (s, a1, a2) lives at (s * A1 + a1) * A2 + a2. Row k of `transition` is P(.|s,a1,a2).
struct StackelbergGame {
    int num_states = 0;
    int leader_actions = 0;
    int follower_actions = 0;
    Vec leader_reward;
    Vec follower_reward;
    Mat transition;
    double discount = 0.0;
    double softmax_beta = 0.0;
    Vec start_dist;

    int flat(int s, int a1, int a2) const { return (s * leader_actions + a1) * follower_actions + a2; }
    double reward_scale() const;
};

std::vector<std::string> validate_game(const StackelbergGame& game);

/// Single-agent MDP faced by one agent once the other agent's policy is fixed.
struct AgentMdp {
    Mat reward;      // S x A
    Mat transition;  // (S*A) x S, row s*A + a is P(.|s,a)
};

AgentMdp build_follower_mdp(const StackelbergGame& game, const Policy& leader_policy);

struct SoftmaxResponse {
    Policy policy;
    Mat q_values;                      // S x A
    std::vector<double> sup_errors;    // successive sup-norm changes of value iteration
};

SoftmaxResponse follower_softmax_response(const AgentMdp& follower, double beta, double gamma);

/// Leader's induced MDP under a fixed follower policy.
AgentMdp induced_leader_mdp(const StackelbergGame& game, const Policy& follower_policy);

/// Least-squares (theta, mu) on the spec features; throws NumericalError if the residual exceeds 1e-8.
MdpParams fit_linear_params(const AgentMdp& mdp, const LinearMdpSpec& spec);

ResponseMap stackelberg_response_map(std::shared_ptr<const StackelbergGame> game, const LinearMdpSpec& spec);

/// Leader-MDP params induced by a leader policy (the map's apply after extracting the policy).
MdpParams stackelberg_params(const StackelbergGame& game, const Policy& leader_policy, const LinearMdpSpec& spec);

struct SensitivityBounds {
    double reward_per_delta = 0.0;
    double transition_per_delta = 0.0;
};

/// Two-agent bounds: 2 sqrt(2) beta A1 A2^{3/2} R^{2 or 1} / (1-gamma)^2 per unit of delta.
SensitivityBounds follower_sensitivity_bounds(const StackelbergGame& game);

/// Calculator only: m followers with A actions each, 3 sqrt(2) beta m A^{3m/2+1} R^{2 or 1} / (1-gamma)^2.
SensitivityBounds multi_follower_sensitivity_bounds(double beta, int followers, int actions, double reward_scale,
                                                    double gamma);

struct SensitivityCheckReport {
    double delta = 0.0;
    double max_reward_dev = 0.0;
    double max_transition_dev = 0.0;
    double reward_bound = 0.0;
    double transition_bound = 0.0;
    bool reward_pass = true;
    bool transition_pass = true;
};

SensitivityCheckReport lemma1_sensitivity_check(const StackelbergGame& game, const Policy& leader_policy,
                                      const Policy& leader_policy_tilde);

struct OccupancyL1Report {
    double kernel_deviation = 0.0;
    double l1_distance = 0.0;
    double bound = 0.0;
    bool pass = true;
};

/// Kernels are S x SA column-stochastic matrices.
OccupancyL1Report occupancy_l1_perturbation_check(const Mat& kernel, const Mat& kernel_tilde, const Policy& policy,
                                                  const Vec& rho, double gamma);

/// Game files: a TOML header with sizes, discount, softmax_beta, start_dist and the tensor CSV paths
/// (relative to the header file).
StackelbergGame load_game(const std::filesystem::path& toml_path);
void save_game(const StackelbergGame& game, const std::filesystem::path& toml_path);

}  // namespace plmdp

namespace plmdp {

class CounterRng;

/// Rewards uniform on [-1, 1]; transitions flat-Dirichlet.
StackelbergGame random_game(int num_states, int leader_actions, int follower_actions, double discount, double beta,
                            CounterRng& rng);

}  // namespace plmdp
