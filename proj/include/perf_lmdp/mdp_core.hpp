#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace plmdp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Static problem data. Row s*A + a of `features` holds phi(s, a).
struct LinearMdpSpec {
    int num_states = 0;
    int num_actions = 0;
    double discount = 0.0;
    Vec start_dist;
    Mat features;

    int feature_dim() const { return static_cast<int>(features.cols()); }
    int num_pairs() const { return num_states * num_actions; }
    int index(int s, int a) const { return s * num_actions + a; }
};

/// Linear MDP parameters: reward = Phi theta, transition = mu Phi^T.
struct MdpParams {
    Vec theta;  // D
    Mat mu;     // S x D, row s' holds mu(s')
};

struct Dynamics {
    Vec reward;      // SA
    Mat transition;  // S x SA, column (s,a) is P(.|s,a)
};

/// Conditional action probabilities, S x A.
using Policy = Mat;

/// Returns the list of violated invariants; empty means valid.
std::vector<std::string> validate_spec(const LinearMdpSpec& spec);

/// Builds a spec and throws ConfigError listing every violated invariant.
LinearMdpSpec make_spec(int num_states, int num_actions, double discount,
                        Vec start_dist, Mat features);

std::vector<std::string> validate_params(const MdpParams& params, const LinearMdpSpec& spec);

/// S x SA aggregation matrix with B(s, (s',a')) = 1 iff s' = s.
Mat aggregation_matrix(const LinearMdpSpec& spec);

/// Throws NumericalError if a transition column leaves the simplex by more than 1e-9.
Dynamics reconstruct_dynamics(const MdpParams& params, const LinearMdpSpec& spec);

Policy policy_from_occupancy(const Vec& d, const LinearMdpSpec& spec);

/// SA x S matrix Pi with Pi((s,a), s) = pi(a|s).
Mat policy_matrix(const Policy& pi, const LinearMdpSpec& spec);

Vec occupancy_from_policy(const Policy& pi, const MdpParams& params, const LinearMdpSpec& spec);

/// B d - rho - gamma mu Phi^T d.
Vec bellman_flow_residual(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec);

double value_of_policy(const Policy& pi, const MdpParams& params, const LinearMdpSpec& spec);

/// Per-state values V^pi of a policy under params.
Vec state_values(const Policy& pi, const MdpParams& params, const LinearMdpSpec& spec);

Policy uniform_policy(const LinearMdpSpec& spec);

bool is_row_stochastic(const Policy& pi, double tol = 1e-12);

}  // namespace plmdp
