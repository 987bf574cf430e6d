#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "perf_lmdp/sampling.hpp"

namespace plmdp {

/// Unset step sizes and radii resolve to the default formulas in resolved().
struct PdConfig {
    int T_inner = 200;
    int K = 200;
    double lambda = 1.0;
    double b_cov = 10.0;
    std::optional<double> eta_omega;
    std::optional<double> eta_pi;
    std::optional<double> omega_radius;
    std::optional<double> nu_radius;
};

struct ResolvedPdConfig {
    int T_inner = 0;
    int K = 0;
    double lambda = 0.0;
    double b_cov = 0.0;
    double eta_omega = 0.0;
    double eta_pi = 0.0;
    double omega_radius = 0.0;
    double nu_radius = 0.0;
};

/// eta_omega = D sqrt(B) / sqrt(K (B + (1-gamma)^-2)), eta_pi = sqrt(log A / T) (1-gamma) / D,
/// omega radius 2D/(1-gamma), nu radius D sqrt(B).
ResolvedPdConfig resolve(const PdConfig& config, const LinearMdpSpec& spec);

struct PdResult {
    /// pi_0 .. pi_{T-1}; pi_l is the policy evaluated by (omegas[l], nus[l]).
    std::vector<Policy> policies;
    std::vector<Vec> omegas;
    std::vector<Vec> nus;
    int selected_index = 0;
    Policy selected_policy;
    /// Filled by mixture_average_feature.
    Vec nu_tilde;
    /// Plug-in objective nu' Sigma^{-1} b - (lambda/2)||nu||^2 per outer iteration.
    std::vector<double> objective_history;
    double max_gradient_norm = 0.0;
    ResolvedPdConfig config;
};

/// Throws NumericalError for singular sigma and ConfigError for an empty dataset.
PdResult run_offline_primal_dual(const Dataset& data, const CovarianceEstimate& sigma, const LinearMdpSpec& spec,
                                 const PdConfig& config, uint64_t seed);

/// Single-tuple estimate of d^{pi,nu}: pi(a~|s~) (1{s~ = s0} + gamma phi(s,a)' Sigma^{-1} nu 1{s~ = s'}).
Vec occupancy_estimate(const Transition& tuple, const Policy& pi, const Vec& sigma_inv_nu, const LinearMdpSpec& spec);

/// d^{pi,nu}(s,a) = pi(a|s) (rho(s) + gamma mu(s)' nu).
Vec occupancy_target(const Policy& pi, const Vec& nu, const MdpParams& params, const LinearMdpSpec& spec);

/// Phi' d_hat - phi phi' Sigma^{-1} nu_prev for one tuple.
Vec omega_gradient_sample(const Transition& tuple, const Policy& pi, const Vec& nu_prev, const CovarianceEstimate& sigma,
                          const LinearMdpSpec& spec);

/// g(s) = sum_a pi(a|s) phi(s,a)' omega.
Vec policy_state_values(const Policy& pi, const Vec& omega, const LinearMdpSpec& spec);

/// Stationary point of the empirical Lagrangian in nu, projected onto the ball of `radius` (infinite disables it).
Vec nu_closed_form(const Dataset& data, const CovarianceEstimate& sigma, const Policy& pi_prev, const Vec& omega_prev,
                   double lambda, const LinearMdpSpec& spec, double radius);

/// Per-state softmax of eta * scores.
Policy policy_update(const Mat& cumulative_scores, double eta_pi);

struct MixtureFeature {
    Vec nu_tilde;
    double objective = 0.0;
    /// Mean occupancy of the policies, a feasible occupancy of the mixture.
    Vec occupancy;
};

MixtureFeature mixture_average_feature(const PdResult& result, const MdpParams& params, const LinearMdpSpec& spec,
                                       double lambda);

/// Required K and T for accuracy eps: K >= 144 D^2 B (B + (1-gamma)^-2) / eps^2, T >= 576 D^2 log A / (eps^2 (1-gamma)^2).
struct PdSampleSizes {
    double K = 0.0;
    double T = 0.0;
};
PdSampleSizes primal_dual_sample_sizes(const LinearMdpSpec& spec, double b_cov, double eps);

}  // namespace plmdp
