#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "perf_lmdp/exact_solver.hpp"
#include "perf_lmdp/response_maps.hpp"

namespace plmdp {

struct ConvergenceCertificate {
    double lambda = 0.0;
    double lambda_min = 0.0;
    double rate_r = 0.0;
    bool contracts = false;  // false is the "no-contraction" flag
    double beta_recurrence = 0.0;
    double eps_mu_max = 0.0;
    double discount = 0.0;

    /// ceil(ln(2/(delta(1-gamma))) / ln(1/r)); 1 when r = 0. Throws if the certificate does not contract.
    long iters_to_delta(double delta) const;
};

/// Throws ConfigError when kappa = 0.
ConvergenceCertificate certify(double eps_theta, double eps_mu, const SpectralConstants& constants,
                               const LinearMdpSpec& spec, double lambda);

/// 1.25 * lambda_min, the "auto" regularization choice.
double auto_lambda(double eps_theta, double eps_mu, const SpectralConstants& constants, const LinearMdpSpec& spec);

struct TraceRecord {
    int round = 0;
    Vec d;
    Policy policy;
    double step_norm = 0.0;
    std::optional<double> dist_to_ref;
    double reg_objective = 0.0;
    double perf_value = 0.0;
    std::optional<double> stability_gap;
    double wall_ms = 0.0;
    uint64_t rng_digest = 0;
};

struct Trace {
    std::string response_kind;
    std::vector<TraceRecord> records;
    bool converged = false;
};

struct RetrainOptions {
    bool record_stability_gap = true;
    SolverOptions solver;
    std::optional<Vec> reference;
    std::function<void(const TraceRecord&)> on_round;
};

/// d_t = argmax of the regularized objective under response(d_{t-1}).
Trace run_repeated_optimization(const ResponseMap& response, const LinearMdpSpec& spec, double lambda, const Vec& d0,
                                int max_rounds, double stop_delta, const RetrainOptions& options = {});

/// Long-run iterate used as the stable-point reference: 5x the certified count at stop_delta / 100.
Vec reference_stable_point(const ResponseMap& response, const LinearMdpSpec& spec, double lambda,
                           const ConvergenceCertificate& certificate, double stop_delta, const Vec& d0);

struct StabilityGap {
    double regularized = 0.0;
    double unregularized = 0.0;
};

/// Gaps of d against the best response in response(d); the unregularized gap uses lambda = 1e-9.
StabilityGap stability_gap(const Vec& d, const ResponseMap& response, const LinearMdpSpec& spec, double lambda);

double theorem2_bound(double eps_theta, double eps_mu, const SpectralConstants& constants, const LinearMdpSpec& spec);

struct ValueGapBound {
    double delta = 0.0;
    double lambda0 = 0.0;
    double bound = 0.0;
    /// max(lambda0, sqrt(S1 / S2)), the regularization that balances the two error terms.
    double suggested_lambda = 0.0;
};

ValueGapBound theorem3_bound(double eps_theta, double eps_mu, const SpectralConstants& constants,
                             const LinearMdpSpec& spec);

struct SelfConsistentOccupancy {
    Vec d;
    MdpParams params;
    int iterations = 0;
    bool converged = false;
};

/// Fixed point d = occupancy_from_policy(pi, response(d)), damped by 0.5 once the residual grows; capped at 500.
SelfConsistentOccupancy self_consistent_occupancy(const Policy& pi, const ResponseMap& response,
                                                  const LinearMdpSpec& spec);

struct BruteForceResult {
    Vec d;
    Policy policy;
    double value = 0.0;
    long grid_points = 0;
    long diverged_points = 0;
};

/// Enumerates per-state policy grids; requires S*A <= 6. Threads merge results in lexicographic grid order.
BruteForceResult brute_force_performative_optimum(const ResponseMap& response, const LinearMdpSpec& spec,
                                                  double grid_resolution, int threads = 0);

/// Classical optimal state values by value iteration (tolerance 1e-12).
Vec optimal_values(const MdpParams& params, const LinearMdpSpec& spec);

}  // namespace plmdp
