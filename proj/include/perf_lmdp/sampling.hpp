#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "perf_lmdp/exact_solver.hpp"
#include "perf_lmdp/response_maps.hpp"
#include "perf_lmdp/retraining.hpp"

namespace plmdp {

struct Transition {
    int s0 = 0;
    int s = 0;
    int a = 0;
    double r = 0.0;
    int s_next = 0;
};

/// Empty `weights` means every tuple has weight 1. Enumerated datasets carry exact probabilities.
struct Dataset {
    std::vector<Transition> tuples;
    std::vector<double> weights;
    int round = 0;
    uint64_t seed = 0;
    uint64_t rng_digest = 0;

    double weight(size_t j) const { return weights.empty() ? 1.0 : weights[j]; }
    double total_weight() const;
};

enum class CovarianceSource { exact, estimated };

struct CovarianceEstimate {
    Mat sigma;
    CovarianceSource source = CovarianceSource::exact;
    double ridge = 0.0;
};

/// s0 ~ rho, (s,a) ~ (1-gamma) d, s' ~ P(.|s,a), r = phi(s,a)'theta plus optional uniform noise.
Dataset sample_dataset(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec, long m, uint64_t seed,
                       int round = 0, double reward_noise = 0.0);

/// Every (s0, s, a, s') outcome weighted by its exact probability.
Dataset enumerate_dataset(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec);

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset_csv(const std::filesystem::path& path, const LinearMdpSpec& spec);

/// Sum over (s,a) of (1-gamma) d(s,a) phi phi'; adds `ridge` * I when lambda_min falls below 1e-10.
CovarianceEstimate expected_covariance(const Vec& d, const LinearMdpSpec& spec, double ridge = 1e-6);
CovarianceEstimate estimated_covariance(const Dataset& data, const LinearMdpSpec& spec, double ridge = 1e-6);

double true_lagrangian(const Vec& d, const Vec& nu, const Vec& g, const Vec& omega, const MdpParams& params,
                       const LinearMdpSpec& spec, double lambda);

/// Throws NumericalError for a singular covariance.
double empirical_lagrangian(const Dataset& data, const CovarianceEstimate& sigma, const LinearMdpSpec& spec,
                            const Vec& d, const Vec& nu, const Vec& g, const Vec& omega, double lambda);

/// Sample moments that fully determine the empirical Lagrangian.
struct EmpiricalMoments {
    Mat feature_cov;    // D x D, mean of phi phi'
    Vec feature_reward; // D, mean of phi r
    Mat feature_next;   // D x S, mean of phi e_{s'}'
    Vec start_freq;     // S, frequencies of s0
};

EmpiricalMoments empirical_moments(const Dataset& data, const LinearMdpSpec& spec);

/// Moments for which the empirical Lagrangian equals the true Lagrangian for any covariance.
EmpiricalMoments population_moments(const CovarianceEstimate& sigma, const MdpParams& params, const LinearMdpSpec& spec);

struct SaddleSolution {
    Vec d;
    Vec nu;
    Vec omega;
    Vec g;
    double objective = 0.0;
    bool converged = false;
};

/// Max-min of the empirical Lagrangian, solved as the equivalent QP in (d, nu).
SaddleSolution solve_empirical_saddle(const EmpiricalMoments& moments, const CovarianceEstimate& sigma,
                                      const LinearMdpSpec& spec, double lambda, const SolverOptions& options = {});

/// E_{d*}[phi]' Sigma_pi^{-2} E_{d*}[phi] with d* optimal (lambda = 1e-9) in the environment induced by pi.
double coverage_bound(const Policy& policy, const ResponseMap& response, const LinearMdpSpec& spec);

enum class FiniteSolver { exact_saddle, primal_dual };
enum class SigmaMode { exact, estimated };

struct FiniteSampleOptions {
    /// m_t for round t (1-based); the last entry repeats. Nonpositive entries use population moments.
    std::vector<long> m_schedule{20000};
    FiniteSolver solver = FiniteSolver::exact_saddle;
    SigmaMode sigma_mode = SigmaMode::exact;
    double ridge = 1e-6;
    double reward_noise = 0.0;
    int pd_T = 200;
    int pd_K = 200;
    double pd_b_cov = 10.0;
    std::optional<Vec> reference;
    std::optional<Vec> d0;
    SolverOptions solver_options;
    std::function<void(const TraceRecord&)> on_round;
};

/// Deploy, sample, solve the empirical saddle point, extract the next policy.
Trace run_finite_sample_retraining(const ResponseMap& response, const LinearMdpSpec& spec, double lambda,
                                   int max_rounds, uint64_t seed, const FiniteSampleOptions& options = {});

}  // namespace plmdp
