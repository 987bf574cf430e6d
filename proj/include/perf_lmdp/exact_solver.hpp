#pragma once

#include "perf_lmdp/mdp_core.hpp"

namespace plmdp {

struct KktResiduals {
    double stationarity = 0.0;
    double feasibility = 0.0;
    double complementarity = 0.0;

    double max() const;
};

struct RegularizedSolution {
    Vec d;
    Vec nu;
    Vec h;
    Vec g;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    KktResiduals kkt_residuals;
    int iterations = 0;
    bool converged = false;
};

struct SpectralConstants {
    double kappa = 0.0;
    double bigM = 0.0;
    double alpha = 0.0;
    double M_pinv_norm = 0.0;
};

struct SolverOptions {
    double tol = 1e-8;
    double gap_tol = 1e-6;
    int max_iter = 200000;
};

/// Generic occupancy program: maximize linear'd - (lambda/2)||reg_factor' d||^2
/// subject to flow d = rhs and d >= 0. Multipliers follow linear - lambda R R' d + flow' h + g = 0.
struct OccupancyQp {
    Vec linear;      // SA
    Mat reg_factor;  // SA x k
    Mat flow;        // S x SA
    Vec rhs;         // S
};

struct OccupancyQpSolution {
    Vec d;
    Vec h;
    Vec g;
    double objective = 0.0;
    KktResiduals kkt_residuals;
    int iterations = 0;
    bool converged = false;
};

OccupancyQpSolution solve_occupancy_qp(const OccupancyQp& program, double lambda, const SolverOptions& options = {},
                                       const Vec* warm_start = nullptr);

/// E = B - gamma mu Phi^T, the flow matrix of the occupancy constraints.
Mat flow_matrix(const MdpParams& params, const LinearMdpSpec& spec);

/// M = pinv(Phi) B^T - gamma mu^T, a D x S matrix.
Mat dual_geometry_matrix(const MdpParams& params, const LinearMdpSpec& spec);

SpectralConstants spectral_constants(const LinearMdpSpec& spec, const MdpParams& params);

/// Throws std::invalid_argument for lambda <= 0. A non-converged solve is reported through `converged`.
RegularizedSolution solve_regularized(const MdpParams& params, const LinearMdpSpec& spec, double lambda,
                                      const SolverOptions& options = {}, const Vec* warm_start = nullptr);

/// Regularized objective d'Phi theta - (lambda/2)||Phi' d||^2.
double regularized_objective(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec, double lambda);

double dual_objective(const Vec& h, const Vec& g, const MdpParams& params, const LinearMdpSpec& spec, double lambda);

Vec recover_nu_from_duals(const Vec& h, const Vec& g, const MdpParams& params, const LinearMdpSpec& spec,
                          double lambda);

/// alpha (lambda alpha + sqrt(D)).
double dual_norm_bound(double lambda, const SpectralConstants& constants, const LinearMdpSpec& spec);

struct DualPair {
    Vec h;
    Vec g;
};

/// Minimum-norm h over the optimal dual face of a solved instance, with its matching g >= 0.
DualPair minimum_norm_dual(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec, double lambda);

struct OracleResult {
    Vec d;
    int iterations = 0;
    bool converged = true;
};

/// Projected-gradient ascent with Dykstra projection onto the flow polytope. Independent of solve_qp.
OracleResult oracle_solve_small(const MdpParams& params, const LinearMdpSpec& spec, double lambda);

}  // namespace plmdp
