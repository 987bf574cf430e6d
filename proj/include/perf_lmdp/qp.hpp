#pragma once

#include "perf_lmdp/mdp_core.hpp"

namespace plmdp {

/// minimize 0.5 x'Px + q'x subject to l <= Ax <= u (use +-infinity for open sides).
struct QpProblem {
    Mat P;
    Vec q;
    Mat A;
    Vec l;
    Vec u;
};

struct QpSettings {
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    double eps_abs = 1e-10;
    double eps_rel = 1e-10;
    int max_iter = 200000;
    int check_every = 25;
    bool adaptive_rho = true;
    bool polish = true;
};

struct QpResult {
    Vec x;
    Vec y;  // Px + q + A'y = 0 at optimality; y_i < 0 on active lower bounds
    int iterations = 0;
    bool converged = false;
    bool polished = false;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
};

/// Dense operator-splitting (ADMM) solver with a cached Cholesky factor and active-set polishing.
QpResult solve_qp(const QpProblem& problem, const QpSettings& settings = {}, const Vec* x0 = nullptr,
                  const Vec* y0 = nullptr);

/// Largest violation among primal feasibility, stationarity, sign and complementarity conditions.
double qp_kkt_error(const QpProblem& problem, const Vec& x, const Vec& y);

}  // namespace plmdp
