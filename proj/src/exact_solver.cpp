#include "perf_lmdp/exact_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "perf_lmdp/qp.hpp"
#include "perf_lmdp/response_maps.hpp"

namespace plmdp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

double KktResiduals::max() const { return std::max({stationarity, feasibility, complementarity}); }

Mat flow_matrix(const MdpParams& params, const LinearMdpSpec& spec) {
    return aggregation_matrix(spec) - spec.discount * params.mu * spec.features.transpose();
}

Mat dual_geometry_matrix(const MdpParams& params, const LinearMdpSpec& spec) {
    return pseudo_inverse(spec.features) * aggregation_matrix(spec).transpose() - spec.discount * params.mu.transpose();
}

SpectralConstants spectral_constants(const LinearMdpSpec& spec, const MdpParams& params) {
    SpectralConstants c;
    const Mat& Phi = spec.features;
    Eigen::SelfAdjointEigenSolver<Mat> gram(Phi.transpose() * Phi);
    c.bigM = gram.eigenvalues().maxCoeff();
    if (Phi.cols() >= Phi.rows()) {
        Eigen::SelfAdjointEigenSolver<Mat> outer(Phi * Phi.transpose());
        double k = outer.eigenvalues().minCoeff();
        c.kappa = k > 1e-12 * c.bigM ? k : 0.0;
    }
    c.alpha = std::sqrt(c.bigM) / (std::sqrt(static_cast<double>(spec.num_actions)) * (1.0 - spec.discount));
    Eigen::JacobiSVD<Mat> svd(dual_geometry_matrix(params, spec));
    const Vec& sv = svd.singularValues();
    double cutoff = 1e-10 * sv(0);
    double smallest = sv(0);
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) smallest = sv(i);
    c.M_pinv_norm = 1.0 / smallest;
    return c;
}

OccupancyQpSolution solve_occupancy_qp(const OccupancyQp& program, double lambda, const SolverOptions& options,
                                       const Vec* warm_start) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    const int n = static_cast<int>(program.linear.size());
    const int S = static_cast<int>(program.rhs.size());
    Mat hess = lambda * program.reg_factor * program.reg_factor.transpose();
    QpProblem qp;
    qp.P = hess;
    qp.q = -program.linear;
    qp.A.resize(S + n, n);
    qp.A << program.flow, Mat::Identity(n, n);
    qp.l.resize(S + n);
    qp.u.resize(S + n);
    qp.l << program.rhs, Vec::Zero(n);
    qp.u << program.rhs, Vec::Constant(n, kInf);

    QpSettings settings;
    settings.max_iter = options.max_iter;
    settings.eps_abs = std::min(1e-10, options.tol * 1e-2);
    settings.eps_rel = settings.eps_abs;
    QpResult res = solve_qp(qp, settings, warm_start);

    OccupancyQpSolution sol;
    sol.d = res.x.cwiseMax(0.0);
    sol.h = -res.y.head(S);
    sol.g = -res.y.tail(n);
    sol.iterations = res.iterations;
    sol.objective = program.linear.dot(sol.d) - 0.5 * lambda * (program.reg_factor.transpose() * sol.d).squaredNorm();
    Vec station = program.linear - hess * sol.d + program.flow.transpose() * sol.h + sol.g;
    sol.kkt_residuals.stationarity = station.cwiseAbs().maxCoeff();
    sol.kkt_residuals.feasibility = (program.flow * sol.d - program.rhs).cwiseAbs().maxCoeff() +
                                    std::max(0.0, -res.x.minCoeff()) + std::max(0.0, -sol.g.minCoeff());
    sol.kkt_residuals.complementarity = std::abs(sol.d.dot(sol.g));
    sol.converged = res.converged && sol.kkt_residuals.max() <= options.tol;
    return sol;
}

double regularized_objective(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec, double lambda) {
    Vec nu = spec.features.transpose() * d;
    return nu.dot(params.theta) - 0.5 * lambda * nu.squaredNorm();
}

RegularizedSolution solve_regularized(const MdpParams& params, const LinearMdpSpec& spec, double lambda,
                                      const SolverOptions& options, const Vec* warm_start) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    OccupancyQp program{spec.features * params.theta, spec.features, flow_matrix(params, spec), spec.start_dist};
    OccupancyQpSolution qp = solve_occupancy_qp(program, lambda, options, warm_start);
    RegularizedSolution sol;
    sol.d = qp.d;
    sol.nu = spec.features.transpose() * qp.d;
    sol.h = qp.h;
    sol.g = qp.g;
    sol.primal_objective = qp.objective;
    sol.dual_objective = dual_objective(qp.h, qp.g, params, spec, lambda);
    sol.kkt_residuals = qp.kkt_residuals;
    sol.iterations = qp.iterations;
    sol.converged = qp.converged && std::abs(sol.primal_objective - sol.dual_objective) <= options.gap_tol;
    return sol;
}

Vec recover_nu_from_duals(const Vec& h, const Vec& g, const MdpParams& params, const LinearMdpSpec& spec,
                          double lambda) {
    Vec inner = params.theta + dual_geometry_matrix(params, spec) * h + pseudo_inverse(spec.features) * g;
    return inner / lambda;
}

double dual_objective(const Vec& h, const Vec& g, const MdpParams& params, const LinearMdpSpec& spec, double lambda) {
    Vec inner = params.theta + dual_geometry_matrix(params, spec) * h + pseudo_inverse(spec.features) * g;
    return inner.squaredNorm() / (2.0 * lambda) - h.dot(spec.start_dist);
}

double dual_norm_bound(double lambda, const SpectralConstants& constants, const LinearMdpSpec& spec) {
    return constants.alpha * (lambda * constants.alpha + std::sqrt(static_cast<double>(spec.feature_dim())));
}

DualPair minimum_norm_dual(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec, double lambda) {
    const int S = spec.num_states, n = spec.num_pairs();
    Mat E = flow_matrix(params, spec);
    Vec w = lambda * spec.features * (spec.features.transpose() * d) - spec.features * params.theta;
    double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
    QpProblem qp;
    qp.P = Mat::Identity(S, S);
    qp.q = Vec::Zero(S);
    qp.A = E.transpose();
    qp.l.resize(n);
    qp.u = w;
    for (int i = 0; i < n; ++i) qp.l(i) = d(i) > 1e-9 * scale ? w(i) : -kInf;
    QpSettings settings;
    settings.eps_abs = 1e-11;
    settings.eps_rel = 1e-11;
    QpResult res = solve_qp(qp, settings);
    DualPair out;
    out.h = res.x;
    out.g = (w - E.transpose() * res.x).cwiseMax(0.0);
    return out;
}

OracleResult oracle_solve_small(const MdpParams& params, const LinearMdpSpec& spec, double lambda) {
    const int n = spec.num_pairs();
    if (n > 8) throw std::invalid_argument("oracle_solve_small needs S*A <= 8");
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    const Mat& Phi = spec.features;
    Mat E = flow_matrix(params, spec);
    Eigen::LDLT<Mat> gram(E * E.transpose());
    const Vec& rho = spec.start_dist;
    auto project_affine = [&](const Vec& v) -> Vec { return v - E.transpose() * gram.solve(E * v - rho); };

    OracleResult out;
    bool projections_ok = true;
    auto project = [&](const Vec& y) -> Vec {
        Vec x = y, p = Vec::Zero(n), q = Vec::Zero(n);
        for (int it = 0; it < 200000; ++it) {
            Vec a = project_affine(x + p);
            p = x + p - a;
            Vec x_next = (a + q).cwiseMax(0.0);
            q = a + q - x_next;
            double change = (x_next - x).norm();
            x = x_next;
            if (change <= 1e-14 && (E * x - rho).norm() <= 1e-12) return x;
        }
        projections_ok = false;
        return x;
    };

    Mat hess = lambda * Phi * Phi.transpose();
    Vec lin = Phi * params.theta;
    double L = Eigen::SelfAdjointEigenSolver<Mat>(hess).eigenvalues().maxCoeff();
    Vec d = project(Vec::Constant(n, 1.0 / (n * (1.0 - spec.discount))));
    const int max_iter = 1000000;
    for (int k = 0; k < max_iter; ++k) {
        double step = 1.0 / (L * std::pow(1.0 + k / 1000.0, 0.25));
        Vec next = project(d + step * (lin - hess * d));
        double mapping = (next - d).norm() / step;
        d = next;
        out.iterations = k + 1;
        if (mapping <= 1e-12) break;
    }
    out.d = d;
    out.converged = projections_ok;
    return out;
}

}  // namespace plmdp
