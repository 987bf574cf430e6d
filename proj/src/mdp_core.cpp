#include "perf_lmdp/mdp_core.hpp"

#include <cmath>
#include <fmt/format.h>

#include "perf_lmdp/errors.hpp"

namespace plmdp {

namespace {

constexpr double kZeroMass = 1e-12;
constexpr double kClamp = 1e-9;
constexpr double kKernelTol = 1e-9;

}  // namespace

std::vector<std::string> validate_spec(const LinearMdpSpec& spec) {
    std::vector<std::string> report;
    if (spec.num_states <= 0) report.push_back("num_states must be positive");
    if (spec.num_actions <= 0) report.push_back("num_actions must be positive");
    if (!(spec.discount >= 0.0 && spec.discount < 1.0)) report.push_back("discount must be in [0, 1)");
    if (!report.empty()) return report;

    if (spec.start_dist.size() != spec.num_states) {
        report.push_back(fmt::format("start_dist has length {} but num_states is {}",
                                     spec.start_dist.size(), spec.num_states));
    } else {
        if (spec.start_dist.minCoeff() < 0.0) report.push_back("start_dist has a negative entry");
        double total = spec.start_dist.sum();
        if (std::abs(total - 1.0) > 1e-12) report.push_back(fmt::format("start_dist sums to {:.12g}", total));
    }

    if (spec.features.rows() != spec.num_pairs()) {
        report.push_back(fmt::format("features has {} rows but S*A is {}", spec.features.rows(), spec.num_pairs()));
        return report;
    }
    if (spec.features.cols() == 0) {
        report.push_back("feature_dim must be positive");
        return report;
    }
    for (int i = 0; i < spec.features.rows(); ++i) {
        double n = spec.features.row(i).norm();
        if (n > 1.0 + 1e-12) report.push_back(fmt::format("feature row {} has norm {:.12g} > 1", i, n));
    }
    Eigen::JacobiSVD<Mat> svd(spec.features);
    const Vec& sv = svd.singularValues();
    double cutoff = 1e-10 * (sv.size() > 0 ? sv(0) : 0.0);
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i) rank += sv(i) > cutoff ? 1 : 0;
    if (rank < spec.feature_dim() || sv.size() < spec.feature_dim()) {
        report.push_back(fmt::format("features have rank {} < feature_dim {}", rank, spec.feature_dim()));
    }
    return report;
}

LinearMdpSpec make_spec(int num_states, int num_actions, double discount, Vec start_dist, Mat features) {
    LinearMdpSpec spec{num_states, num_actions, discount, std::move(start_dist), std::move(features)};
    auto report = validate_spec(spec);
    if (!report.empty()) {
        std::string msg = "invalid spec:";
        for (const auto& r : report) msg += " " + r + ";";
        throw ConfigError(msg);
    }
    return spec;
}

std::vector<std::string> validate_params(const MdpParams& params, const LinearMdpSpec& spec) {
    std::vector<std::string> report;
    const int D = spec.feature_dim();
    if (params.theta.size() != D) report.push_back("theta has wrong dimension");
    if (params.mu.rows() != spec.num_states || params.mu.cols() != D) report.push_back("mu has wrong shape");
    if (!report.empty()) return report;
    double bound = std::sqrt(static_cast<double>(D));
    if (params.theta.norm() > bound + 1e-12) report.push_back(fmt::format("||theta|| = {:.12g} exceeds sqrt(D)", params.theta.norm()));
    if (params.mu.norm() > bound + 1e-12) report.push_back(fmt::format("||mu||_F = {:.12g} exceeds sqrt(D)", params.mu.norm()));
    Mat P = params.mu * spec.features.transpose();
    for (int j = 0; j < P.cols(); ++j) {
        if (P.col(j).minCoeff() < -kKernelTol || std::abs(P.col(j).sum() - 1.0) > kKernelTol) {
            report.push_back(fmt::format("transition column {} is not a probability vector", j));
        }
    }
    return report;
}

Mat aggregation_matrix(const LinearMdpSpec& spec) {
    Mat B = Mat::Zero(spec.num_states, spec.num_pairs());
    for (int s = 0; s < spec.num_states; ++s)
        for (int a = 0; a < spec.num_actions; ++a) B(s, spec.index(s, a)) = 1.0;
    return B;
}

Dynamics reconstruct_dynamics(const MdpParams& params, const LinearMdpSpec& spec) {
    Dynamics dyn;
    dyn.reward = spec.features * params.theta;
    dyn.transition = params.mu * spec.features.transpose();
    for (int j = 0; j < dyn.transition.cols(); ++j) {
        auto col = dyn.transition.col(j);
        double lo = col.minCoeff();
        double total = col.sum();
        if (lo < -kKernelTol || std::abs(total - 1.0) > kKernelTol) {
            throw NumericalError(fmt::format("invalid kernel: column {} has min {:.3e} and sum {:.12g}", j, lo, total));
        }
        if (lo < 0.0 || total != 1.0) {
            col = col.cwiseMax(0.0);
            col /= col.sum();
        }
    }
    return dyn;
}

Policy policy_from_occupancy(const Vec& d, const LinearMdpSpec& spec) {
    const int S = spec.num_states, A = spec.num_actions;
    Policy pi(S, A);
    for (int s = 0; s < S; ++s) {
        Vec row = d.segment(s * A, A);
        for (int a = 0; a < A; ++a) {
            if (row(a) < 0.0 && row(a) >= -kClamp) row(a) = 0.0;
        }
        double mass = row.sum();
        if (mass > kZeroMass) {
            pi.row(s) = row.transpose() / mass;
        } else {
            pi.row(s).setConstant(1.0 / A);
        }
    }
    return pi;
}

Mat policy_matrix(const Policy& pi, const LinearMdpSpec& spec) {
    Mat Pi = Mat::Zero(spec.num_pairs(), spec.num_states);
    for (int s = 0; s < spec.num_states; ++s)
        for (int a = 0; a < spec.num_actions; ++a) Pi(spec.index(s, a), s) = pi(s, a);
    return Pi;
}

Vec occupancy_from_policy(const Policy& pi, const MdpParams& params, const LinearMdpSpec& spec) {
    Mat Pi = policy_matrix(pi, spec);
    Mat P = reconstruct_dynamics(params, spec).transition;
    // State visitation q solves q = rho + gamma P Pi q; then d = Pi q.
    Mat system = Mat::Identity(spec.num_states, spec.num_states) - spec.discount * P * Pi;
    Eigen::FullPivLU<Mat> lu(system);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
        throw NumericalError("singular occupancy system: params do not define a valid kernel");
    }
    Vec q = lu.solve(spec.start_dist);
    Vec d = Pi * q;
    return d.cwiseMax(0.0);
}

Vec bellman_flow_residual(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec) {
    Vec flow = aggregation_matrix(spec) * d;
    return flow - spec.start_dist - spec.discount * (params.mu * (spec.features.transpose() * d));
}

double value_of_policy(const Policy& pi, const MdpParams& params, const LinearMdpSpec& spec) {
    Vec d = occupancy_from_policy(pi, params, spec);
    return d.dot(spec.features * params.theta);
}

Vec state_values(const Policy& pi, const MdpParams& params, const LinearMdpSpec& spec) {
    Dynamics dyn = reconstruct_dynamics(params, spec);
    Mat Pi = policy_matrix(pi, spec);
    // V = Pi^T r + gamma Pi^T P^T V
    Mat Ppi = Pi.transpose() * dyn.transition.transpose();
    Vec rpi = Pi.transpose() * dyn.reward;
    Mat system = Mat::Identity(spec.num_states, spec.num_states) - spec.discount * Ppi;
    return system.fullPivLu().solve(rpi);
}

Policy uniform_policy(const LinearMdpSpec& spec) {
    return Policy::Constant(spec.num_states, spec.num_actions, 1.0 / spec.num_actions);
}

bool is_row_stochastic(const Policy& pi, double tol) {
    for (int s = 0; s < pi.rows(); ++s) {
        if (pi.row(s).minCoeff() < -tol) return false;
        if (std::abs(pi.row(s).sum() - 1.0) > tol) return false;
    }
    return true;
}

}  // namespace plmdp
