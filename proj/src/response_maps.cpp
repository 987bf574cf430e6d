#include "perf_lmdp/response_maps.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/stackelberg.hpp"

namespace plmdp {

std::string to_string(ResponseKind kind) {
    switch (kind) {
        case ResponseKind::constant: return "constant";
        case ResponseKind::affine: return "affine";
        case ResponseKind::policy_factored: return "policy-factored";
        case ResponseKind::stackelberg: return "stackelberg";
    }
    return "unknown";
}

ResponseKind response_kind_from_string(const std::string& name) {
    if (name == "constant") return ResponseKind::constant;
    if (name == "affine" || name == "affine-in-occupancy") return ResponseKind::affine;
    if (name == "policy-factored") return ResponseKind::policy_factored;
    if (name == "stackelberg" || name == "stackelberg-induced") return ResponseKind::stackelberg;
    throw ConfigError("unknown response kind '" + name + "'");
}

namespace {

void check_directions(const AffineDirections& dirs, const LinearMdpSpec& spec) {
    const int D = spec.feature_dim(), SA = spec.num_pairs(), S = spec.num_states;
    if (dirs.theta_dir.rows() != D || dirs.theta_dir.cols() != SA)
        throw ConfigError(fmt::format("theta direction must be {} x {}", D, SA));
    if (dirs.mu_dir.rows() != S * D || dirs.mu_dir.cols() != SA)
        throw ConfigError(fmt::format("mu direction must be {} x {}", S * D, SA));
}

}  // namespace

ResponseMap ResponseMap::constant(MdpParams base, LinearMdpSpec spec) {
    auto report = validate_params(base, spec);
    if (!report.empty()) throw ConfigError("invalid base params: " + report.front());
    ResponseMap map;
    map.kind_ = ResponseKind::constant;
    map.base_ = std::move(base);
    map.spec_ = std::move(spec);
    return map;
}

ResponseMap ResponseMap::affine(MdpParams base, double eps_theta, double eps_mu, AffineDirections dirs,
                                LinearMdpSpec spec) {
    if (eps_theta < 0.0 || eps_mu < 0.0) throw ConfigError("sensitivities must be nonnegative");
    check_directions(dirs, spec);
    auto report = validate_params(base, spec);
    if (!report.empty()) throw ConfigError("invalid base params: " + report.front());
    ResponseMap map;
    map.kind_ = ResponseKind::affine;
    map.eps_theta_ = eps_theta;
    map.eps_mu_ = eps_mu;
    map.base_ = std::move(base);
    map.dirs_ = std::move(dirs);
    map.spec_ = std::move(spec);
    return map;
}

ResponseMap ResponseMap::policy_factored(MdpParams base, double eps_theta, double eps_mu, AffineDirections dirs,
                                         LinearMdpSpec spec) {
    ResponseMap map = affine(std::move(base), eps_theta, eps_mu, std::move(dirs), std::move(spec));
    map.kind_ = ResponseKind::policy_factored;
    return map;
}

ResponseMap ResponseMap::stackelberg(std::shared_ptr<const StackelbergGame> game, LinearMdpSpec spec) {
    if (!game) throw ConfigError("stackelberg response needs a game");
    if (game->num_states != spec.num_states || game->leader_actions != spec.num_actions)
        throw ConfigError("game sizes do not match the spec");
    ResponseMap map;
    map.kind_ = ResponseKind::stackelberg;
    SensitivityBounds bounds = follower_sensitivity_bounds(*game);
    map.eps_theta_ = bounds.reward_per_delta;
    map.eps_mu_ = bounds.transition_per_delta;
    map.heuristic_ = !spec.features.isApprox(Mat::Identity(spec.num_pairs(), spec.num_pairs()));
    map.game_ = std::move(game);
    map.spec_ = std::move(spec);
    map.base_ = stackelberg_params(*map.game_, uniform_policy(map.spec_), map.spec_);
    return map;
}

MdpParams ResponseMap::apply_affine(const Vec& d) const {
    const int S = spec_.num_states, D = spec_.feature_dim();
    Vec raw_theta = base_.theta + eps_theta_ * (dirs_.theta_dir * d);
    Vec mu_shift = eps_mu_ * (dirs_.mu_dir * d);
    Mat raw_mu = base_.mu + Eigen::Map<const Mat>(mu_shift.data(), S, D);
    return project_params(raw_theta, raw_mu, spec_);
}

MdpParams ResponseMap::apply(const Vec& d) const {
    if (d.size() != spec_.num_pairs()) throw std::invalid_argument("occupancy has wrong dimension");
    switch (kind_) {
        case ResponseKind::constant:
            return base_;
        case ResponseKind::affine:
            return apply_affine(d);
        case ResponseKind::policy_factored: {
            Policy pi = policy_from_occupancy(d, spec_);
            return apply_affine(occupancy_from_policy(pi, base_, spec_));
        }
        case ResponseKind::stackelberg:
            return stackelberg_params(*game_, policy_from_occupancy(d, spec_), spec_);
    }
    throw std::logic_error("unhandled response kind");
}

SensitivityEstimate measure_sensitivity(const ResponseMap& map, const std::vector<std::pair<Vec, Vec>>& probe_pairs) {
    if (probe_pairs.empty()) throw std::invalid_argument("measure_sensitivity needs at least one probe pair");
    SensitivityEstimate est;
    bool any = false;
    for (const auto& [d1, d2] : probe_pairs) {
        double dist = (d1 - d2).norm();
        if (dist == 0.0) continue;
        any = true;
        MdpParams p1 = map.apply(d1);
        MdpParams p2 = map.apply(d2);
        est.eps_theta_hat = std::max(est.eps_theta_hat, (p1.theta - p2.theta).norm() / dist);
        est.eps_mu_hat = std::max(est.eps_mu_hat, (p1.mu - p2.mu).norm() / dist);
    }
    if (!any) throw std::invalid_argument("measure_sensitivity needs a pair with d != d'");
    return est;
}

Vec project_simplex(const Vec& v) {
    const int n = static_cast<int>(v.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return v(i) > v(j); });
    double cumulative = 0.0, tau = 0.0;
    for (int k = 0; k < n; ++k) {
        cumulative += v(order[k]);
        double t = (cumulative - 1.0) / (k + 1);
        if (v(order[k]) - t > 0.0) tau = t;
    }
    return (v.array() - tau).cwiseMax(0.0).matrix();
}

Mat pseudo_inverse(const Mat& m) {
    if (m.size() == 0) return Mat(m.cols(), m.rows());
    Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& sv = svd.singularValues();
    double cutoff = 1e-10 * sv(0);
    Vec inv = Vec::Zero(sv.size());
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

MdpParams project_params(const Vec& raw_theta, const Mat& raw_mu, const LinearMdpSpec& spec) {
    const double radius = std::sqrt(static_cast<double>(spec.feature_dim()));
    MdpParams out{raw_theta, raw_mu};
    double n = raw_theta.norm();
    if (n > radius) out.theta *= radius / n;

    Mat P = raw_mu * spec.features.transpose();
    bool valid = true;
    for (int j = 0; j < P.cols() && valid; ++j) {
        valid = P.col(j).minCoeff() >= -1e-12 && std::abs(P.col(j).sum() - 1.0) <= 1e-12;
    }
    if (!valid) {
        for (int j = 0; j < P.cols(); ++j) P.col(j) = project_simplex(P.col(j));
        out.mu = P * pseudo_inverse(spec.features.transpose());
        double residual = (out.mu * spec.features.transpose() - P).norm();
        if (residual > 1e-6) {
            throw NumericalError(fmt::format("projection-infeasible: refit residual {:.3e}", residual));
        }
    }
    if (out.mu.norm() > radius + 1e-9) {
        throw NumericalError(fmt::format("projection-infeasible: ||mu||_F = {:.6g} exceeds sqrt(D)", out.mu.norm()));
    }
    return out;
}

double performative_value(const Vec& d, const ResponseMap& response, const LinearMdpSpec& spec) {
    Policy pi = policy_from_occupancy(d, spec);
    MdpParams params = response.apply(d);
    return value_of_policy(pi, params, spec);
}

}  // namespace plmdp
