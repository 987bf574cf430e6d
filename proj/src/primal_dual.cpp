#include "perf_lmdp/primal_dual.hpp"

#include <cmath>
#include <limits>

#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/rng.hpp"

namespace plmdp {

namespace {

Vec project_ball(const Vec& v, double radius) {
    double n = v.norm();
    return n > radius ? Vec(v * (radius / n)) : v;
}

Eigen::LLT<Mat> factor(const CovarianceEstimate& sigma) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(sigma.sigma, Eigen::EigenvaluesOnly);
    double top = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    if (eig.eigenvalues().minCoeff() <= 1e-14 * top) throw NumericalError("singular-sigma: covariance is not invertible");
    return Eigen::LLT<Mat>(sigma.sigma);
}

}  // namespace

ResolvedPdConfig resolve(const PdConfig& c, const LinearMdpSpec& spec) {
    if (c.T_inner < 1 || c.K < 1) throw ConfigError("T_inner and K must be positive");
    if (!(c.lambda > 0.0) || !(c.b_cov > 0.0)) throw ConfigError("lambda and b_cov must be positive");
    const double D = spec.feature_dim();
    const double horizon = 1.0 / (1.0 - spec.discount);
    ResolvedPdConfig r;
    r.T_inner = c.T_inner;
    r.K = c.K;
    r.lambda = c.lambda;
    r.b_cov = c.b_cov;
    r.eta_omega = c.eta_omega.value_or(D * std::sqrt(c.b_cov) / std::sqrt(c.K * (c.b_cov + horizon * horizon)));
    r.eta_pi = c.eta_pi.value_or(std::sqrt(std::log(static_cast<double>(spec.num_actions)) / c.T_inner) / (horizon * D));
    r.omega_radius = c.omega_radius.value_or(2.0 * D * horizon);
    r.nu_radius = c.nu_radius.value_or(D * std::sqrt(c.b_cov));
    return r;
}

Vec occupancy_estimate(const Transition& t, const Policy& pi, const Vec& sigma_inv_nu, const LinearMdpSpec& spec) {
    Vec d = Vec::Zero(spec.num_pairs());
    double next_weight = spec.discount * spec.features.row(spec.index(t.s, t.a)).dot(sigma_inv_nu);
    for (int a = 0; a < spec.num_actions; ++a) {
        d(spec.index(t.s0, a)) += pi(t.s0, a);
        d(spec.index(t.s_next, a)) += next_weight * pi(t.s_next, a);
    }
    return d;
}

Vec occupancy_target(const Policy& pi, const Vec& nu, const MdpParams& params, const LinearMdpSpec& spec) {
    Vec state_mass = spec.start_dist + spec.discount * params.mu * nu;
    Vec d(spec.num_pairs());
    for (int s = 0; s < spec.num_states; ++s)
        for (int a = 0; a < spec.num_actions; ++a) d(spec.index(s, a)) = pi(s, a) * state_mass(s);
    return d;
}

Vec omega_gradient_sample(const Transition& t, const Policy& pi, const Vec& nu_prev, const CovarianceEstimate& sigma,
                          const LinearMdpSpec& spec) {
    Vec sigma_inv_nu = factor(sigma).solve(nu_prev);
    Vec phi = spec.features.row(spec.index(t.s, t.a)).transpose();
    return spec.features.transpose() * occupancy_estimate(t, pi, sigma_inv_nu, spec) - phi * phi.dot(sigma_inv_nu);
}

Vec policy_state_values(const Policy& pi, const Vec& omega, const LinearMdpSpec& spec) {
    Vec q = spec.features * omega;
    Vec g(spec.num_states);
    for (int s = 0; s < spec.num_states; ++s) g(s) = pi.row(s).dot(q.segment(s * spec.num_actions, spec.num_actions));
    return g;
}

Vec nu_closed_form(const Dataset& data, const CovarianceEstimate& sigma, const Policy& pi_prev, const Vec& omega_prev,
                   double lambda, const LinearMdpSpec& spec, double radius) {
    if (data.tuples.empty()) throw ConfigError("empty-dataset");
    Vec g = policy_state_values(pi_prev, omega_prev, spec);
    Vec inner = Vec::Zero(spec.feature_dim());
    const double total = data.total_weight();
    for (size_t j = 0; j < data.tuples.size(); ++j) {
        const Transition& t = data.tuples[j];
        Vec phi = spec.features.row(spec.index(t.s, t.a)).transpose();
        inner += (data.weight(j) / total) * phi * (t.r + spec.discount * g(t.s_next) - phi.dot(omega_prev));
    }
    Vec nu = factor(sigma).solve(inner) / lambda;
    return project_ball(nu, radius);
}

Policy policy_update(const Mat& scores, double eta_pi) {
    Policy pi(scores.rows(), scores.cols());
    for (Eigen::Index s = 0; s < scores.rows(); ++s) {
        Eigen::RowVectorXd z = eta_pi * scores.row(s);
        z.array() -= z.maxCoeff();
        z = z.array().exp().matrix();
        pi.row(s) = z / z.sum();
    }
    return pi;
}

PdResult run_offline_primal_dual(const Dataset& data, const CovarianceEstimate& sigma, const LinearMdpSpec& spec,
                                 const PdConfig& config, uint64_t seed) {
    if (data.tuples.empty()) throw ConfigError("empty-dataset");
    auto llt = factor(sigma);
    ResolvedPdConfig cfg = resolve(config, spec);
    const int S = spec.num_states;
    const int A = spec.num_actions;
    const int D = spec.feature_dim();

    std::vector<double> draw_cdf;
    if (!data.weights.empty()) draw_cdf = cumulative_weights(data.weights.data(), static_cast<int>(data.weights.size()));
    CounterRng rng(seed, RngModule::primal_dual, static_cast<uint32_t>(data.round));
    auto draw = [&]() -> const Transition& {
        int j = draw_cdf.empty() ? rng.uniform_int(static_cast<int>(data.tuples.size())) : rng.discrete(draw_cdf);
        return data.tuples[j];
    };

    Vec mean_reward_feature = Vec::Zero(D);
    const double total = data.total_weight();
    for (size_t j = 0; j < data.tuples.size(); ++j) {
        const Transition& t = data.tuples[j];
        mean_reward_feature += (data.weight(j) / total) * t.r * spec.features.row(spec.index(t.s, t.a)).transpose();
    }
    const Vec theta_hat = llt.solve(mean_reward_feature);

    PdResult res;
    res.config = cfg;
    Policy pi = Policy::Constant(S, A, 1.0 / A);
    Vec omega = Vec::Zero(D);
    Vec nu = Vec::Zero(D);
    Mat scores = Mat::Zero(S, A);
    for (int l = 1; l <= cfg.T_inner; ++l) {
        res.policies.push_back(pi);
        Vec sigma_inv_nu = llt.solve(nu);
        Vec iterate = omega;
        Vec running = Vec::Zero(D);
        for (int k = 0; k < cfg.K; ++k) {
            const Transition& t = draw();
            Vec phi = spec.features.row(spec.index(t.s, t.a)).transpose();
            Vec grad = spec.features.transpose() * occupancy_estimate(t, pi, sigma_inv_nu, spec) -
                       phi * phi.dot(sigma_inv_nu);
            res.max_gradient_norm = std::max(res.max_gradient_norm, grad.norm());
            iterate = project_ball(iterate - cfg.eta_omega * grad, cfg.omega_radius);
            running += iterate;
        }
        omega = running / cfg.K;
        nu = nu_closed_form(data, sigma, pi, omega, cfg.lambda, spec, cfg.nu_radius);
        res.omegas.push_back(omega);
        res.nus.push_back(nu);
        res.objective_history.push_back(nu.dot(theta_hat) - 0.5 * cfg.lambda * nu.squaredNorm());

        Vec q = spec.features * omega;
        for (int s = 0; s < S; ++s) scores.row(s) += q.segment(s * A, A).transpose();
        pi = policy_update(scores, cfg.eta_pi);
    }
    CounterRng select(seed, RngModule::selection, static_cast<uint32_t>(data.round));
    res.selected_index = select.uniform_int(cfg.T_inner);
    res.selected_policy = res.policies[res.selected_index];
    return res;
}

MixtureFeature mixture_average_feature(const PdResult& result, const MdpParams& params, const LinearMdpSpec& spec,
                                       double lambda) {
    if (result.policies.empty()) throw std::invalid_argument("primal-dual result has no policies");
    MixtureFeature mix;
    mix.occupancy = Vec::Zero(spec.num_pairs());
    for (const Policy& pi : result.policies) mix.occupancy += occupancy_from_policy(pi, params, spec);
    mix.occupancy /= static_cast<double>(result.policies.size());
    mix.nu_tilde = spec.features.transpose() * mix.occupancy;
    mix.objective = mix.nu_tilde.dot(params.theta) - 0.5 * lambda * mix.nu_tilde.squaredNorm();
    return mix;
}

PdSampleSizes primal_dual_sample_sizes(const LinearMdpSpec& spec, double b_cov, double eps) {
    const double D = spec.feature_dim();
    const double horizon = 1.0 / (1.0 - spec.discount);
    PdSampleSizes sizes;
    sizes.K = 144.0 * D * D * b_cov * (b_cov + horizon * horizon) / (eps * eps);
    sizes.T = 576.0 * D * D * std::log(static_cast<double>(spec.num_actions)) * horizon * horizon / (eps * eps);
    return sizes;
}

}  // namespace plmdp
