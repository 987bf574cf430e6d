#include "perf_lmdp/instances.hpp"

#include <cmath>

#include "perf_lmdp/exact_solver.hpp"

namespace plmdp {

LinearMdpSpec tabular_spec(int num_states, int num_actions, double discount, Vec start_dist) {
    int n = num_states * num_actions;
    return make_spec(num_states, num_actions, discount, std::move(start_dist), Mat::Identity(n, n));
}

MdpParams params_from_model(const Vec& reward, const Mat& kernel, const LinearMdpSpec& spec) {
    MdpParams p;
    p.theta = pseudo_inverse(spec.features) * reward;
    p.mu = kernel * pseudo_inverse(spec.features.transpose());
    return p;
}

Vec random_simplex(int n, CounterRng& rng) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = -std::log(1.0 - rng.uniform());
    return v / v.sum();
}

Mat random_kernel(int num_states, int num_pairs, CounterRng& rng, double floor_weight) {
    Mat P(num_states, num_pairs);
    for (int j = 0; j < num_pairs; ++j) {
        P.col(j) = floor_weight / num_states * Vec::Ones(num_states) + (1.0 - floor_weight) * random_simplex(num_states, rng);
    }
    return P;
}

AffineDirections random_directions(const LinearMdpSpec& spec, CounterRng& rng) {
    const int S = spec.num_states, D = spec.feature_dim(), SA = spec.num_pairs();
    AffineDirections dirs;
    dirs.theta_dir.resize(D, SA);
    for (int i = 0; i < D; ++i)
        for (int j = 0; j < SA; ++j) dirs.theta_dir(i, j) = rng.normal();
    dirs.mu_dir.resize(S * D, SA);
    for (int i = 0; i < S * D; ++i)
        for (int j = 0; j < SA; ++j) dirs.mu_dir(i, j) = rng.normal();
    // center each S-block (fixed feature coordinate) so columns of delta_mu sum to zero
    for (int j = 0; j < SA; ++j) {
        for (int k = 0; k < D; ++k) {
            auto block = dirs.mu_dir.col(j).segment(k * S, S);
            block.array() -= block.mean();
        }
    }
    auto normalize = [](Mat& m) {
        double top = Eigen::JacobiSVD<Mat>(m).singularValues()(0);
        if (top > 0.0) m /= top;
    };
    normalize(dirs.theta_dir);
    if (S > 1) normalize(dirs.mu_dir);
    else dirs.mu_dir.setZero();
    return dirs;
}

Mat random_invertible_features(int n, CounterRng& rng) {
    for (;;) {
        Mat Phi(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) Phi(i, j) = rng.normal();
            Phi.row(i) *= rng.uniform(0.5, 1.0) / Phi.row(i).norm();
        }
        Eigen::JacobiSVD<Mat> svd(Phi);
        if (svd.singularValues()(n - 1) > 0.2) return Phi;
    }
}

Policy random_policy(int num_states, int num_actions, CounterRng& rng) {
    Policy pi(num_states, num_actions);
    for (int s = 0; s < num_states; ++s) pi.row(s) = random_simplex(num_actions, rng).transpose();
    return pi;
}

Instance reference_instance() {
    LinearMdpSpec spec = tabular_spec(2, 2, 0.9, Vec::Constant(2, 0.5));
    Vec reward(4);
    reward << 0.5, 0.2, 0.1, 0.9;
    Mat P(2, 4);
    P << 0.8, 0.3, 0.6, 0.1,
         0.2, 0.7, 0.4, 0.9;
    MdpParams base = params_from_model(reward, P, spec);
    CounterRng rng(7, RngModule::instances);
    AffineDirections dirs = random_directions(spec, rng);
    ResponseMap response = ResponseMap::affine(base, 0.01, 0.0, dirs, spec);
    return {spec, base, response};
}

Instance single_state_instance() {
    LinearMdpSpec spec = tabular_spec(1, 2, 0.5, Vec::Ones(1));
    Vec reward(2);
    reward << 1.0, 0.0;
    MdpParams base = params_from_model(reward, Mat::Ones(1, 2), spec);
    ResponseMap response = ResponseMap::constant(base, spec);
    return {spec, base, response};
}

Instance random_certified_instance(uint64_t seed, const RandomInstanceOptions& opt) {
    CounterRng rng(seed, RngModule::instances);
    for (;;) {
        int S = 1 + rng.uniform_int(opt.max_states);
        int A = 1 + rng.uniform_int(opt.max_actions);
        if (S * A < 2) continue;
        double gamma = opt.discount;
        if (gamma < 0.0) {
            const double choices[] = {0.5, 0.7, 0.9};
            gamma = choices[rng.uniform_int(3)];
        }
        int n = S * A;
        Mat Phi = opt.tabular ? Mat::Identity(n, n) : random_invertible_features(n, rng);
        LinearMdpSpec spec = make_spec(S, A, gamma, random_simplex(S, rng), Phi);
        Vec reward(n);
        for (int i = 0; i < n; ++i) reward(i) = rng.uniform(0.0, 1.0);
        Mat P = random_kernel(S, n, rng, 0.5);
        MdpParams base = params_from_model(reward, P, spec);
        double root_d = std::sqrt(static_cast<double>(n));
        if (base.theta.norm() > root_d || base.mu.norm() > root_d) continue;
        SpectralConstants c = spectral_constants(spec, base);
        double eps_theta = rng.uniform(0.2, 1.0) * opt.eps_theta_max;
        double eps_mu_max = 2.0 * std::sqrt(c.kappa) / (25.0 * gamma * c.alpha * c.alpha);
        double eps_mu = S > 1 ? rng.uniform(0.0, 1.0) * opt.eps_mu_fraction * eps_mu_max : 0.0;
        AffineDirections dirs = random_directions(spec, rng);
        ResponseMap response = opt.kind == ResponseKind::policy_factored
                                   ? ResponseMap::policy_factored(base, eps_theta, eps_mu, dirs, spec)
                                   : ResponseMap::affine(base, eps_theta, eps_mu, dirs, spec);
        return {spec, base, response};
    }
}

}  // namespace plmdp
