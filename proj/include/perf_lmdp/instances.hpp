#pragma once

#include <cstdint>

#include "perf_lmdp/response_maps.hpp"
#include "perf_lmdp/rng.hpp"

namespace plmdp {

LinearMdpSpec tabular_spec(int num_states, int num_actions, double discount, Vec start_dist);

/// theta = pinv(Phi) r, mu = P pinv(Phi^T). Exact when Phi is invertible.
MdpParams params_from_model(const Vec& reward, const Mat& kernel, const LinearMdpSpec& spec);

/// S x SA column-stochastic kernel, columns mix `floor_weight` of uniform with a flat Dirichlet draw.
Mat random_kernel(int num_states, int num_pairs, CounterRng& rng, double floor_weight = 0.0);

Vec random_simplex(int n, CounterRng& rng);

/// Spectral-norm-one directions; mu directions keep every transition column sum fixed.
AffineDirections random_directions(const LinearMdpSpec& spec, CounterRng& rng);

/// Square invertible features with rows of norm in [0.5, 1].
Mat random_invertible_features(int n, CounterRng& rng);

/// Random policy with full support (rows drawn from a flat Dirichlet).
Policy random_policy(int num_states, int num_actions, CounterRng& rng);

struct Instance {
    LinearMdpSpec spec;
    MdpParams base;
    ResponseMap response;
};

/// S=2, A=2, gamma=0.9, tabular features, affine response with eps_theta=0.01, eps_mu=0.
Instance reference_instance();

/// S=1, A=2, gamma=0.5 tabular instance with theta = (1, 0) and a constant response.
Instance single_state_instance();

struct RandomInstanceOptions {
    int max_states = 3;
    int max_actions = 3;
    bool tabular = true;
    double discount = -1.0;  // negative: drawn from {0.5, 0.7, 0.9}
    double eps_theta_max = 0.05;
    double eps_mu_fraction = 0.5;  // eps_mu drawn up to this fraction of the certifiable maximum
    ResponseKind kind = ResponseKind::affine;
};

/// Affine-response instance with kappa > 0 and eps_mu inside the certified region.
Instance random_certified_instance(uint64_t seed, const RandomInstanceOptions& options = {});

}  // namespace plmdp
