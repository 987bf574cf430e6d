#include <doctest.h>

#include <cmath>

#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/instances.hpp"
#include "perf_lmdp/primal_dual.hpp"
#include "perf_lmdp/rng.hpp"

using namespace plmdp;

namespace {

struct Enumerated {
    Instance inst;
    Vec d;
    Dataset data;
    CovarianceEstimate sigma;
};

Enumerated enumerated(Instance inst, uint64_t seed) {
    CounterRng rng(seed, RngModule::probes);
    Vec d = occupancy_from_policy(random_policy(inst.spec.num_states, inst.spec.num_actions, rng), inst.base, inst.spec);
    Dataset data = enumerate_dataset(d, inst.base, inst.spec);
    CovarianceEstimate sigma = expected_covariance(d, inst.spec);
    return {std::move(inst), d, std::move(data), sigma};
}

Vec random_vec(int n, CounterRng& rng) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("softmax policy update") {
    Mat scores = Mat::Zero(2, 3);
    CHECK((policy_update(scores, 0.7) - Mat::Constant(2, 3, 1.0 / 3.0)).norm() < 1e-15);
    Mat one(1, 2);
    one << 1.0, 0.0;
    Policy p = policy_update(one, 1.0);
    CHECK(p(0, 0) == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(p(0, 1) == doctest::Approx(0.26894).epsilon(1e-5));
    Mat shifted = one.array() + 40.0;
    CHECK((policy_update(shifted, 1.0) - p).norm() < 1e-15);
    Mat huge(1, 2);
    huge << 1e6, 0.0;
    CHECK(policy_update(huge, 1e4)(0, 0) == 1.0);
}

TEST_CASE("default radii and step sizes") {
    Instance inst = single_state_instance();
    PdConfig c;
    c.T_inner = 100;
    c.K = 50;
    c.b_cov = 4.0;
    ResolvedPdConfig r = resolve(c, inst.spec);
    CHECK(r.omega_radius == doctest::Approx(8.0));
    CHECK(r.nu_radius == doctest::Approx(4.0));
    CHECK(r.eta_omega == doctest::Approx(4.0 / std::sqrt(50.0 * 8.0)));
    CHECK(r.eta_pi == doctest::Approx(std::sqrt(std::log(2.0) / 100.0) * 0.25));
    c.K = 0;
    CHECK_THROWS_AS(resolve(c, inst.spec), ConfigError);
}

TEST_CASE("closed-form nu step") {
    Enumerated e = enumerated(reference_instance(), 3);
    const LinearMdpSpec& spec = e.inst.spec;
    Policy pi = Policy::Constant(2, 2, 0.5);
    const double inf = std::numeric_limits<double>::infinity();
    EmpiricalMoments mom = empirical_moments(e.data, spec);

    Vec plain = nu_closed_form(e.data, e.sigma, pi, Vec::Zero(4), 0.5, spec, inf);
    CHECK((plain - e.sigma.sigma.ldlt().solve(mom.feature_reward) / 0.5).norm() < 1e-10);

    CounterRng rng(5, RngModule::probes);
    Vec omega = random_vec(4, rng);
    Vec nu = nu_closed_form(e.data, e.sigma, pi, omega, 0.5, spec, inf);
    // Gradient of the empirical Lagrangian in nu vanishes at the returned point.
    Vec g = policy_state_values(pi, omega, spec);
    Vec grad = e.sigma.sigma.ldlt().solve(mom.feature_reward + spec.discount * mom.feature_next * g -
                                          mom.feature_cov * omega) - 0.5 * nu;
    CHECK(grad.norm() <= 1e-10);
    Vec halved = nu_closed_form(e.data, e.sigma, pi, omega, 1.0, spec, inf);
    CHECK((halved - 0.5 * nu).norm() < 1e-12);
    Vec clipped = nu_closed_form(e.data, e.sigma, pi, omega, 0.5, spec, 0.1);
    CHECK(clipped.norm() == doctest::Approx(0.1));
}

TEST_CASE("stochastic omega gradient is unbiased under enumeration") {
    Enumerated e = enumerated(reference_instance(), 7);
    const LinearMdpSpec& spec = e.inst.spec;
    CounterRng rng(9, RngModule::probes);
    for (int k = 0; k < 10; ++k) {
        Policy pi = random_policy(2, 2, rng);
        Vec nu = random_vec(4, rng);
        Vec mean = Vec::Zero(4);
        for (size_t j = 0; j < e.data.tuples.size(); ++j) {
            mean += e.data.weights[j] * omega_gradient_sample(e.data.tuples[j], pi, nu, e.sigma, spec);
        }
        EmpiricalMoments mom = empirical_moments(e.data, spec);
        Vec exact = spec.features.transpose() * occupancy_target(pi, nu, e.inst.base, spec) -
                    mom.feature_cov * e.sigma.sigma.ldlt().solve(nu);
        CHECK((mean - exact).norm() <= 1e-10);
    }
}

TEST_CASE("zero nu gradient keeps only the occupancy term") {
    Instance inst = reference_instance();
    Policy pi = Policy::Constant(2, 2, 0.5);
    Transition t{1, 0, 1, 0.2, 1};
    CovarianceEstimate sigma{Mat::Identity(4, 4), CovarianceSource::exact, 0.0};
    Vec g = omega_gradient_sample(t, pi, Vec::Zero(4), sigma, inst.spec);
    Vec expected(4);
    expected << 0.0, 0.0, 0.5, 0.5;
    CHECK((g - expected).norm() < 1e-15);
}

TEST_CASE("occupancy estimator and state-value identities") {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        Enumerated e = enumerated(random_certified_instance(seed), seed);
        const LinearMdpSpec& spec = e.inst.spec;
        CounterRng rng(seed, RngModule::probes, 1);
        Policy pi = random_policy(spec.num_states, spec.num_actions, rng);
        Vec nu = random_vec(spec.feature_dim(), rng);
        Vec sigma_inv_nu = e.sigma.sigma.ldlt().solve(nu);
        Vec mean = Vec::Zero(spec.num_pairs());
        for (size_t j = 0; j < e.data.tuples.size(); ++j) {
            mean += e.data.weights[j] * occupancy_estimate(e.data.tuples[j], pi, sigma_inv_nu, spec);
        }
        CHECK((mean - occupancy_target(pi, nu, e.inst.base, spec)).cwiseAbs().maxCoeff() <= 1e-8);

        Vec values = state_values(pi, e.inst.base, spec);
        Vec omega_star = e.inst.base.theta + spec.discount * e.inst.base.mu.transpose() * values;
        CHECK((policy_state_values(pi, omega_star, spec) - values).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("primal-dual run respects balls and is reproducible") {
    Enumerated e = enumerated(single_state_instance(), 2);
    PdConfig c;
    c.T_inner = 40;
    c.K = 30;
    c.lambda = 1.0;
    c.b_cov = 4.0;
    PdResult a = run_offline_primal_dual(e.data, e.sigma, e.inst.spec, c, 5);
    PdResult b = run_offline_primal_dual(e.data, e.sigma, e.inst.spec, c, 5);
    REQUIRE(a.policies.size() == 40);
    CHECK(a.policies.front() == Policy::Constant(1, 2, 0.5));
    for (int l = 0; l < 40; ++l) {
        CHECK(is_row_stochastic(a.policies[l]));
        CHECK(a.omegas[l].norm() <= a.config.omega_radius + 1e-9);
        CHECK(a.nus[l].norm() <= a.config.nu_radius + 1e-9);
        CHECK(a.omegas[l] == b.omegas[l]);
    }
    CHECK(a.selected_index == b.selected_index);
    bool differs = false;
    for (uint64_t s = 6; s < 12; ++s) differs |= run_offline_primal_dual(e.data, e.sigma, e.inst.spec, c, s).selected_index != a.selected_index;
    CHECK(differs);

    Dataset empty;
    CHECK_THROWS_AS(run_offline_primal_dual(empty, e.sigma, e.inst.spec, c, 5), ConfigError);
    CovarianceEstimate singular{Mat::Zero(2, 2), CovarianceSource::exact, 0.0};
    CHECK_THROWS_AS(run_offline_primal_dual(e.data, singular, e.inst.spec, c, 5), NumericalError);
}

TEST_CASE("large regularization drives nu to zero") {
    Enumerated e = enumerated(single_state_instance(), 4);
    PdConfig c;
    c.T_inner = 20;
    c.K = 20;
    c.lambda = 1e3;
    PdResult r = run_offline_primal_dual(e.data, e.sigma, e.inst.spec, c, 1);
    CHECK(r.nus.back().norm() < 0.05);
    CHECK(r.objective_history.back() <= 0.0);
    CHECK(r.objective_history.back() > -1e-2);
}

TEST_CASE("small steps reach the regularized optimum") {
    Enumerated e = enumerated(single_state_instance(), 1);
    e.data = enumerate_dataset(occupancy_from_policy(uniform_policy(e.inst.spec), e.inst.base, e.inst.spec),
                               e.inst.base, e.inst.spec);
    e.sigma = expected_covariance(occupancy_from_policy(uniform_policy(e.inst.spec), e.inst.base, e.inst.spec),
                                  e.inst.spec);
    PdConfig c;
    c.T_inner = 2000;
    c.K = 10;
    c.lambda = 1.0;
    c.b_cov = 4.0;
    c.eta_omega = 0.01;
    c.eta_pi = 1.0;
    PdResult r = run_offline_primal_dual(e.data, e.sigma, e.inst.spec, c, 3);
    MixtureFeature mix = mixture_average_feature(r, e.inst.base, e.inst.spec, 1.0);
    CHECK(mix.objective == doctest::Approx(0.25).epsilon(1e-3));
    CHECK(mix.nu_tilde(0) == doctest::Approx(1.5).epsilon(1e-2));
}

TEST_CASE("mixture feature of identical policies") {
    Instance inst = reference_instance();
    PdResult r;
    CounterRng rng(2, RngModule::probes);
    Policy pi = random_policy(2, 2, rng);
    r.policies = {pi};
    Vec d = occupancy_from_policy(pi, inst.base, inst.spec);
    MixtureFeature one = mixture_average_feature(r, inst.base, inst.spec, 0.3);
    CHECK((one.nu_tilde - inst.spec.features.transpose() * d).norm() < 1e-12);
    r.policies = {pi, pi, pi};
    MixtureFeature three = mixture_average_feature(r, inst.base, inst.spec, 0.3);
    CHECK((three.nu_tilde - one.nu_tilde).norm() < 1e-12);
    CHECK(three.objective == doctest::Approx(one.nu_tilde.dot(inst.base.theta) - 0.15 * one.nu_tilde.squaredNorm()));
}

TEST_CASE("required sample sizes") {
    Instance inst = single_state_instance();
    PdSampleSizes sz = primal_dual_sample_sizes(inst.spec, 4.0, 0.05);
    CHECK(sz.K == doctest::Approx(144.0 * 4 * 4 * 8 / 0.0025));
    CHECK(sz.T == doctest::Approx(576.0 * 4 * std::log(2.0) * 4 / 0.0025));
}
