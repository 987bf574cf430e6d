#include <doctest.h>

#include <cmath>

#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/instances.hpp"
#include "perf_lmdp/retraining.hpp"

using namespace plmdp;

TEST_CASE("certificate formulas on the reference instance") {
    Instance inst = reference_instance();
    SpectralConstants c = spectral_constants(inst.spec, inst.base);
    ConvergenceCertificate cert = certify(0.01, 0.0, c, inst.spec, 0.1);
    CHECK(cert.lambda_min == doctest::Approx(0.03125).epsilon(1e-12));
    CHECK(std::abs(cert.rate_r - 0.39528) < 1e-5);
    CHECK(cert.contracts);
    CHECK(cert.iters_to_delta(1e-4) == 14);

    ConvergenceCertificate weak = certify(0.01, 0.0, c, inst.spec, 0.02);
    CHECK_FALSE(weak.contracts);

    ConvergenceCertificate none = certify(0.0, 0.0, c, inst.spec, 0.5);
    CHECK(none.lambda_min == 0.0);
    CHECK(none.rate_r == 0.0);
    CHECK(none.iters_to_delta(1e-9) == 1);
    CHECK(auto_lambda(0.01, 0.0, c, inst.spec) == doctest::Approx(1.25 * 0.03125));
}

TEST_CASE("certificate refuses kappa = 0") {
    Mat phi(4, 3);
    phi << 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1;
    LinearMdpSpec spec = make_spec(2, 2, 0.9, Vec::Constant(2, 0.5), phi);
    MdpParams p{Vec::Zero(3), Mat(2, 3)};
    p.mu << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
    SpectralConstants c = spectral_constants(spec, p);
    CHECK(c.kappa == 0.0);
    CHECK_THROWS_AS(certify(0.01, 0.0, c, spec, 0.1), ConfigError);
    CHECK_THROWS_AS(theorem2_bound(0.01, 0.0, c, spec), ConfigError);
}

TEST_CASE("stability and value gap bound arithmetic") {
    Instance inst = reference_instance();
    SpectralConstants c = spectral_constants(inst.spec, inst.base);
    CHECK(theorem2_bound(0.01, 0.0, c, inst.spec) == doctest::Approx(1.5625));
    CHECK(theorem2_bound(0.02, 0.0, c, inst.spec) == doctest::Approx(3.125));
    CHECK(theorem2_bound(0.0, 0.0, c, inst.spec) == 0.0);
    ValueGapBound b = theorem3_bound(0.01, 0.0, c, inst.spec);
    CHECK(b.delta == doctest::Approx(0.01));
    CHECK(b.lambda0 == doctest::Approx(0.03125));
    CHECK(std::abs(b.bound - 7.1449) < 1e-3);
    ValueGapBound z = theorem3_bound(0.0, 0.0, c, inst.spec);
    CHECK(z.bound == 0.0);
}

TEST_CASE("constant response converges in one effective round") {
    Instance inst = reference_instance();
    ResponseMap constant = ResponseMap::constant(inst.base, inst.spec);
    Vec d0 = Vec::Constant(4, 2.5);
    Trace t = run_repeated_optimization(constant, inst.spec, 0.1, d0, 10, 1e-8);
    REQUIRE(t.records.size() >= 2);
    CHECK(t.records[1].step_norm <= 1e-8);
    CHECK(t.converged);
    CHECK(*t.records[0].stability_gap <= 1e-6);
}

TEST_CASE("monotone settling and fixed-point characterization") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        RandomInstanceOptions opt;
        opt.tabular = seed % 2 == 0;
        opt.eps_theta_max = 0.2;
        opt.eps_mu_fraction = 0.9;
        Instance inst = random_certified_instance(seed + 40, opt);
        SpectralConstants c = spectral_constants(inst.spec, inst.base);
        double lambda = auto_lambda(inst.response.eps_theta(), inst.response.eps_mu(), c, inst.spec);
        ConvergenceCertificate cert = certify(inst.response.eps_theta(), inst.response.eps_mu(), c, inst.spec, lambda);
        REQUIRE(cert.contracts);
        Vec d0 = occupancy_from_policy(uniform_policy(inst.spec), inst.base, inst.spec);
        double stop = 1e-9;
        Trace t = run_repeated_optimization(inst.response, inst.spec, lambda, d0, 300, stop);
        CHECK(t.converged);
        for (size_t k = 3; k < t.records.size(); ++k) {
            double lhs = t.records[k].step_norm;
            double rhs = cert.rate_r * (t.records[k - 1].step_norm + t.records[k - 2].step_norm);
            if (t.records[k - 1].step_norm < 1e-9) break;
            CHECK(lhs <= 1.1 * rhs);
        }
        Vec ds = t.records.back().d;
        RegularizedSolution again = solve_regularized(inst.response.apply(ds), inst.spec, lambda);
        CHECK((again.d - ds).norm() <= stop);
        CHECK(stability_gap(ds, inst.response, inst.spec, lambda).regularized <= 1e-6);
    }
}

TEST_CASE("unregularized gap agrees with value iteration") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Instance inst = random_certified_instance(seed + 900);
        CounterRng rng(seed, RngModule::probes);
        Vec d = occupancy_from_policy(random_policy(inst.spec.num_states, inst.spec.num_actions, rng),
                                      inst.base, inst.spec);
        ResponseMap constant = ResponseMap::constant(inst.base, inst.spec);
        StabilityGap gap = stability_gap(d, constant, inst.spec, 0.1);
        double best = inst.spec.start_dist.dot(optimal_values(inst.base, inst.spec));
        double mine = d.dot(inst.spec.features * inst.base.theta);
        CHECK(std::abs(gap.unregularized - (best - mine)) < 1e-6);
    }
}

TEST_CASE("brute force recovers the classical optimum for a constant response") {
    for (uint64_t seed = 0; seed < 3; ++seed) {
        RandomInstanceOptions opt;
        opt.max_states = 2;
        opt.max_actions = 3;
        Instance inst = random_certified_instance(seed + 60, opt);
        if (inst.spec.num_pairs() > 6) continue;
        ResponseMap constant = ResponseMap::constant(inst.base, inst.spec);
        BruteForceResult bf = brute_force_performative_optimum(constant, inst.spec, 0.1);
        double best = inst.spec.start_dist.dot(optimal_values(inst.base, inst.spec));
        CHECK(std::abs(bf.value - best) < 1e-8);
        CHECK(bf.diverged_points == 0);
    }
}

TEST_CASE("brute force: nested grids and small sensitivity continuity") {
    Instance inst = random_certified_instance(3, {2, 2, true});
    REQUIRE(inst.spec.num_pairs() <= 6);
    BruteForceResult coarse = brute_force_performative_optimum(inst.response, inst.spec, 0.1);
    BruteForceResult fine = brute_force_performative_optimum(inst.response, inst.spec, 0.05);
    CHECK(fine.value >= coarse.value - 1e-12);

    ResponseMap zero = ResponseMap::affine(inst.base, 0.0, 0.0, inst.response.directions(), inst.spec);
    ResponseMap tiny = ResponseMap::affine(inst.base, 1e-3, 0.0, inst.response.directions(), inst.spec);
    double v0 = brute_force_performative_optimum(zero, inst.spec, 0.1).value;
    double v1 = brute_force_performative_optimum(tiny, inst.spec, 0.1).value;
    CHECK(std::abs(v1 - v0) < 1e-3 * inst.spec.num_pairs() / std::pow(1 - inst.spec.discount, 2));

    BruteForceResult serial = brute_force_performative_optimum(inst.response, inst.spec, 0.1, 1);
    BruteForceResult parallel = brute_force_performative_optimum(inst.response, inst.spec, 0.1, 3);
    CHECK(serial.value == parallel.value);
    CHECK(serial.policy == parallel.policy);
}
