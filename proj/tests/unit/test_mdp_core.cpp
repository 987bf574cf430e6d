#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "perf_lmdp/csv_io.hpp"
#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/instances.hpp"
#include "perf_lmdp/mdp_core.hpp"

using namespace plmdp;

namespace {

bool contains(const std::vector<std::string>& report, const std::string& needle) {
    for (const auto& r : report)
        if (r.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_CASE("validate_spec reports violated invariants") {
    LinearMdpSpec ok{2, 2, 0.9, Vec::Constant(2, 0.5), Mat::Identity(4, 4)};
    CHECK(validate_spec(ok).empty());

    LinearMdpSpec bad_rho = ok;
    bad_rho.start_dist << 0.7, 0.4;
    CHECK(contains(validate_spec(bad_rho), "start_dist sums to 1.1"));

    Mat phi(4, 3);
    phi << 0.5, 0.1, 0.5, 0.2, 0.3, 0.2, 0.1, 0.6, 0.1, 0.4, 0.0, 0.4;
    LinearMdpSpec rank_def{2, 2, 0.9, Vec::Constant(2, 0.5), phi};
    CHECK(contains(validate_spec(rank_def), "rank 2"));

    LinearMdpSpec long_rows = ok;
    long_rows.features *= 1.5;
    CHECK(contains(validate_spec(long_rows), "norm"));
    CHECK_THROWS_AS(make_spec(2, 2, 1.0, Vec::Constant(2, 0.5), Mat::Identity(4, 4)), ConfigError);
}

TEST_CASE("reconstruct_dynamics reads off reward and kernel") {
    LinearMdpSpec spec = tabular_spec(2, 1, 0.5, Vec::Constant(2, 0.5));
    MdpParams p{Vec::Zero(2), Mat(2, 2)};
    p.mu << 0.3, 0.6, 0.7, 0.4;
    Dynamics dyn = reconstruct_dynamics(p, spec);
    CHECK(dyn.reward.isZero());
    CHECK(dyn.transition(0, 0) == doctest::Approx(0.3));
    CHECK(dyn.transition(1, 0) == doctest::Approx(0.7));

    MdpParams broken = p;
    broken.mu(0, 0) = 0.5;
    CHECK_THROWS_AS(reconstruct_dynamics(broken, spec), NumericalError);
}

TEST_CASE("reconstruct_dynamics is linear in theta") {
    CounterRng rng(1, RngModule::probes);
    LinearMdpSpec spec = make_spec(2, 2, 0.9, Vec::Constant(2, 0.5), random_invertible_features(4, rng));
    Mat P = random_kernel(2, 4, rng);
    Vec t1 = Vec::Random(4), t2 = Vec::Random(4);
    MdpParams a = params_from_model(Vec::Zero(4), P, spec);
    MdpParams b = a, c = a;
    a.theta = t1;
    b.theta = t2;
    c.theta = 2.0 * t1 - 3.0 * t2;
    Vec lhs = reconstruct_dynamics(c, spec).reward;
    Vec rhs = 2.0 * reconstruct_dynamics(a, spec).reward - 3.0 * reconstruct_dynamics(b, spec).reward;
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("policy_from_occupancy normalizes and handles zero mass") {
    LinearMdpSpec spec = tabular_spec(1, 2, 0.5, Vec::Ones(1));
    Vec d(2);
    d << 3.0, 1.0;
    Policy pi = policy_from_occupancy(d, spec);
    CHECK(pi(0, 0) == doctest::Approx(0.75));
    CHECK(pi(0, 1) == doctest::Approx(0.25));

    LinearMdpSpec two = tabular_spec(2, 3, 0.5, Vec::Constant(2, 0.5));
    Vec z(6);
    z << 1, 2, 3, 0, 0, -1e-10;
    Policy p2 = policy_from_occupancy(z, two);
    for (int a = 0; a < 3; ++a) CHECK(p2(1, a) == doctest::Approx(1.0 / 3));
    CHECK(is_row_stochastic(policy_from_occupancy(Vec::Ones(6), two)));
    CHECK(policy_from_occupancy(Vec::Ones(6), two).isApprox(uniform_policy(two)));
}

TEST_CASE("occupancy_from_policy: geometric series and mass") {
    LinearMdpSpec spec = tabular_spec(1, 1, 0.9, Vec::Ones(1));
    MdpParams p = params_from_model(Vec::Ones(1), Mat::Ones(1, 1), spec);
    Vec d = occupancy_from_policy(uniform_policy(spec), p, spec);
    CHECK(d(0) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(value_of_policy(uniform_policy(spec), p, spec) == doctest::Approx(10.0).epsilon(1e-12));

    for (uint64_t seed = 0; seed < 20; ++seed) {
        CounterRng rng(seed, RngModule::probes);
        int S = 1 + rng.uniform_int(5), A = 1 + rng.uniform_int(3);
        double gamma = rng.uniform(0.0, 0.95);
        LinearMdpSpec sp = tabular_spec(S, A, gamma, random_simplex(S, rng));
        MdpParams prm = params_from_model(Vec::Zero(S * A), random_kernel(S, S * A, rng), sp);
        Vec occ = occupancy_from_policy(random_policy(S, A, rng), prm, sp);
        CHECK(std::abs(occ.sum() - 1.0 / (1.0 - gamma)) < 1e-8);
        CHECK(bellman_flow_residual(occ, prm, sp).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("occupancy_from_policy matches the SA x SA resolvent on a two-state chain") {
    LinearMdpSpec spec = tabular_spec(2, 2, 0.5, Vec::Constant(2, 0.5));
    Mat P(2, 4);
    P << 0.9, 0.2, 0.5, 0.0,
         0.1, 0.8, 0.5, 1.0;
    MdpParams p = params_from_model(Vec::Zero(4), P, spec);
    Policy pi(2, 2);
    pi << 1, 0, 0, 1;
    Mat Pi = policy_matrix(pi, spec);
    Mat resolvent = Mat::Identity(4, 4) - 0.5 * Pi * P;
    Vec expected = resolvent.householderQr().solve(Pi * spec.start_dist);
    Vec d = occupancy_from_policy(pi, p, spec);
    CHECK((d - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bellman_flow_residual: zero and doubled occupancy") {
    Instance inst = reference_instance();
    CHECK(bellman_flow_residual(Vec::Zero(4), inst.base, inst.spec).isApprox(-inst.spec.start_dist));
    Vec d = occupancy_from_policy(uniform_policy(inst.spec), inst.base, inst.spec);
    Vec r = bellman_flow_residual(2.0 * d, inst.base, inst.spec);
    CHECK(r.lpNorm<1>() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("policy occupancy round trip on full-support policies") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        CounterRng rng(seed, RngModule::probes);
        Instance inst = random_certified_instance(seed, {4, 3, false});
        Policy pi = random_policy(inst.spec.num_states, inst.spec.num_actions, rng);
        Vec d = occupancy_from_policy(pi, inst.base, inst.spec);
        CHECK((policy_from_occupancy(d, inst.spec) - pi).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("value_of_policy agrees with an independent state-value recursion") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        CounterRng rng(seed, RngModule::probes);
        Instance inst = random_certified_instance(seed);
        const auto& spec = inst.spec;
        Policy pi = random_policy(spec.num_states, spec.num_actions, rng);
        Dynamics dyn = reconstruct_dynamics(inst.base, spec);
        // V <- r_pi + gamma P_pi V by fixed-point iteration
        Vec V = Vec::Zero(spec.num_states);
        for (int it = 0; it < 5000; ++it) {
            Vec next(spec.num_states);
            for (int s = 0; s < spec.num_states; ++s) {
                double acc = 0.0;
                for (int a = 0; a < spec.num_actions; ++a) {
                    int j = spec.index(s, a);
                    acc += pi(s, a) * (dyn.reward(j) + spec.discount * dyn.transition.col(j).dot(V));
                }
                next(s) = acc;
            }
            V = next;
        }
        CHECK(std::abs(spec.start_dist.dot(V) - value_of_policy(pi, inst.base, spec)) < 1e-8);
    }
}

TEST_CASE("value_of_policy matches Monte-Carlo rollouts") {
    CounterRng gen(11, RngModule::probes);
    LinearMdpSpec spec = tabular_spec(3, 2, 0.8, random_simplex(3, gen));
    Vec reward(6);
    for (int i = 0; i < 6; ++i) reward(i) = gen.uniform(0.0, 1.0);
    Mat P = random_kernel(3, 6, gen);
    MdpParams p = params_from_model(reward, P, spec);
    Policy pi = random_policy(3, 2, gen);
    double exact = value_of_policy(pi, p, spec);

    const int horizon = static_cast<int>(std::ceil(std::log(1e-8) / std::log(spec.discount)));
    const long budget = 1000000;
    const long episodes = budget / horizon;
    CounterRng rng(12, RngModule::probes);
    auto rho_c = cumulative_weights(spec.start_dist.data(), 3);
    std::vector<std::vector<double>> pi_c(3), p_c(6);
    for (int s = 0; s < 3; ++s) {
        Vec row = pi.row(s).transpose();
        pi_c[s] = cumulative_weights(row.data(), 2);
    }
    for (int j = 0; j < 6; ++j) {
        Vec col = P.col(j);
        p_c[j] = cumulative_weights(col.data(), 3);
    }
    double sum = 0.0, sumsq = 0.0;
    for (long e = 0; e < episodes; ++e) {
        int s = rng.discrete(rho_c);
        double ret = 0.0, disc = 1.0;
        for (int t = 0; t < horizon; ++t) {
            int a = rng.discrete(pi_c[s]);
            int j = spec.index(s, a);
            ret += disc * reward(j);
            disc *= spec.discount;
            s = rng.discrete(p_c[j]);
        }
        sum += ret;
        sumsq += ret * ret;
    }
    double mean = sum / episodes;
    double se = std::sqrt((sumsq / episodes - mean * mean) / episodes);
    CHECK(std::abs(mean - exact) <= 3.0 * se);
}

TEST_CASE("matrix CSV round trip is exact") {
    auto path = std::filesystem::temp_directory_path() / "plmdp_csv_roundtrip.csv";
    Mat m(2, 3);
    m << 0.1, 1.0 / 3.0, -2.5e-17, 1e300, std::nextafter(1.0, 2.0), -0.0;
    write_matrix_csv(path, m, "probe");
    NamedMatrix back = read_matrix_csv(path);
    CHECK(back.name == "probe");
    CHECK(back.values == m);
    std::filesystem::remove(path);
}
