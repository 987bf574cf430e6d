#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "perf_lmdp/exact_solver.hpp"
#include "perf_lmdp/experiments.hpp"
#include "perf_lmdp/instances.hpp"
#include "perf_lmdp/primal_dual.hpp"
#include "perf_lmdp/retraining.hpp"
#include "perf_lmdp/sampling.hpp"
#include "perf_lmdp/stackelberg.hpp"

using namespace plmdp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Vec uniform_occupancy(const Instance& inst) {
    return occupancy_from_policy(uniform_policy(inst.spec), inst.base, inst.spec);
}

Outcome solver_correctness() {
    Instance single = single_state_instance();
    RegularizedSolution closed = solve_regularized(single.base, single.spec, 1.0);
    double closed_err = std::max(std::abs(closed.d(0) - 1.5), std::abs(closed.d(1) - 0.5));
    double worst_gap = std::abs(closed.primal_objective - closed.dual_objective);
    double worst_oracle = 0.0;
    int tried = 0;
    for (uint64_t seed = 0; tried < 25; ++seed) {
        RandomInstanceOptions opt;
        opt.max_states = 2;
        opt.max_actions = 3;
        opt.tabular = seed % 2 == 0;
        Instance inst = random_certified_instance(seed + 5000, opt);
        if (inst.spec.num_pairs() > 6) continue;
        ++tried;
        CounterRng rng(seed, RngModule::probes);
        double lambda = rng.uniform(0.1, 2.0);
        RegularizedSolution sol = solve_regularized(inst.base, inst.spec, lambda);
        OracleResult oracle = oracle_solve_small(inst.base, inst.spec, lambda);
        worst_oracle = std::max(worst_oracle, (sol.d - oracle.d).cwiseAbs().maxCoeff());
        worst_gap = std::max(worst_gap, std::abs(sol.primal_objective - sol.dual_objective));
    }
    return {closed_err <= 1e-6 && worst_oracle <= 1e-5 && worst_gap <= 1e-6,
            fmt::format("closed-form err {:.2e}, oracle err {:.2e} over 25, duality gap {:.2e}", closed_err,
                        worst_oracle, worst_gap)};
}

Outcome certificate_formulas() {
    Instance inst = reference_instance();
    ConvergenceCertificate cert = certify(0.01, 0.0, spectral_constants(inst.spec, inst.base), inst.spec, 0.1);
    return {std::abs(cert.rate_r - 0.39528) <= 1e-5 && std::abs(cert.lambda_min - 0.03125) <= 1e-12,
            fmt::format("r = {:.6f}, lambda_min = {}", cert.rate_r, cert.lambda_min)};
}

Outcome last_iterate() {
    Instance inst = reference_instance();
    const double lambda = 0.1;
    SpectralConstants c = spectral_constants(inst.spec, inst.base);
    ConvergenceCertificate cert = certify(0.01, 0.0, c, inst.spec, lambda);
    Vec d0 = uniform_occupancy(inst);
    Vec ref = reference_stable_point(inst.response, inst.spec, lambda, cert, 1e-10, d0);
    const long budget = cert.iters_to_delta(1e-4);
    RetrainOptions opt;
    opt.reference = ref;
    opt.record_stability_gap = false;
    Trace t = run_repeated_optimization(inst.response, inst.spec, lambda, d0, static_cast<int>(budget), 0.0, opt);
    double worst_ratio = 0.0;
    for (size_t k = 2; k < t.records.size(); ++k) {
        double prev = *t.records[k - 1].dist_to_ref;
        if (prev <= 1e-9) break;
        worst_ratio = std::max(worst_ratio, *t.records[k].dist_to_ref / prev);
    }
    double final_dist = *t.records.back().dist_to_ref;

    ResponseMap constant = ResponseMap::constant(inst.base, inst.spec);
    Trace ct = run_repeated_optimization(constant, inst.spec, lambda, d0, 5, 1e-8);
    bool one_round = ct.records.size() >= 2 && ct.records[1].step_norm <= 1e-8;
    return {worst_ratio <= cert.rate_r + 0.05 && final_dist <= 1e-4 && one_round,
            fmt::format("max ratio {:.4f} (r + 0.05 = {:.4f}), dist at round {} = {:.2e}, constant control {}",
                        worst_ratio, cert.rate_r + 0.05, budget, final_dist,
                        one_round ? "settles in one round" : "does not settle")};
}

Outcome stability_gap_bound() {
    int pass = 0;
    double worst = 0.0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        RandomInstanceOptions opt;
        opt.tabular = seed % 2 == 0;
        Instance inst = random_certified_instance(seed + 7000, opt);
        SpectralConstants c = spectral_constants(inst.spec, inst.base);
        double eps_t = inst.response.eps_theta(), eps_m = inst.response.eps_mu();
        double lambda = certify(eps_t, eps_m, c, inst.spec, 1.0).lambda_min;
        if (lambda <= 0.0) lambda = 1e-6;
        Trace t = run_repeated_optimization(inst.response, inst.spec, lambda, uniform_occupancy(inst), 2000, 1e-10,
                                            RetrainOptions{false});
        double gap = stability_gap(t.records.back().d, inst.response, inst.spec, lambda).unregularized;
        double bound = theorem2_bound(eps_t, eps_m, c, inst.spec);
        pass += gap <= bound;
        if (bound > 0) worst = std::max(worst, gap / bound);
    }
    return {pass == 10, fmt::format("{}/10 instances within bound, worst gap/bound {:.3e}", pass, worst)};
}

Outcome performative_value_gap() {
    int pass = 0, tried = 0;
    double worst = 0.0;
    const double grid = 0.05;
    for (uint64_t seed = 0; tried < 4; ++seed) {
        RandomInstanceOptions opt;
        opt.max_states = 3;
        opt.max_actions = 3;
        opt.tabular = true;
        Instance inst = random_certified_instance(seed + 8000, opt);
        if (inst.spec.num_pairs() > 6) continue;
        ++tried;
        SpectralConstants c = spectral_constants(inst.spec, inst.base);
        ValueGapBound b = theorem3_bound(inst.response.eps_theta(), inst.response.eps_mu(), c, inst.spec);
        double lambda = b.suggested_lambda > 0 ? b.suggested_lambda : 0.1;
        Trace t = run_repeated_optimization(inst.response, inst.spec, lambda, uniform_occupancy(inst), 2000, 1e-10,
                                            RetrainOptions{false});
        double stable_value = performative_value(t.records.back().d, inst.response, inst.spec);
        BruteForceResult bf = brute_force_performative_optimum(inst.response, inst.spec, grid);
        // Policy rows move by at most grid * A in L1 between grid neighbours.
        double r_max = (inst.spec.features * inst.response.base_params().theta).cwiseAbs().maxCoeff() +
                       inst.response.eps_theta() * std::sqrt(inst.spec.feature_dim()) / (1 - inst.spec.discount);
        double slack = grid * inst.spec.num_actions * r_max / std::pow(1 - inst.spec.discount, 2);
        double gap = bf.value - stable_value;
        pass += gap <= b.bound + slack;
        worst = std::max(worst, gap / (b.bound + slack));
    }
    return {pass == tried, fmt::format("{}/{} tiny instances within bound + grid slack, worst ratio {:.3e}", pass,
                                       tried, worst)};
}

Outcome dual_geometry() {
    int pinv_ok = 0, dual_ok = 0;
    double worst_pinv = 0.0, worst_dual = 0.0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        RandomInstanceOptions opt;
        opt.tabular = seed % 2 == 0;
        Instance inst = random_certified_instance(seed + 9000, opt);
        CounterRng rng(seed, RngModule::probes, 6);
        Vec d = occupancy_from_policy(random_policy(inst.spec.num_states, inst.spec.num_actions, rng), inst.base,
                                      inst.spec);
        MdpParams shifted = inst.response.apply(d);
        SpectralConstants c = spectral_constants(inst.spec, shifted);
        pinv_ok += c.M_pinv_norm <= c.alpha * (1 + 1e-9);
        worst_pinv = std::max(worst_pinv, c.M_pinv_norm / c.alpha);

        double lambda = rng.uniform(0.05, 2.0);
        RegularizedSolution sol = solve_regularized(shifted, inst.spec, lambda);
        DualPair dual = minimum_norm_dual(sol.d, shifted, inst.spec, lambda);
        double bound = dual_norm_bound(lambda, c, inst.spec);
        dual_ok += dual.h.norm() <= bound;
        worst_dual = std::max(worst_dual, dual.h.norm() / bound);
    }
    return {pinv_ok == 50 && dual_ok == 50,
            fmt::format("pseudoinverse bound {}/50 (worst ratio {:.3f}), minimum-norm dual bound {}/50 (worst ratio {:.3f})",
                        pinv_ok, worst_pinv, dual_ok, worst_dual)};
}

Outcome empirical_lagrangian_checks() {
    Instance inst = reference_instance();
    const LinearMdpSpec& spec = inst.spec;
    CounterRng prng(21, RngModule::probes);
    Vec d = occupancy_from_policy(random_policy(2, 2, prng), inst.base, spec);
    Dataset all = enumerate_dataset(d, inst.base, spec);
    CovarianceEstimate sigma = expected_covariance(d, spec);
    Dataset sample = sample_dataset(d, inst.base, spec, 100000, 21);
    Mat sigma_inv = sigma.sigma.inverse();
    const double log_term = std::log(2.0 / 1e-6);

    auto draw = [&](int n, double scale) {
        Vec v(n);
        for (int i = 0; i < n; ++i) v(i) = scale * prng.uniform(-1.0, 1.0);
        return v;
    };
    double worst_exact = 0.0, worst_mc = 0.0;
    int mc_pass = 0;
    for (int k = 0; k < 20; ++k) {
        Vec dd = draw(spec.num_pairs(), 1.0).cwiseAbs(), nu = draw(2 * 2, 1.0), g = draw(2, 2.0), om = draw(4, 1.0);
        double lambda = prng.uniform(0.0, 2.0);
        double tru = true_lagrangian(dd, nu, g, om, inst.base, spec, lambda);
        double exact = empirical_lagrangian(all, sigma, spec, dd, nu, g, om, lambda);
        worst_exact = std::max(worst_exact, std::abs(exact - tru) / std::max(1.0, std::abs(tru)));

        // Range of the per-tuple summand over every (s0, s, a, s') combination.
        double lo = 1e300, hi = -1e300;
        Vec theta_feat = spec.features * inst.base.theta;
        for (int s0 = 0; s0 < spec.num_states; ++s0)
            for (int i = 0; i < spec.num_pairs(); ++i)
                for (int sn = 0; sn < spec.num_states; ++sn) {
                    Vec phi = spec.features.row(i).transpose();
                    double x = nu.dot(sigma_inv * phi) * (theta_feat(i) + spec.discount * g(sn) - phi.dot(om)) + g(s0);
                    lo = std::min(lo, x);
                    hi = std::max(hi, x);
                }
        double envelope = (hi - lo) * std::sqrt(log_term / (2.0 * sample.tuples.size()));
        double dev = std::abs(empirical_lagrangian(sample, sigma, spec, dd, nu, g, om, lambda) - tru);
        mc_pass += dev <= envelope;
        worst_mc = std::max(worst_mc, dev / envelope);
    }
    return {worst_exact <= 1e-12 && mc_pass == 20,
            fmt::format("enumeration err {:.2e}, Monte-Carlo {}/20 inside Hoeffding envelope (worst ratio {:.3f})",
                        worst_exact, mc_pass, worst_mc)};
}

Outcome primal_dual_prescribed_sizes() {
    Instance inst = single_state_instance();
    const LinearMdpSpec& spec = inst.spec;
    const double lambda = 1.0;
    Vec d = uniform_occupancy(inst);
    Dataset data = enumerate_dataset(d, inst.base, spec);
    CovarianceEstimate sigma = expected_covariance(d, spec);
    double b_cov = coverage_bound(uniform_policy(spec), inst.response, spec);
    PdSampleSizes sizes = primal_dual_sample_sizes(spec, b_cov, 0.05);
    double optimum = solve_regularized(inst.base, spec, lambda).primal_objective;

    auto median_gap = [&](PdConfig cfg) {
        std::vector<double> gaps;
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            PdResult r = run_offline_primal_dual(data, sigma, spec, cfg, seed);
            gaps.push_back(optimum - mixture_average_feature(r, inst.base, spec, lambda).objective);
        }
        return median(gaps);
    };
    PdConfig cfg;
    cfg.lambda = lambda;
    cfg.b_cov = b_cov;
    std::string head = fmt::format("prescribed sizes K = {:.3g}, T = {:.3g}", sizes.K, sizes.T);
    const char* full = std::getenv("PERF_LMDP_FULL_PD_SIZES");
    if (full && std::string(full) == "1") {
        cfg.K = static_cast<int>(std::ceil(sizes.K));
        cfg.T_inner = static_cast<int>(std::ceil(sizes.T));
        double gap = median_gap(cfg);
        return {gap <= 0.05, fmt::format("{}, median gap {:.4f}", head, gap)};
    }
    cfg.K = 200;
    cfg.T_inner = 200;
    double default_gap = median_gap(cfg);
    PdConfig tuned = cfg;
    tuned.K = 10;
    tuned.T_inner = 2000;
    tuned.eta_omega = 0.01;
    tuned.eta_pi = 1.0;
    double tuned_gap = median_gap(tuned);
    return {false, fmt::format("{} not run (set PERF_LMDP_FULL_PD_SIZES=1); reduced K = T = 200 median gap {:.4f}, "
                               "small fixed steps median gap {:.2e}",
                               head, default_gap, tuned_gap)};
}

Outcome finite_sample_end_to_end() {
    Instance inst = reference_instance();
    const double lambda = 0.1;
    SpectralConstants c = spectral_constants(inst.spec, inst.base);
    ConvergenceCertificate cert = certify(0.01, 0.0, c, inst.spec, lambda);
    Vec d0 = uniform_occupancy(inst);
    Vec ref = reference_stable_point(inst.response, inst.spec, lambda, cert, 1e-10, d0);
    auto median_dist = [&](long m) {
        std::vector<double> dists;
        for (uint64_t seed = 1; seed <= 5; ++seed) {
            FiniteSampleOptions opt;
            opt.m_schedule = {m};
            opt.reference = ref;
            opt.d0 = d0;
            Trace t = run_finite_sample_retraining(inst.response, inst.spec, lambda, 30, seed, opt);
            dists.push_back(*t.records.back().dist_to_ref);
        }
        return median(dists);
    };
    double small = median_dist(5000), large = median_dist(20000);
    return {large <= 0.05 && large <= small,
            fmt::format("median dist at round 30: m = 20000 -> {:.4f} (target 0.05), m = 5000 -> {:.4f}", large, small)};
}

Outcome stackelberg_checks() {
    int sensitivity_pass = 0, pair_total = 0;
    for (uint64_t g = 0; g < 3; ++g) {
        CounterRng grng(g + 1, RngModule::instances);
        StackelbergGame game = random_game(2 + static_cast<int>(g), 2, 2, 0.9, 0.1, grng);
        CounterRng rng(g + 1, RngModule::probes);
        for (int i = 0; i < 200; ++i) {
            Policy a = random_policy(game.num_states, game.leader_actions, rng);
            Policy b = random_policy(game.num_states, game.leader_actions, rng);
            SensitivityCheckReport rep = lemma1_sensitivity_check(game, a, b);
            sensitivity_pass += rep.reward_pass && rep.transition_pass;
            ++pair_total;
        }
    }
    int l1_pass = 0;
    CounterRng krng(31, RngModule::probes);
    for (int i = 0; i < 100; ++i) {
        Mat k1 = random_kernel(3, 6, krng), k2 = random_kernel(3, 6, krng);
        Policy pi = random_policy(3, 2, krng);
        l1_pass += occupancy_l1_perturbation_check(k1, k2, pi, Vec::Constant(3, 1.0 / 3), 0.9).pass;
    }

    ExperimentConfig cfg = parse_config_string("driver = \"stackelberg\"\n[game]\nseed = 1\nnum_states = 2\n"
                                               "beta = 0.1\n[run]\nlambda = 1.0\n",
                                               ".");
    Problem p = load_problem(cfg);
    Vec d0 = occupancy_from_policy(uniform_policy(p.spec), p.base, p.spec);
    Trace t = run_repeated_optimization(*p.response, p.spec, 1.0, d0, 40, 1e-5, RetrainOptions{false});
    double last_step = t.records.back().step_norm;
    bool retrain_ok = last_step <= 1e-5;
    return {sensitivity_pass == pair_total && l1_pass == 100 && retrain_ok,
            fmt::format("sensitivity bounds {}/{}, occupancy L1 {}/100, retraining step {:.2e} after {} rounds",
                        sensitivity_pass, pair_total, l1_pass, last_step, t.records.size())};
}

Outcome estimator_identities() {
    double worst_unbiased = 0.0, worst_values = 0.0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Instance inst = random_certified_instance(seed + 300, {3, 3, seed % 2 == 0});
        const LinearMdpSpec& spec = inst.spec;
        CounterRng rng(seed, RngModule::probes, 11);
        Vec d = occupancy_from_policy(random_policy(spec.num_states, spec.num_actions, rng), inst.base, spec);
        Dataset data = enumerate_dataset(d, inst.base, spec);
        CovarianceEstimate sigma = expected_covariance(d, spec);
        Policy pi = random_policy(spec.num_states, spec.num_actions, rng);
        Vec nu(spec.feature_dim());
        for (int i = 0; i < nu.size(); ++i) nu(i) = rng.uniform(-1.0, 1.0);
        Vec sigma_inv_nu = sigma.sigma.ldlt().solve(nu);
        Vec mean = Vec::Zero(spec.num_pairs());
        for (size_t j = 0; j < data.tuples.size(); ++j)
            mean += data.weight(j) * occupancy_estimate(data.tuples[j], pi, sigma_inv_nu, spec);
        mean /= data.total_weight();
        worst_unbiased =
            std::max(worst_unbiased, (mean - occupancy_target(pi, nu, inst.base, spec)).cwiseAbs().maxCoeff());

        Vec values = state_values(pi, inst.base, spec);
        Vec omega_star = inst.base.theta + spec.discount * inst.base.mu.transpose() * values;
        worst_values =
            std::max(worst_values, (policy_state_values(pi, omega_star, spec) - values).cwiseAbs().maxCoeff());
    }
    return {worst_unbiased <= 1e-8 && worst_values <= 1e-8,
            fmt::format("estimator bias {:.2e}, state-value identity err {:.2e} over 10 instances", worst_unbiased,
                        worst_values)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome reproducibility() {
    fs::path root = fs::temp_directory_path() / "plmdp_acceptance_repro";
    fs::remove_all(root);
    ExperimentConfig cfg = parse_config_string(
        "driver = \"retrain-finite\"\nseed = 2024\n[run]\nlambda = 0.1\nrounds = 10\n[finite]\nm_schedule = 5000\n", ".");
    int a = run_command(cfg, root / "a");
    int b = run_command(cfg, root / "b");
    std::string ta = slurp(root / "a" / "trace.jsonl"), tb = slurp(root / "b" / "trace.jsonl");
    fs::remove_all(root);
    bool ok = a == exit_ok && b == exit_ok && !ta.empty() && ta == tb;
    return {ok, fmt::format("two runs, {} trace bytes, {}", ta.size(), ta == tb ? "identical" : "different")};
}

}  // namespace

int main() {
    // Criteria with documented, analysed failures; any other failure is a regression.
    const std::set<int> known_failures{6, 8, 9};
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
        {1, solver_correctness},       {2, certificate_formulas},       {3, last_iterate},
        {4, stability_gap_bound},      {5, performative_value_gap},     {6, dual_geometry},
        {7, empirical_lagrangian_checks}, {8, primal_dual_prescribed_sizes}, {9, finite_sample_end_to_end},
        {10, stackelberg_checks},      {11, estimator_identities},      {12, reproducibility},
    };
    int unexpected = 0;
    for (const auto& [id, check] : criteria) {
        auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << fmt::format("criterion {:2d}: {}  {} [{:.1f}s]\n", id, o.pass ? "PASS" : "FAIL", o.detail, secs)
                  << std::flush;
        if (!o.pass && !known_failures.count(id)) ++unexpected;
    }
    return unexpected == 0 ? 0 : 1;
}
