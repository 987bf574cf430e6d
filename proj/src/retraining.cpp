#include "perf_lmdp/retraining.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <fmt/format.h>
#include <thread>

#include "perf_lmdp/errors.hpp"

namespace plmdp {

namespace {

double sensitivity_mix(double eps_theta, double eps_mu, const SpectralConstants& c, const LinearMdpSpec& spec) {
    return eps_theta + c.alpha * spec.discount * std::sqrt(static_cast<double>(spec.feature_dim())) * eps_mu;
}

void require_kappa(const SpectralConstants& c) {
    if (!(c.kappa > 0.0)) {
        throw ConfigError("kappa = 0: lambda_min(Phi Phi^T) vanishes, so no convergence certificate exists "
                          "(requires D >= S*A with invertible features)");
    }
}

}  // namespace

long ConvergenceCertificate::iters_to_delta(double delta) const {
    if (!contracts) throw std::logic_error("certificate does not contract");
    if (rate_r <= 0.0) return 1;
    double n = std::log(2.0 / (delta * (1.0 - discount))) / std::log(1.0 / rate_r);
    return std::max(1L, static_cast<long>(std::ceil(n)));
}

ConvergenceCertificate certify(double eps_theta, double eps_mu, const SpectralConstants& c, const LinearMdpSpec& spec,
                               double lambda) {
    require_kappa(c);
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    const double gamma = spec.discount;
    const double root_kappa = std::sqrt(c.kappa);
    double mix = sensitivity_mix(eps_theta, eps_mu, c, spec);
    ConvergenceCertificate cert;
    cert.lambda = lambda;
    cert.discount = gamma;
    cert.lambda_min = 25.0 * mix / (8.0 * root_kappa);
    cert.eps_mu_max = gamma > 0.0 ? 2.0 * root_kappa / (25.0 * gamma * c.alpha * c.alpha)
                                  : std::numeric_limits<double>::infinity();
    cert.beta_recurrence = mix / (lambda * root_kappa) + 4.0 * gamma * eps_mu * c.alpha * c.alpha / root_kappa;
    cert.rate_r = 1.25 * std::sqrt(cert.beta_recurrence);
    cert.contracts = lambda > cert.lambda_min && eps_mu < cert.eps_mu_max && cert.rate_r < 1.0;
    return cert;
}

double auto_lambda(double eps_theta, double eps_mu, const SpectralConstants& c, const LinearMdpSpec& spec) {
    require_kappa(c);
    return 1.25 * 25.0 * sensitivity_mix(eps_theta, eps_mu, c, spec) / (8.0 * std::sqrt(c.kappa));
}

Trace run_repeated_optimization(const ResponseMap& response, const LinearMdpSpec& spec, double lambda, const Vec& d0,
                                int max_rounds, double stop_delta, const RetrainOptions& options) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (d0.size() != spec.num_pairs() || d0.minCoeff() < 0.0) throw std::invalid_argument("d0 must be a nonnegative SA vector");
    Trace trace;
    trace.response_kind = to_string(response.kind());

    Vec prev = d0;
    auto solve_round = [&](const Vec& deployed, int round) {
        MdpParams params = response.apply(deployed);
        RegularizedSolution sol = solve_regularized(params, spec, lambda, options.solver, &deployed);
        if (!sol.converged) {
            throw NumericalError(fmt::format("round {}: solver did not converge (kkt {:.3e}, gap {:.3e})", round,
                                             sol.kkt_residuals.max(), std::abs(sol.primal_objective - sol.dual_objective)));
        }
        return std::make_pair(params, sol);
    };

    auto start = std::chrono::steady_clock::now();
    auto [params, sol] = solve_round(prev, 1);
    for (int t = 1; t <= max_rounds; ++t) {
        TraceRecord rec;
        rec.round = t;
        rec.d = sol.d;
        rec.policy = policy_from_occupancy(sol.d, spec);
        rec.step_norm = (sol.d - prev).norm();
        if (options.reference) rec.dist_to_ref = (sol.d - *options.reference).norm();
        rec.reg_objective = sol.primal_objective;

        bool last = rec.step_norm <= stop_delta || t == max_rounds;
        // The next round's problem is the environment induced by d_t, which also gives V^{d_t}_{d_t}.
        std::optional<std::pair<MdpParams, RegularizedSolution>> next;
        MdpParams induced;
        if (!last || options.record_stability_gap) {
            next = solve_round(sol.d, t + 1);
            induced = next->first;
        } else {
            induced = response.apply(sol.d);
        }
        rec.perf_value = sol.d.dot(spec.features * induced.theta);
        if (options.record_stability_gap) {
            rec.stability_gap = next->second.primal_objective - regularized_objective(sol.d, induced, spec, lambda);
        }
        auto now = std::chrono::steady_clock::now();
        rec.wall_ms = std::chrono::duration<double, std::milli>(now - start).count();
        start = now;
        trace.records.push_back(rec);
        if (options.on_round) options.on_round(trace.records.back());
        if (rec.step_norm <= stop_delta) {
            trace.converged = true;
            break;
        }
        if (t == max_rounds) break;
        prev = sol.d;
        params = next->first;
        sol = next->second;
    }
    return trace;
}

Vec reference_stable_point(const ResponseMap& response, const LinearMdpSpec& spec, double lambda,
                           const ConvergenceCertificate& certificate, double stop_delta, const Vec& d0) {
    double tight = stop_delta / 100.0;
    long rounds = certificate.contracts ? 5 * certificate.iters_to_delta(tight) : 1000;
    RetrainOptions opts;
    opts.record_stability_gap = false;
    Trace t = run_repeated_optimization(response, spec, lambda, d0, static_cast<int>(std::min(rounds, 100000L)), tight, opts);
    return t.records.back().d;
}

StabilityGap stability_gap(const Vec& d, const ResponseMap& response, const LinearMdpSpec& spec, double lambda) {
    MdpParams params = response.apply(d);
    StabilityGap gap;
    RegularizedSolution best = solve_regularized(params, spec, lambda);
    gap.regularized = best.primal_objective - regularized_objective(d, params, spec, lambda);
    const double lp_lambda = 1e-9;
    RegularizedSolution lp = solve_regularized(params, spec, lp_lambda);
    Vec reward = spec.features * params.theta;
    gap.unregularized = lp.d.dot(reward) - d.dot(reward);
    return gap;
}

double theorem2_bound(double eps_theta, double eps_mu, const SpectralConstants& c, const LinearMdpSpec& spec) {
    require_kappa(c);
    return 25.0 * c.bigM * sensitivity_mix(eps_theta, eps_mu, c, spec) /
           (16.0 * std::sqrt(c.kappa) * std::pow(1.0 - spec.discount, 2));
}

ValueGapBound theorem3_bound(double eps_theta, double eps_mu, const SpectralConstants& c, const LinearMdpSpec& spec) {
    require_kappa(c);
    const double gamma = spec.discount;
    const double horizon_sq = std::pow(1.0 - gamma, 2);
    ValueGapBound b;
    b.delta = 3.0 * gamma * eps_mu * c.bigM * std::sqrt(static_cast<double>(spec.feature_dim())) / horizon_sq +
              eps_theta * std::sqrt(c.bigM);
    b.lambda0 = 25.0 * sensitivity_mix(eps_theta, eps_mu, c, spec) / (8.0 * std::sqrt(c.kappa));
    double s2 = c.bigM / horizon_sq;
    b.bound = 4.0 * std::sqrt((1.0 + b.delta) * b.delta / c.kappa * s2) + b.lambda0 * s2;
    double s1 = 4.0 * (1.0 + b.delta) * b.delta / c.kappa;
    b.suggested_lambda = std::max(b.lambda0, std::sqrt(s1 / s2));
    return b;
}

SelfConsistentOccupancy self_consistent_occupancy(const Policy& pi, const ResponseMap& response,
                                                  const LinearMdpSpec& spec) {
    SelfConsistentOccupancy out;
    Vec d = occupancy_from_policy(pi, response.base_params(), spec);
    double damping = 1.0;
    double last_change = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= 500; ++it) {
        MdpParams params = response.apply(d);
        Vec next = occupancy_from_policy(pi, params, spec);
        double change = (next - d).norm();
        if (change > last_change) damping = 0.5;
        last_change = change;
        d = damping * next + (1.0 - damping) * d;
        out.iterations = it;
        if (change <= 1e-12) {
            out.converged = true;
            break;
        }
    }
    out.d = d;
    out.params = response.apply(d);
    return out;
}

namespace {

void compositions(int parts, int units, std::vector<int>& current, std::vector<std::vector<int>>& out) {
    if (parts == 1) {
        current.push_back(units);
        out.push_back(current);
        current.pop_back();
        return;
    }
    for (int k = units; k >= 0; --k) {
        current.push_back(k);
        compositions(parts - 1, units - k, current, out);
        current.pop_back();
    }
}

int thread_budget(int requested) {
    if (requested > 0) return requested;
    int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("PERF_LMDP_THREADS")) {
        int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return n;
}

}  // namespace

BruteForceResult brute_force_performative_optimum(const ResponseMap& response, const LinearMdpSpec& spec,
                                                  double grid_resolution, int threads) {
    const int S = spec.num_states, A = spec.num_actions;
    if (S * A > 6) throw std::invalid_argument("brute force needs S*A <= 6");
    int units = static_cast<int>(std::lround(1.0 / grid_resolution));
    if (units < 1 || std::abs(units * grid_resolution - 1.0) > 1e-9)
        throw std::invalid_argument("grid resolution must divide 1");
    std::vector<std::vector<int>> rows;
    std::vector<int> scratch;
    compositions(A, units, scratch, rows);
    const long per_state = static_cast<long>(rows.size());
    long total = 1;
    for (int s = 0; s < S; ++s) total *= per_state;

    struct Best {
        double value = -std::numeric_limits<double>::infinity();
        long index = -1;
        long diverged = 0;
    };
    auto policy_at = [&](long index) {
        Policy pi(S, A);
        for (int s = S - 1; s >= 0; --s) {
            const auto& row = rows[index % per_state];
            index /= per_state;
            for (int a = 0; a < A; ++a) pi(s, a) = static_cast<double>(row[a]) / units;
        }
        return pi;
    };
    auto evaluate = [&](long index, Best& best) {
        Policy pi = policy_at(index);
        try {
            SelfConsistentOccupancy sc = self_consistent_occupancy(pi, response, spec);
            if (!sc.converged) ++best.diverged;
            double value = sc.d.dot(spec.features * sc.params.theta);
            if (value > best.value) {
                best.value = value;
                best.index = index;
            }
        } catch (const NumericalError&) {
            ++best.diverged;
        }
    };

    int n_threads = static_cast<int>(std::min<long>(thread_budget(threads), total));
    std::vector<Best> partial(n_threads);
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t]() {
            long lo = total * t / n_threads, hi = total * (t + 1) / n_threads;
            for (long i = lo; i < hi; ++i) evaluate(i, partial[t]);
        });
    }
    for (auto& th : pool) th.join();

    Best best;
    for (const auto& p : partial) {
        best.diverged += p.diverged;
        if (p.value > best.value) {
            best.value = p.value;
            best.index = p.index;
        }
    }
    if (best.index < 0) throw NumericalError("brute force found no evaluable grid point");
    BruteForceResult out;
    out.policy = policy_at(best.index);
    out.d = self_consistent_occupancy(out.policy, response, spec).d;
    out.value = best.value;
    out.grid_points = total;
    out.diverged_points = best.diverged;
    return out;
}

Vec optimal_values(const MdpParams& params, const LinearMdpSpec& spec) {
    Dynamics dyn = reconstruct_dynamics(params, spec);
    const int S = spec.num_states, A = spec.num_actions;
    Vec V = Vec::Zero(S);
    for (int it = 0; it < 1000000; ++it) {
        Vec q = dyn.reward + spec.discount * dyn.transition.transpose() * V;
        Vec next(S);
        for (int s = 0; s < S; ++s) next(s) = q.segment(s * A, A).maxCoeff();
        double change = (next - V).cwiseAbs().maxCoeff();
        V = next;
        if (change * spec.discount / (1.0 - spec.discount) <= 1e-12 || change == 0.0) break;
    }
    return V;
}

}  // namespace plmdp
