#include "perf_lmdp/sampling.hpp"

#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <limits>
#include <sstream>

#include "perf_lmdp/csv_io.hpp"
#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/primal_dual.hpp"
#include "perf_lmdp/qp.hpp"
#include "perf_lmdp/rng.hpp"

namespace plmdp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Factorization of a covariance; throws when it is not positive definite.
Eigen::LLT<Mat> factor_sigma(const CovarianceEstimate& sigma) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(sigma.sigma, Eigen::EigenvaluesOnly);
    double top = std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
    if (eig.eigenvalues().minCoeff() <= 1e-14 * top) throw NumericalError("singular-sigma: covariance is not invertible");
    return Eigen::LLT<Mat>(sigma.sigma);
}

CovarianceEstimate with_ridge(Mat sigma, CovarianceSource source, double ridge) {
    sigma = 0.5 * (sigma + sigma.transpose());
    CovarianceEstimate est;
    est.source = source;
    Eigen::SelfAdjointEigenSolver<Mat> eig(sigma, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < 1e-10) {
        sigma += ridge * Mat::Identity(sigma.rows(), sigma.cols());
        est.ridge = ridge;
    }
    est.sigma = sigma;
    return est;
}

void check_distribution(const Vec& w, const char* what) {
    if (w.size() == 0 || w.minCoeff() < -1e-12 || std::abs(w.sum() - 1.0) > 1e-6) {
        throw ConfigError(fmt::format("invalid-distribution: {} sums to {:.12g}", what, w.sum()));
    }
}

}  // namespace

double Dataset::total_weight() const {
    if (weights.empty()) return static_cast<double>(tuples.size());
    double w = 0.0;
    for (double x : weights) w += x;
    return w;
}

Dataset sample_dataset(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec, long m, uint64_t seed, int round,
                       double reward_noise) {
    if (m < 1) throw ConfigError("sample size m must be at least 1");
    const double gamma = spec.discount;
    Vec visit = (1.0 - gamma) * d;
    check_distribution(visit, "(1-gamma) d");
    check_distribution(spec.start_dist, "start_dist");
    Dynamics dyn = reconstruct_dynamics(params, spec);

    std::vector<double> start_cdf = cumulative_weights(spec.start_dist.data(), spec.num_states);
    Vec visit_clamped = visit.cwiseMax(0.0);
    std::vector<double> visit_cdf = cumulative_weights(visit_clamped.data(), spec.num_pairs());
    std::vector<std::vector<double>> next_cdf(spec.num_pairs());
    for (int i = 0; i < spec.num_pairs(); ++i) {
        Vec col = dyn.transition.col(i);
        next_cdf[i] = cumulative_weights(col.data(), spec.num_states);
    }

    CounterRng rng(seed, RngModule::sampling, static_cast<uint32_t>(round));
    CounterRng noise(seed, RngModule::reward_noise, static_cast<uint32_t>(round));
    Dataset data;
    data.round = round;
    data.seed = seed;
    data.tuples.reserve(static_cast<size_t>(m));
    for (long j = 0; j < m; ++j) {
        Transition t;
        t.s0 = rng.discrete(start_cdf);
        int pair = rng.discrete(visit_cdf);
        t.s = pair / spec.num_actions;
        t.a = pair % spec.num_actions;
        t.s_next = rng.discrete(next_cdf[pair]);
        t.r = dyn.reward(pair);
        if (reward_noise > 0.0) t.r += noise.uniform(-reward_noise, reward_noise);
        data.tuples.push_back(t);
    }
    data.rng_digest = rng.digest();
    return data;
}

Dataset enumerate_dataset(const Vec& d, const MdpParams& params, const LinearMdpSpec& spec) {
    Dynamics dyn = reconstruct_dynamics(params, spec);
    const double gamma = spec.discount;
    Dataset data;
    for (int s0 = 0; s0 < spec.num_states; ++s0) {
        for (int pair = 0; pair < spec.num_pairs(); ++pair) {
            for (int sn = 0; sn < spec.num_states; ++sn) {
                double w = spec.start_dist(s0) * (1.0 - gamma) * d(pair) * dyn.transition(sn, pair);
                if (w == 0.0) continue;
                data.tuples.push_back({s0, pair / spec.num_actions, pair % spec.num_actions, dyn.reward(pair), sn});
                data.weights.push_back(w);
            }
        }
    }
    return data;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    bool weighted = !data.weights.empty();
    out << "s0,s,a,r,s_next" << (weighted ? ",weight" : "") << '\n';
    for (size_t j = 0; j < data.tuples.size(); ++j) {
        const Transition& t = data.tuples[j];
        out << t.s0 << ',' << t.s << ',' << t.a << ',' << format_double(t.r) << ',' << t.s_next;
        if (weighted) out << ',' << format_double(data.weights[j]);
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset read_dataset_csv(const std::filesystem::path& path, const LinearMdpSpec& spec) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty dataset file");
    bool weighted;
    if (line == "s0,s,a,r,s_next") weighted = false;
    else if (line == "s0,s,a,r,s_next,weight") weighted = true;
    else throw ConfigError(fmt::format("{}:1: expected header s0,s,a,r,s_next[,weight]", path.string()));

    Dataset data;
    const double reward_cap = std::sqrt(static_cast<double>(spec.feature_dim())) + 1e-9;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != (weighted ? 6u : 5u)) {
            throw ConfigError(fmt::format("{}:{}: expected {} columns", path.string(), lineno, weighted ? 6 : 5));
        }
        Transition t;
        try {
            t.s0 = std::stoi(cells[0]);
            t.s = std::stoi(cells[1]);
            t.a = std::stoi(cells[2]);
            t.r = std::stod(cells[3]);
            t.s_next = std::stoi(cells[4]);
            if (weighted) data.weights.push_back(std::stod(cells[5]));
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("{}:{}: malformed number", path.string(), lineno));
        }
        auto in_states = [&](int s) { return s >= 0 && s < spec.num_states; };
        if (!in_states(t.s0) || !in_states(t.s) || !in_states(t.s_next) || t.a < 0 || t.a >= spec.num_actions) {
            throw ConfigError(fmt::format("{}:{}: state or action index out of range", path.string(), lineno));
        }
        if (std::abs(t.r) > reward_cap) {
            throw ConfigError(fmt::format("{}:{}: reward {} exceeds sqrt(D)", path.string(), lineno, t.r));
        }
        data.tuples.push_back(t);
    }
    return data;
}

CovarianceEstimate expected_covariance(const Vec& d, const LinearMdpSpec& spec, double ridge) {
    Vec w = (1.0 - spec.discount) * d.cwiseMax(0.0);
    Mat sigma = spec.features.transpose() * w.asDiagonal() * spec.features;
    return with_ridge(sigma, CovarianceSource::exact, ridge);
}

CovarianceEstimate estimated_covariance(const Dataset& data, const LinearMdpSpec& spec, double ridge) {
    EmpiricalMoments mom = empirical_moments(data, spec);
    return with_ridge(mom.feature_cov, CovarianceSource::estimated, ridge);
}

double true_lagrangian(const Vec& d, const Vec& nu, const Vec& g, const Vec& omega, const MdpParams& params,
                       const LinearMdpSpec& spec, double lambda) {
    Mat B = aggregation_matrix(spec);
    return nu.dot(params.theta + spec.discount * params.mu.transpose() * g - omega) - 0.5 * lambda * nu.squaredNorm() +
           g.dot(spec.start_dist) + d.dot(spec.features * omega - B.transpose() * g);
}

double empirical_lagrangian(const Dataset& data, const CovarianceEstimate& sigma, const LinearMdpSpec& spec,
                            const Vec& d, const Vec& nu, const Vec& g, const Vec& omega, double lambda) {
    auto llt = factor_sigma(sigma);
    const int D = spec.feature_dim();
    const double total = data.total_weight();
    Vec inner = Vec::Zero(D);
    double start_term = 0.0;
    for (size_t j = 0; j < data.tuples.size(); ++j) {
        const Transition& t = data.tuples[j];
        double w = data.weight(j) / total;
        Vec phi = spec.features.row(spec.index(t.s, t.a)).transpose();
        inner += w * phi * (t.r + spec.discount * g(t.s_next) - phi.dot(omega));
        start_term += w * g(t.s0);
    }
    Mat B = aggregation_matrix(spec);
    return nu.dot(llt.solve(inner)) - 0.5 * lambda * nu.squaredNorm() + start_term +
           d.dot(spec.features * omega - B.transpose() * g);
}

EmpiricalMoments empirical_moments(const Dataset& data, const LinearMdpSpec& spec) {
    if (data.tuples.empty()) throw ConfigError("empty-dataset");
    const int D = spec.feature_dim();
    const int S = spec.num_states;
    EmpiricalMoments mom{Mat::Zero(D, D), Vec::Zero(D), Mat::Zero(D, S), Vec::Zero(S)};
    const double total = data.total_weight();
    for (size_t j = 0; j < data.tuples.size(); ++j) {
        const Transition& t = data.tuples[j];
        double w = data.weight(j) / total;
        Vec phi = spec.features.row(spec.index(t.s, t.a)).transpose();
        mom.feature_cov.noalias() += w * phi * phi.transpose();
        mom.feature_reward += w * t.r * phi;
        mom.feature_next.col(t.s_next) += w * phi;
        mom.start_freq(t.s0) += w;
    }
    return mom;
}

EmpiricalMoments population_moments(const CovarianceEstimate& sigma, const MdpParams& params, const LinearMdpSpec& spec) {
    return {sigma.sigma, sigma.sigma * params.theta, sigma.sigma * params.mu.transpose(), spec.start_dist};
}

SaddleSolution solve_empirical_saddle(const EmpiricalMoments& mom, const CovarianceEstimate& sigma,
                                      const LinearMdpSpec& spec, double lambda, const SolverOptions& options) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    auto llt = factor_sigma(sigma);
    const int SA = spec.num_pairs();
    const int D = spec.feature_dim();
    const int S = spec.num_states;
    const int n = SA + D;

    // Variables (d, nu). The omega rows tie Phi'd to Shat Sigma^{-1} nu, the g rows carry the flow constraint.
    Mat sigma_inv_cov = llt.solve(mom.feature_cov);   // Sigma^{-1} Shat
    Mat sigma_inv_next = llt.solve(mom.feature_next); // Sigma^{-1} Chat
    QpProblem qp;
    qp.P = Mat::Zero(n, n);
    qp.P.bottomRightCorner(D, D) = lambda * Mat::Identity(D, D);
    qp.q = Vec::Zero(n);
    qp.q.tail(D) = -llt.solve(mom.feature_reward);
    qp.A = Mat::Zero(D + S + SA, n);
    qp.A.block(0, 0, D, SA) = spec.features.transpose();
    qp.A.block(0, SA, D, D) = -sigma_inv_cov.transpose();
    qp.A.block(D, 0, S, SA) = aggregation_matrix(spec);
    qp.A.block(D, SA, S, D) = -spec.discount * sigma_inv_next.transpose();
    qp.A.block(D + S, 0, SA, SA) = Mat::Identity(SA, SA);
    qp.l = Vec::Zero(D + S + SA);
    qp.l.segment(D, S) = mom.start_freq;
    qp.u = qp.l;
    qp.u.tail(SA).setConstant(kInf);

    QpSettings settings;
    settings.max_iter = options.max_iter;
    QpResult res = solve_qp(qp, settings);

    SaddleSolution sol;
    sol.d = res.x.head(SA).cwiseMax(0.0);
    sol.nu = res.x.tail(D);
    sol.omega = -res.y.head(D);
    sol.g = res.y.segment(D, S);
    sol.objective = -qp.q.tail(D).dot(sol.nu) - 0.5 * lambda * sol.nu.squaredNorm();
    sol.converged = qp_kkt_error(qp, res.x, res.y) <= options.tol;
    return sol;
}

double coverage_bound(const Policy& policy, const ResponseMap& response, const LinearMdpSpec& spec) {
    SelfConsistentOccupancy sc = self_consistent_occupancy(policy, response, spec);
    CovarianceEstimate sigma = expected_covariance(sc.d, spec);
    RegularizedSolution best = solve_regularized(sc.params, spec, 1e-9);
    Vec mean_feature = (1.0 - spec.discount) * spec.features.transpose() * best.d.cwiseMax(0.0);
    Vec z = sigma.sigma.ldlt().solve(mean_feature);
    return z.squaredNorm();
}

Trace run_finite_sample_retraining(const ResponseMap& response, const LinearMdpSpec& spec, double lambda, int max_rounds,
                                   uint64_t seed, const FiniteSampleOptions& options) {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (options.m_schedule.empty()) throw ConfigError("m_schedule must not be empty");
    Trace trace;
    trace.response_kind = to_string(response.kind());

    Vec prev = options.d0 ? *options.d0 : occupancy_from_policy(uniform_policy(spec), response.base_params(), spec);
    auto start = std::chrono::steady_clock::now();
    for (int t = 1; t <= max_rounds; ++t) {
        long m = options.m_schedule[std::min<size_t>(t - 1, options.m_schedule.size() - 1)];
        TraceRecord rec;
        rec.round = t;
        try {
            MdpParams params = response.apply(prev);
            Policy deployed = policy_from_occupancy(prev, spec);
            Vec d_deploy = occupancy_from_policy(deployed, params, spec);

            Dataset data;
            if (m > 0) {
                data = sample_dataset(d_deploy, params, spec, m, seed, t, options.reward_noise);
            } else if (options.solver == FiniteSolver::primal_dual) {
                data = enumerate_dataset(d_deploy, params, spec);
                data.round = t;
                data.seed = seed;
            }
            CovarianceEstimate sigma = (options.sigma_mode == SigmaMode::estimated && m > 0)
                                           ? estimated_covariance(data, spec, options.ridge)
                                           : expected_covariance(d_deploy, spec, options.ridge);

            if (options.solver == FiniteSolver::exact_saddle) {
                EmpiricalMoments mom = m > 0 ? empirical_moments(data, spec) : population_moments(sigma, params, spec);
                SaddleSolution sol = solve_empirical_saddle(mom, sigma, spec, lambda, options.solver_options);
                if (!sol.converged) throw NumericalError("empirical saddle solve did not converge");
                rec.d = sol.d;
                rec.reg_objective = sol.objective;
            } else {
                PdConfig cfg;
                cfg.T_inner = options.pd_T;
                cfg.K = options.pd_K;
                cfg.lambda = lambda;
                cfg.b_cov = options.pd_b_cov;
                PdResult pd = run_offline_primal_dual(data, sigma, spec, cfg, seed);
                // The learner's next occupancy is the mixture's occupancy in the environment it was trained on.
                MixtureFeature mix = mixture_average_feature(pd, params, spec, lambda);
                rec.d = mix.occupancy;
                rec.reg_objective = mix.objective;
            }
            rec.rng_digest = data.rng_digest;
            rec.policy = policy_from_occupancy(rec.d, spec);
            rec.step_norm = (rec.d - prev).norm();
            if (options.reference) rec.dist_to_ref = (rec.d - *options.reference).norm();
            rec.perf_value = rec.d.dot(spec.features * response.apply(rec.d).theta);
        } catch (const NumericalError& e) {
            throw NumericalError(fmt::format("round {}: {}", t, e.what()));
        }
        auto now = std::chrono::steady_clock::now();
        rec.wall_ms = std::chrono::duration<double, std::milli>(now - start).count();
        start = now;
        trace.records.push_back(rec);
        if (options.on_round) options.on_round(trace.records.back());
        prev = rec.d;
    }
    return trace;
}

}  // namespace plmdp
