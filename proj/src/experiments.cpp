#include "perf_lmdp/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fmt/format.h>
#include <fstream>
#include <json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>
#include <sstream>
#include <thread>
#include <toml.hpp>

#include "perf_lmdp/csv_io.hpp"
#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/instances.hpp"
#include "perf_lmdp/primal_dual.hpp"
#include "perf_lmdp/rng.hpp"

#ifndef PERF_LMDP_VERSION
#define PERF_LMDP_VERSION "0.0.0"
#endif

namespace plmdp {

namespace fs = std::filesystem;

namespace {

const std::vector<std::pair<Driver, std::string>> kDrivers = {
    {Driver::certify, "certify"},           {Driver::solve, "solve"},
    {Driver::retrain_exact, "retrain-exact"}, {Driver::retrain_finite, "retrain-finite"},
    {Driver::primal_dual, "primal-dual"},   {Driver::stackelberg, "stackelberg"},
    {Driver::diagnose, "diagnose"},
};

// ---------------------------------------------------------------- config reading

class Reader {
public:
    explicit Reader(std::string source) : source_(std::move(source)) {}

    [[noreturn]] void fail(const toml::node* node, const std::string& msg) const {
        if (node != nullptr && node->source().begin.line > 0) {
            throw ConfigError(fmt::format("{}:{}: {}", source_, node->source().begin.line, msg));
        }
        throw ConfigError(fmt::format("{}: {}", source_, msg));
    }

    void allow_keys(const toml::table& tbl, std::initializer_list<std::string_view> keys, const std::string& where) const {
        for (auto&& [key, node] : tbl) {
            if (std::find(keys.begin(), keys.end(), key.str()) == keys.end()) {
                fail(&node, fmt::format("unknown key '{}' in {}", key.str(), where));
            }
        }
    }

    const toml::table* table(const toml::table& root, std::string_view key) const {
        const toml::node* n = root.get(key);
        if (n == nullptr) return nullptr;
        if (!n->is_table()) fail(n, fmt::format("'{}' must be a table", key));
        return n->as_table();
    }

    template <class F>
    void integer(const toml::table* tbl, std::string_view key, F&& store) const {
        if (tbl == nullptr) return;
        const toml::node* n = tbl->get(key);
        if (n == nullptr) return;
        if (!n->is_integer()) fail(n, fmt::format("{} must be an integer", key));
        store(n->as_integer()->get(), n);
    }

    template <class F>
    void number(const toml::table* tbl, std::string_view key, F&& store) const {
        if (tbl == nullptr) return;
        const toml::node* n = tbl->get(key);
        if (n == nullptr) return;
        double v;
        if (n->is_integer()) v = static_cast<double>(n->as_integer()->get());
        else if (n->is_floating_point()) v = n->as_floating_point()->get();
        else fail(n, fmt::format("{} must be a number", key));
        if (!std::isfinite(v)) fail(n, fmt::format("{} must be finite", key));
        store(v, n);
    }

    template <class F>
    void string(const toml::table* tbl, std::string_view key, F&& store) const {
        if (tbl == nullptr) return;
        const toml::node* n = tbl->get(key);
        if (n == nullptr) return;
        if (!n->is_string()) fail(n, fmt::format("{} must be a string", key));
        store(n->as_string()->get(), n);
    }

    void boolean(const toml::table* tbl, std::string_view key, bool& out) const {
        if (tbl == nullptr) return;
        const toml::node* n = tbl->get(key);
        if (n == nullptr) return;
        if (!n->is_boolean()) fail(n, fmt::format("{} must be true or false", key));
        out = n->as_boolean()->get();
    }

private:
    std::string source_;
};

template <class T>
void require_one_of(const Reader& r, const toml::node* n, const std::string& value, std::initializer_list<T> allowed,
                    const char* what) {
    for (const auto& a : allowed)
        if (value == a) return;
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    r.fail(n, fmt::format("{} must be one of: {}", what, list));
}

void require_file(const Reader& r, const toml::node* n, const fs::path& base, const std::string& rel) {
    fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
    if (!fs::exists(p)) r.fail(n, fmt::format("file not found: {}", p.string()));
}

fs::path resolve_path(const ExperimentConfig& c, const std::string& rel) {
    fs::path p(rel);
    return p.is_absolute() ? p : c.base_dir / p;
}

// ---------------------------------------------------------------- output helpers

std::string json_number(double x) { return std::isfinite(x) ? format_double(x) : "null"; }

std::string json_vector(const Vec& v) {
    std::string s = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + json_number(v(i));
    return s + "]";
}

class SummaryWriter {
public:
    void add(const std::string& key, double v) { rows_.emplace_back(key, format_double(v)); }
    void add(const std::string& key, long v) { rows_.emplace_back(key, std::to_string(v)); }
    void add(const std::string& key, int v) { rows_.emplace_back(key, std::to_string(v)); }
    void add(const std::string& key, bool v) { rows_.emplace_back(key, v ? "true" : "false"); }
    void add(const std::string& key, const std::string& v) { rows_.emplace_back(key, v); }
    void add(const std::string& key, const char* v) { rows_.emplace_back(key, v); }

    void write(const fs::path& path) const {
        std::ofstream out(path);
        out << "key,value\n";
        for (const auto& [k, v] : rows_) out << k << ',' << v << '\n';
        if (!out) throw IoError("cannot write " + path.string());
    }

private:
    std::vector<std::pair<std::string, std::string>> rows_;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

// ---------------------------------------------------------------- run preparation

struct Prepared {
    Problem problem;
    double lambda = 0.0;
    bool lambda_auto = false;
    std::vector<long> m_schedule;
    std::optional<Dataset> dataset;
    std::optional<ConvergenceCertificate> certificate;
    double b_cov = 10.0;
};

std::optional<ConvergenceCertificate> try_certify(const Problem& p, double lambda) {
    SpectralConstants c = spectral_constants(p.spec, p.base);
    if (!(c.kappa > 0.0)) return std::nullopt;
    return certify(p.response->eps_theta(), p.response->eps_mu(), c, p.spec, lambda);
}

std::vector<long> read_schedule(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open m_schedule file " + path.string());
    std::vector<long> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        try {
            size_t used = 0;
            long m = std::stol(line, &used);
            out.push_back(m);
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("{}:{}: expected an integer sample size", path.string(), lineno));
        }
    }
    if (out.empty()) throw ConfigError(path.string() + ": m_schedule file is empty");
    return out;
}

Prepared prepare(const ExperimentConfig& c) {
    Prepared prep;
    prep.problem = load_problem(c);
    const Problem& p = prep.problem;
    if (c.lambda) {
        prep.lambda = *c.lambda;
    } else {
        SpectralConstants constants = spectral_constants(p.spec, p.base);
        if (!(constants.kappa > 0.0)) {
            throw ConfigError("lambda = \"auto\" needs kappa > 0 (invertible features); set [run] lambda explicitly");
        }
        prep.lambda = auto_lambda(p.response->eps_theta(), p.response->eps_mu(), constants, p.spec);
        prep.lambda_auto = true;
        if (!(prep.lambda > 0.0)) {
            throw ConfigError("lambda = \"auto\" resolves to 0 for a response with zero sensitivity; set lambda");
        }
    }
    if (c.driver == Driver::certify) {
        prep.certificate = certify(p.response->eps_theta(), p.response->eps_mu(), spectral_constants(p.spec, p.base),
                                   p.spec, prep.lambda);
    }
    prep.m_schedule = c.m_schedule_file.empty() ? c.m_schedule : read_schedule(resolve_path(c, c.m_schedule_file));
    if (c.driver == Driver::primal_dual) {
        if (!c.dataset_file.empty()) {
            if (c.sigma_mode == "exact") {
                throw ConfigError("sigma = \"exact\" needs the data-generating occupancy; use \"estimated\" with a dataset file");
            }
            prep.dataset = read_dataset_csv(resolve_path(c, c.dataset_file), p.spec);
            if (prep.dataset->tuples.empty()) throw ConfigError("dataset file has no tuples");
        }
        prep.b_cov = c.b_cov.value_or(10.0);
    }
    return prep;
}

// ---------------------------------------------------------------- drivers

struct RunContext {
    const ExperimentConfig& config;
    Prepared& prep;
    fs::path out;
};

void write_snapshot(const fs::path& out, const Vec& d, const LinearMdpSpec& spec, const ResponseMap& response) {
    write_vector_csv(out / "d_final.csv", d, "d");
    write_matrix_csv(out / "policy_final.csv", policy_from_occupancy(d, spec), "policy");
    MdpParams params = response.apply(d);
    write_vector_csv(out / "theta_final.csv", params.theta, "theta");
    write_matrix_csv(out / "mu_final.csv", params.mu, "mu");
}

const std::vector<std::string> kRetrainOutputs = {"trace.jsonl", "timing.csv", "summary.csv", "d_final.csv",
                                                  "policy_final.csv", "theta_final.csv", "mu_final.csv"};

std::vector<std::string> outputs_for(const ExperimentConfig& c) {
    switch (c.driver) {
        case Driver::certify:
        case Driver::diagnose: return {"trace.jsonl", "summary.csv"};
        case Driver::solve: return {"trace.jsonl", "summary.csv", "d.csv", "policy.csv"};
        case Driver::retrain_exact:
        case Driver::retrain_finite: return kRetrainOutputs;
        case Driver::primal_dual:
            return {"trace.jsonl", "summary.csv", "policies.csv", "selected_policy.csv", "nu_tilde.csv",
                    "objective_history.csv"};
        case Driver::stackelberg:
            if (c.stackelberg_mode == "check") return {"trace.jsonl", "summary.csv", "sensitivity_checks.csv"};
            return kRetrainOutputs;
    }
    return {};
}

void add_certificate(SummaryWriter& s, const ConvergenceCertificate& cert, double stop_delta) {
    s.add("lambda_min", cert.lambda_min);
    s.add("r", cert.rate_r);
    s.add("contracts", cert.contracts);
    s.add("beta_recurrence", cert.beta_recurrence);
    s.add("eps_mu_max", cert.eps_mu_max);
    if (cert.contracts) s.add("iters_to_delta", cert.iters_to_delta(stop_delta));
}

void run_certify(RunContext& ctx) {
    const Problem& p = ctx.prep.problem;
    SpectralConstants c = spectral_constants(p.spec, p.base);
    const ConvergenceCertificate& cert = *ctx.prep.certificate;
    double et = p.response->eps_theta(), em = p.response->eps_mu();
    SummaryWriter s;
    s.add("driver", "certify");
    s.add("lambda", ctx.prep.lambda);
    s.add("lambda_auto", ctx.prep.lambda_auto);
    s.add("eps_theta", et);
    s.add("eps_mu", em);
    s.add("sensitivity_heuristic", p.response->heuristic_sensitivity());
    s.add("kappa", c.kappa);
    s.add("bigM", c.bigM);
    s.add("alpha", c.alpha);
    s.add("M_pinv_norm", c.M_pinv_norm);
    add_certificate(s, cert, ctx.config.stop_delta);
    s.add("stop_delta", ctx.config.stop_delta);
    s.add("theorem2_bound", theorem2_bound(et, em, c, p.spec));
    ValueGapBound t3 = theorem3_bound(et, em, c, p.spec);
    s.add("value_gap_bound", t3.bound);
    s.add("value_gap_suggested_lambda", t3.suggested_lambda);
    s.write(ctx.out / "summary.csv");
}

void run_solve(RunContext& ctx) {
    const Problem& p = ctx.prep.problem;
    RegularizedSolution sol = solve_regularized(p.base, p.spec, ctx.prep.lambda);
    if (!sol.converged) {
        throw NumericalError(fmt::format("solver did not converge (kkt {:.3e})", sol.kkt_residuals.max()));
    }
    Policy pi = policy_from_occupancy(sol.d, p.spec);
    write_vector_csv(ctx.out / "d.csv", sol.d, "d");
    write_matrix_csv(ctx.out / "policy.csv", pi, "policy");
    SummaryWriter s;
    s.add("driver", "solve");
    s.add("lambda", ctx.prep.lambda);
    s.add("primal_objective", sol.primal_objective);
    s.add("dual_objective", sol.dual_objective);
    s.add("duality_gap", std::abs(sol.primal_objective - sol.dual_objective));
    s.add("kkt_stationarity", sol.kkt_residuals.stationarity);
    s.add("kkt_feasibility", sol.kkt_residuals.feasibility);
    s.add("kkt_complementarity", sol.kkt_residuals.complementarity);
    s.add("iterations", sol.iterations);
    s.add("policy_value", value_of_policy(pi, p.base, p.spec));
    s.write(ctx.out / "summary.csv");
}

std::optional<Vec> stable_reference(const Prepared& prep, const ExperimentConfig& c, const Vec& d0) {
    auto cert = try_certify(prep.problem, prep.lambda);
    if (!cert || !cert->contracts) return std::nullopt;
    return reference_stable_point(*prep.problem.response, prep.problem.spec, prep.lambda, *cert,
                                  std::max(c.stop_delta, 1e-10), d0);
}

void finish_retraining(RunContext& ctx, const Trace& trace, const char* driver, std::ofstream& timing) {
    const Problem& p = ctx.prep.problem;
    timing.flush();
    if (!timing) throw IoError("cannot write timing.csv");
    SummaryWriter s;
    s.add("driver", driver);
    s.add("response_kind", trace.response_kind);
    s.add("lambda", ctx.prep.lambda);
    s.add("lambda_auto", ctx.prep.lambda_auto);
    if (auto cert = try_certify(p, ctx.prep.lambda)) add_certificate(s, *cert, ctx.config.stop_delta);
    s.add("rounds", static_cast<long>(trace.records.size()));
    s.add("converged", trace.converged);
    if (!trace.records.empty()) {
        const TraceRecord& last = trace.records.back();
        s.add("final_step_norm", last.step_norm);
        if (last.dist_to_ref) s.add("final_dist_to_ref", *last.dist_to_ref);
        s.add("final_reg_objective", last.reg_objective);
        s.add("final_perf_value", last.perf_value);
        if (last.stability_gap) s.add("final_stability_gap", *last.stability_gap);
        write_snapshot(ctx.out, last.d, p.spec, *p.response);
    }
    s.write(ctx.out / "summary.csv");
}

void run_retrain_exact(RunContext& ctx, const char* driver) {
    const Problem& p = ctx.prep.problem;
    const ExperimentConfig& c = ctx.config;
    Vec d0 = occupancy_from_policy(uniform_policy(p.spec), p.base, p.spec);
    std::ofstream trace_out(ctx.out / "trace.jsonl", std::ios::binary);
    std::ofstream timing(ctx.out / "timing.csv");
    timing << "round,wall_ms\n";
    TraceSink sink(trace_out);
    RetrainOptions opts;
    opts.record_stability_gap = c.record_stability_gap;
    opts.reference = stable_reference(ctx.prep, c, d0);
    opts.on_round = [&](const TraceRecord& rec) {
        sink.emit(rec);
        timing << rec.round << ',' << format_double(rec.wall_ms) << '\n';
        spdlog::debug("round {} step {:.3e}", rec.round, rec.step_norm);
    };
    Trace trace = run_repeated_optimization(*p.response, p.spec, ctx.prep.lambda, d0, c.rounds, c.stop_delta, opts);
    spdlog::info("{}: {} rounds, converged={}", driver, trace.records.size(), trace.converged);
    finish_retraining(ctx, trace, driver, timing);
}

void run_retrain_finite(RunContext& ctx) {
    const Problem& p = ctx.prep.problem;
    const ExperimentConfig& c = ctx.config;
    Vec d0 = occupancy_from_policy(uniform_policy(p.spec), p.base, p.spec);
    std::ofstream trace_out(ctx.out / "trace.jsonl", std::ios::binary);
    std::ofstream timing(ctx.out / "timing.csv");
    timing << "round,wall_ms\n";
    TraceSink sink(trace_out);
    FiniteSampleOptions opts;
    opts.m_schedule = ctx.prep.m_schedule;
    opts.solver = c.finite_solver == "primal-dual" ? FiniteSolver::primal_dual : FiniteSolver::exact_saddle;
    opts.sigma_mode = c.sigma_mode == "estimated" ? SigmaMode::estimated : SigmaMode::exact;
    opts.ridge = c.ridge;
    opts.reward_noise = c.reward_noise;
    opts.pd_T = c.pd_T;
    opts.pd_K = c.pd_K;
    opts.pd_b_cov = c.b_cov.value_or(10.0);
    opts.d0 = d0;
    opts.reference = stable_reference(ctx.prep, c, d0);
    opts.on_round = [&](const TraceRecord& rec) {
        sink.emit(rec);
        timing << rec.round << ',' << format_double(rec.wall_ms) << '\n';
        spdlog::debug("round {} step {:.3e}", rec.round, rec.step_norm);
    };
    Trace trace = run_finite_sample_retraining(*p.response, p.spec, ctx.prep.lambda, c.rounds, c.seed, opts);
    spdlog::info("retrain-finite: {} rounds", trace.records.size());
    finish_retraining(ctx, trace, "retrain-finite", timing);
}

void run_primal_dual(RunContext& ctx) {
    const Problem& p = ctx.prep.problem;
    const ExperimentConfig& c = ctx.config;
    Dataset data;
    CovarianceEstimate sigma;
    double b_cov = ctx.prep.b_cov;
    if (ctx.prep.dataset) {
        data = *ctx.prep.dataset;
        sigma = estimated_covariance(data, p.spec, c.ridge);
    } else {
        Policy uniform = uniform_policy(p.spec);
        Vec d = occupancy_from_policy(uniform, p.base, p.spec);
        data = sample_dataset(d, p.base, p.spec, c.pd_samples, c.seed, 0, c.reward_noise);
        sigma = c.sigma_mode == "estimated" ? estimated_covariance(data, p.spec, c.ridge)
                                            : expected_covariance(d, p.spec, c.ridge);
        if (!c.b_cov) b_cov = coverage_bound(uniform, ResponseMap::constant(p.base, p.spec), p.spec);
    }
    PdConfig cfg;
    cfg.T_inner = c.pd_T;
    cfg.K = c.pd_K;
    cfg.lambda = ctx.prep.lambda;
    cfg.b_cov = b_cov;
    cfg.eta_omega = c.eta_omega;
    cfg.eta_pi = c.eta_pi;
    PdResult res = run_offline_primal_dual(data, sigma, p.spec, cfg, c.seed);
    MixtureFeature mix = mixture_average_feature(res, p.base, p.spec, ctx.prep.lambda);
    RegularizedSolution opt = solve_regularized(p.base, p.spec, ctx.prep.lambda);

    Mat flat(res.policies.size(), p.spec.num_pairs());
    for (size_t l = 0; l < res.policies.size(); ++l) {
        for (int s = 0; s < p.spec.num_states; ++s)
            for (int a = 0; a < p.spec.num_actions; ++a) flat(l, p.spec.index(s, a)) = res.policies[l](s, a);
    }
    write_matrix_csv(ctx.out / "policies.csv", flat, "policies");
    write_matrix_csv(ctx.out / "selected_policy.csv", res.selected_policy, "selected_policy");
    write_vector_csv(ctx.out / "nu_tilde.csv", mix.nu_tilde, "nu_tilde");
    Vec hist = Eigen::Map<const Vec>(res.objective_history.data(), res.objective_history.size());
    write_vector_csv(ctx.out / "objective_history.csv", hist, "objective_history");
    write_text(ctx.out / "trace.jsonl", "");

    SummaryWriter s;
    s.add("driver", "primal-dual");
    s.add("lambda", ctx.prep.lambda);
    s.add("dataset_size", static_cast<long>(data.tuples.size()));
    s.add("sigma_source", sigma.source == CovarianceSource::exact ? "exact" : "estimated");
    s.add("sigma_ridge", sigma.ridge);
    s.add("T_inner", res.config.T_inner);
    s.add("K", res.config.K);
    s.add("b_cov", res.config.b_cov);
    s.add("eta_omega", res.config.eta_omega);
    s.add("eta_pi", res.config.eta_pi);
    s.add("omega_radius", res.config.omega_radius);
    s.add("nu_radius", res.config.nu_radius);
    s.add("selected_index", res.selected_index);
    s.add("mixture_objective", mix.objective);
    s.add("exact_objective", opt.primal_objective);
    s.add("objective_gap", opt.primal_objective - mix.objective);
    s.add("max_gradient_norm", res.max_gradient_norm);
    s.add("gradient_norm_claim", 1.0 / (1.0 - p.spec.discount) + std::sqrt(res.config.b_cov));
    PdSampleSizes sizes = primal_dual_sample_sizes(p.spec, res.config.b_cov, 0.05);
    s.add("required_K_eps_0.05", sizes.K);
    s.add("required_T_eps_0.05", sizes.T);
    s.write(ctx.out / "summary.csv");
}

void run_stackelberg_checks(RunContext& ctx) {
    const StackelbergGame& game = *ctx.prep.problem.game;
    const ExperimentConfig& c = ctx.config;
    CounterRng rng(c.seed, RngModule::probes);
    std::ofstream out(ctx.out / "sensitivity_checks.csv");
    out << "check,index,delta,reward_dev,reward_bound,transition_dev,transition_bound,pass\n";
    int sensitivity_pass = 0;
    double worst_ratio = 0.0;
    for (int i = 0; i < c.policy_pairs; ++i) {
        Policy a = random_policy(game.num_states, game.leader_actions, rng);
        Policy b = random_policy(game.num_states, game.leader_actions, rng);
        SensitivityCheckReport rep = lemma1_sensitivity_check(game, a, b);
        bool ok = rep.reward_pass && rep.transition_pass;
        sensitivity_pass += ok;
        if (rep.reward_bound > 0) worst_ratio = std::max(worst_ratio, rep.max_reward_dev / rep.reward_bound);
        if (rep.transition_bound > 0) worst_ratio = std::max(worst_ratio, rep.max_transition_dev / rep.transition_bound);
        out << fmt::format("sensitivity,{},{},{},{},{},{},{}\n", i, format_double(rep.delta), format_double(rep.max_reward_dev),
                           format_double(rep.reward_bound), format_double(rep.max_transition_dev),
                           format_double(rep.transition_bound), ok ? "true" : "false");
    }
    const int S = game.num_states, SA = game.num_states * game.leader_actions;
    int l1_pass = 0;
    for (int i = 0; i < c.kernel_pairs; ++i) {
        Mat k1 = random_kernel(S, SA, rng);
        Mat k2 = random_kernel(S, SA, rng);
        Policy pi = random_policy(S, game.leader_actions, rng);
        OccupancyL1Report rep = occupancy_l1_perturbation_check(k1, k2, pi, game.start_dist, game.discount);
        l1_pass += rep.pass;
        out << fmt::format("occupancy_l1,{},{},{},{},,,{}\n", i, format_double(rep.kernel_deviation),
                           format_double(rep.l1_distance), format_double(rep.bound), rep.pass ? "true" : "false");
    }
    if (!out) throw IoError("cannot write sensitivity_checks.csv");
    write_text(ctx.out / "trace.jsonl", "");
    SensitivityBounds bounds = follower_sensitivity_bounds(game);
    SummaryWriter s;
    s.add("driver", "stackelberg");
    s.add("mode", "check");
    s.add("reward_bound_per_delta", bounds.reward_per_delta);
    s.add("transition_bound_per_delta", bounds.transition_per_delta);
    s.add("sensitivity_pairs", c.policy_pairs);
    s.add("sensitivity_pass", sensitivity_pass);
    s.add("sensitivity_worst_ratio", worst_ratio);
    s.add("occupancy_l1_pairs", c.kernel_pairs);
    s.add("occupancy_l1_pass", l1_pass);
    s.write(ctx.out / "summary.csv");
}

void run_diagnose(RunContext& ctx) {
    const Problem& p = ctx.prep.problem;
    SpectralConstants c = spectral_constants(p.spec, p.base);
    SummaryWriter s;
    s.add("driver", "diagnose");
    s.add("num_states", p.spec.num_states);
    s.add("num_actions", p.spec.num_actions);
    s.add("feature_dim", p.spec.feature_dim());
    s.add("discount", p.spec.discount);
    s.add("response_kind", to_string(p.response->kind()));
    s.add("kappa", c.kappa);
    s.add("bigM", c.bigM);
    s.add("alpha", c.alpha);
    s.add("M_pinv_norm", c.M_pinv_norm);
    s.add("M_pinv_within_alpha", c.M_pinv_norm <= c.alpha);
    s.add("lambda", ctx.prep.lambda);

    RegularizedSolution sol = solve_regularized(p.base, p.spec, ctx.prep.lambda);
    DualPair dual = minimum_norm_dual(sol.d, p.base, p.spec, ctx.prep.lambda);
    s.add("min_norm_dual", dual.h.norm());
    if (c.kappa > 0.0) s.add("dual_norm_bound", dual_norm_bound(ctx.prep.lambda, c, p.spec));

    CounterRng rng(ctx.config.seed, RngModule::probes);
    std::vector<std::pair<Vec, Vec>> probes;
    for (int i = 0; i < 20; ++i) {
        Vec a = occupancy_from_policy(random_policy(p.spec.num_states, p.spec.num_actions, rng), p.base, p.spec);
        Vec b = occupancy_from_policy(random_policy(p.spec.num_states, p.spec.num_actions, rng), p.base, p.spec);
        probes.emplace_back(a, b);
    }
    SensitivityEstimate est = measure_sensitivity(*p.response, probes);
    s.add("eps_theta_declared", p.response->eps_theta());
    s.add("eps_mu_declared", p.response->eps_mu());
    s.add("eps_theta_measured", est.eps_theta_hat);
    s.add("eps_mu_measured", est.eps_mu_hat);
    s.add("sensitivity_heuristic", p.response->heuristic_sensitivity());
    double b = coverage_bound(uniform_policy(p.spec), *p.response, p.spec);
    s.add("coverage_bound_uniform", b);
    PdSampleSizes sizes = primal_dual_sample_sizes(p.spec, b, 0.05);
    s.add("required_K_eps_0.05", sizes.K);
    s.add("required_T_eps_0.05", sizes.T);
    write_text(ctx.out / "trace.jsonl", "");
    s.write(ctx.out / "summary.csv");
}

void write_manifest(const ExperimentConfig& c, const Prepared& prep, const fs::path& out) {
    std::string text = serialize(c);
    nlohmann::ordered_json m;
    m["tool"] = "perf-lmdp";
    m["version"] = PERF_LMDP_VERSION;
    m["driver"] = to_string(c.driver);
    m["seed"] = c.seed;
    m["config_sha256"] = sha256_hex(text);
    m["lambda"] = prep.lambda;
    m["lambda_auto"] = prep.lambda_auto;
    m["libraries"] = {{"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
                      {"fmt", std::to_string(FMT_VERSION)},
                      {"spdlog", fmt::format("{}.{}.{}", SPDLOG_VER_MAJOR, SPDLOG_VER_MINOR, SPDLOG_VER_PATCH)},
                      {"toml++", fmt::format("{}.{}.{}", TOML_LIB_MAJOR, TOML_LIB_MINOR, TOML_LIB_PATCH)}};
    m["outputs"] = outputs_for(c);
    m["config"] = text;
    write_text(out / "manifest.json", m.dump(2) + "\n");
}

}  // namespace

// ---------------------------------------------------------------- public API

std::string to_string(Driver driver) {
    for (const auto& [d, name] : kDrivers)
        if (d == driver) return name;
    return "unknown";
}

Driver driver_from_string(const std::string& name) {
    for (const auto& [d, n] : kDrivers)
        if (n == name) return d;
    throw ConfigError("unknown driver '" + name + "'");
}

ExperimentConfig parse_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    fs::path base = path.parent_path();
    return parse_config_string(ss.str(), base.empty() ? fs::path(".") : base, path.string());
}

ExperimentConfig parse_config_string(const std::string& text, const fs::path& base_dir, const std::string& source) {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& err) {
        throw ConfigError(fmt::format("{}:{}: {}", source, err.source().begin.line, err.description()));
    }
    Reader r(source);
    ExperimentConfig c;
    c.base_dir = base_dir;
    r.allow_keys(root, {"driver", "seed", "mdp", "response", "game", "run", "finite", "primal_dual", "stackelberg"},
                 "the top level");

    r.string(&root, "driver", [&](const std::string& v, const toml::node* n) {
        try {
            c.driver = driver_from_string(v);
        } catch (const ConfigError&) {
            r.fail(n, fmt::format("unknown driver '{}'", v));
        }
    });
    r.integer(&root, "seed", [&](int64_t v, const toml::node* n) {
        if (v < 0) r.fail(n, "seed must be nonnegative");
        c.seed = static_cast<uint64_t>(v);
    });

    auto positive_int = [&](int& out, const char* name) {
        return [&out, &r, name](int64_t v, const toml::node* n) {
            if (v < 1 || v > 100000000) r.fail(n, fmt::format("{} must be between 1 and 1e8", name));
            out = static_cast<int>(v);
        };
    };
    auto file_key = [&](std::string& out) {
        return [&out, &r, &c](const std::string& v, const toml::node* n) {
            require_file(r, n, c.base_dir, v);
            out = v;
        };
    };

    if (const toml::table* t = r.table(root, "mdp")) {
        r.allow_keys(*t, {"preset", "preset_seed", "num_states", "num_actions", "discount", "start_dist", "features",
                          "reward", "kernel"},
                     "[mdp]");
        r.string(t, "preset", [&](const std::string& v, const toml::node* n) {
            require_one_of(r, n, v, {"reference", "single-state", "random-certified", "files"}, "preset");
            c.preset = v;
        });
        r.integer(t, "preset_seed", [&](int64_t v, const toml::node* n) {
            if (v < 0) r.fail(n, "preset_seed must be nonnegative");
            c.preset_seed = static_cast<uint64_t>(v);
        });
        r.integer(t, "num_states", positive_int(c.num_states, "num_states"));
        r.integer(t, "num_actions", positive_int(c.num_actions, "num_actions"));
        r.number(t, "discount", [&](double v, const toml::node* n) {
            if (v >= 1.0) r.fail(n, "discount must be < 1");
            if (v < 0.0) r.fail(n, "discount must be >= 0");
            c.discount = v;
        });
        r.string(t, "start_dist", file_key(c.start_dist_file));
        r.string(t, "features", file_key(c.features_file));
        r.string(t, "reward", file_key(c.reward_file));
        r.string(t, "kernel", file_key(c.kernel_file));
        if (c.preset == "files") {
            if (c.num_states < 1 || c.num_actions < 1) r.fail(t, "preset \"files\" needs num_states and num_actions");
            if (t->get("discount") == nullptr) r.fail(t, "preset \"files\" needs discount");
            if (c.start_dist_file.empty() || c.reward_file.empty() || c.kernel_file.empty()) {
                r.fail(t, "preset \"files\" needs start_dist, reward and kernel files");
            }
        }
    }

    if (const toml::table* t = r.table(root, "response")) {
        r.allow_keys(*t, {"kind", "eps_theta", "eps_mu", "directions_seed", "theta_dir", "mu_dir"}, "[response]");
        r.string(t, "kind", [&](const std::string& v, const toml::node* n) {
            require_one_of(r, n, v, {"constant", "affine", "policy-factored", "stackelberg"}, "response kind");
            c.response_kind = v;
        });
        r.number(t, "eps_theta", [&](double v, const toml::node* n) {
            if (v < 0.0) r.fail(n, "eps_theta must be >= 0");
            c.eps_theta = v;
        });
        r.number(t, "eps_mu", [&](double v, const toml::node* n) {
            if (v < 0.0) r.fail(n, "eps_mu must be >= 0");
            c.eps_mu = v;
        });
        r.integer(t, "directions_seed", [&](int64_t v, const toml::node* n) {
            if (v < 0) r.fail(n, "directions_seed must be nonnegative");
            c.directions_seed = static_cast<uint64_t>(v);
        });
        r.string(t, "theta_dir", file_key(c.theta_dir_file));
        r.string(t, "mu_dir", file_key(c.mu_dir_file));
        if (c.theta_dir_file.empty() != c.mu_dir_file.empty()) r.fail(t, "theta_dir and mu_dir must be given together");
    }

    if (const toml::table* t = r.table(root, "game")) {
        r.allow_keys(*t, {"file", "seed", "num_states", "leader_actions", "follower_actions", "discount", "beta"},
                     "[game]");
        GameConfig g;
        r.string(t, "file", file_key(g.file));
        r.integer(t, "seed", [&](int64_t v, const toml::node* n) {
            if (v < 0) r.fail(n, "seed must be nonnegative");
            g.seed = static_cast<uint64_t>(v);
        });
        r.integer(t, "num_states", positive_int(g.num_states, "num_states"));
        r.integer(t, "leader_actions", positive_int(g.leader_actions, "leader_actions"));
        r.integer(t, "follower_actions", positive_int(g.follower_actions, "follower_actions"));
        r.number(t, "discount", [&](double v, const toml::node* n) {
            if (v >= 1.0) r.fail(n, "discount must be < 1");
            if (v < 0.0) r.fail(n, "discount must be >= 0");
            g.discount = v;
        });
        r.number(t, "beta", [&](double v, const toml::node* n) {
            if (v < 0.0) r.fail(n, "beta must be >= 0");
            g.beta = v;
        });
        c.game = g;
    }

    if (const toml::table* t = r.table(root, "run")) {
        r.allow_keys(*t, {"lambda", "rounds", "stop_delta", "record_stability_gap"}, "[run]");
        if (const toml::node* n = t->get("lambda")) {
            if (n->is_string()) {
                if (n->as_string()->get() != "auto") r.fail(n, "lambda must be a positive number or \"auto\"");
            } else {
                r.number(t, "lambda", [&](double v, const toml::node* node) {
                    if (!(v > 0.0)) r.fail(node, "lambda must be positive");
                    c.lambda = v;
                });
            }
        }
        r.integer(t, "rounds", positive_int(c.rounds, "rounds"));
        r.number(t, "stop_delta", [&](double v, const toml::node* n) {
            if (v < 0.0) r.fail(n, "stop_delta must be >= 0");
            c.stop_delta = v;
        });
        r.boolean(t, "record_stability_gap", c.record_stability_gap);
    }

    if (const toml::table* t = r.table(root, "finite")) {
        r.allow_keys(*t, {"m_schedule", "solver", "sigma", "ridge", "reward_noise"}, "[finite]");
        if (const toml::node* n = t->get("m_schedule")) {
            if (n->is_string()) {
                require_file(r, n, c.base_dir, n->as_string()->get());
                c.m_schedule_file = n->as_string()->get();
            } else if (n->is_integer()) {
                c.m_schedule = {static_cast<long>(n->as_integer()->get())};
            } else if (n->is_array()) {
                c.m_schedule.clear();
                for (const toml::node& e : *n->as_array()) {
                    if (!e.is_integer()) r.fail(&e, "m_schedule entries must be integers");
                    c.m_schedule.push_back(static_cast<long>(e.as_integer()->get()));
                }
                if (c.m_schedule.empty()) r.fail(n, "m_schedule must not be empty");
            } else {
                r.fail(n, "m_schedule must be an integer, an array of integers or a file path");
            }
        }
        r.string(t, "solver", [&](const std::string& v, const toml::node* n) {
            require_one_of(r, n, v, {"exact-saddle", "primal-dual"}, "solver");
            c.finite_solver = v;
        });
        r.string(t, "sigma", [&](const std::string& v, const toml::node* n) {
            require_one_of(r, n, v, {"exact", "estimated"}, "sigma");
            c.sigma_mode = v;
        });
        r.number(t, "ridge", [&](double v, const toml::node* n) {
            if (v < 0.0) r.fail(n, "ridge must be >= 0");
            c.ridge = v;
        });
        r.number(t, "reward_noise", [&](double v, const toml::node* n) {
            if (v < 0.0) r.fail(n, "reward_noise must be >= 0");
            c.reward_noise = v;
        });
    }

    if (const toml::table* t = r.table(root, "primal_dual")) {
        r.allow_keys(*t, {"T", "K", "eta_omega", "eta_pi", "b_cov", "dataset", "samples"}, "[primal_dual]");
        r.integer(t, "T", positive_int(c.pd_T, "T"));
        r.integer(t, "K", positive_int(c.pd_K, "K"));
        auto positive = [&](std::optional<double>& out, const char* name) {
            return [&out, &r, name](double v, const toml::node* n) {
                if (!(v > 0.0)) r.fail(n, fmt::format("{} must be positive", name));
                out = v;
            };
        };
        r.number(t, "eta_omega", positive(c.eta_omega, "eta_omega"));
        r.number(t, "eta_pi", positive(c.eta_pi, "eta_pi"));
        r.number(t, "b_cov", positive(c.b_cov, "b_cov"));
        r.string(t, "dataset", file_key(c.dataset_file));
        r.integer(t, "samples", [&](int64_t v, const toml::node* n) {
            if (v < 1) r.fail(n, "samples must be positive");
            c.pd_samples = static_cast<long>(v);
        });
    }

    if (const toml::table* t = r.table(root, "stackelberg")) {
        r.allow_keys(*t, {"mode", "policy_pairs", "kernel_pairs"}, "[stackelberg]");
        r.string(t, "mode", [&](const std::string& v, const toml::node* n) {
            require_one_of(r, n, v, {"retrain", "check"}, "mode");
            c.stackelberg_mode = v;
        });
        r.integer(t, "policy_pairs", positive_int(c.policy_pairs, "policy_pairs"));
        r.integer(t, "kernel_pairs", positive_int(c.kernel_pairs, "kernel_pairs"));
    }

    if ((c.driver == Driver::stackelberg || c.response_kind == "stackelberg") && !c.game) {
        r.fail(nullptr, "a [game] table is required for the stackelberg driver or response");
    }
    return c;
}

std::string serialize(const ExperimentConfig& c) {
    toml::table root;
    root.insert("driver", to_string(c.driver));
    root.insert("seed", static_cast<int64_t>(c.seed));

    toml::table mdp;
    mdp.insert("preset", c.preset);
    mdp.insert("preset_seed", static_cast<int64_t>(c.preset_seed));
    if (c.preset == "files") {
        mdp.insert("num_states", c.num_states);
        mdp.insert("num_actions", c.num_actions);
        mdp.insert("discount", c.discount);
    }
    if (!c.start_dist_file.empty()) mdp.insert("start_dist", c.start_dist_file);
    if (!c.features_file.empty()) mdp.insert("features", c.features_file);
    if (!c.reward_file.empty()) mdp.insert("reward", c.reward_file);
    if (!c.kernel_file.empty()) mdp.insert("kernel", c.kernel_file);
    root.insert("mdp", std::move(mdp));

    toml::table resp;
    if (!c.response_kind.empty()) resp.insert("kind", c.response_kind);
    if (c.eps_theta) resp.insert("eps_theta", *c.eps_theta);
    if (c.eps_mu) resp.insert("eps_mu", *c.eps_mu);
    resp.insert("directions_seed", static_cast<int64_t>(c.directions_seed));
    if (!c.theta_dir_file.empty()) resp.insert("theta_dir", c.theta_dir_file);
    if (!c.mu_dir_file.empty()) resp.insert("mu_dir", c.mu_dir_file);
    root.insert("response", std::move(resp));

    if (c.game) {
        toml::table g;
        if (!c.game->file.empty()) g.insert("file", c.game->file);
        g.insert("seed", static_cast<int64_t>(c.game->seed));
        g.insert("num_states", c.game->num_states);
        g.insert("leader_actions", c.game->leader_actions);
        g.insert("follower_actions", c.game->follower_actions);
        g.insert("discount", c.game->discount);
        g.insert("beta", c.game->beta);
        root.insert("game", std::move(g));
    }

    toml::table run;
    if (c.lambda) run.insert("lambda", *c.lambda);
    else run.insert("lambda", "auto");
    run.insert("rounds", c.rounds);
    run.insert("stop_delta", c.stop_delta);
    run.insert("record_stability_gap", c.record_stability_gap);
    root.insert("run", std::move(run));

    toml::table fin;
    if (!c.m_schedule_file.empty()) {
        fin.insert("m_schedule", c.m_schedule_file);
    } else {
        toml::array ms;
        for (long m : c.m_schedule) ms.push_back(static_cast<int64_t>(m));
        fin.insert("m_schedule", std::move(ms));
    }
    fin.insert("solver", c.finite_solver);
    fin.insert("sigma", c.sigma_mode);
    fin.insert("ridge", c.ridge);
    fin.insert("reward_noise", c.reward_noise);
    root.insert("finite", std::move(fin));

    toml::table pd;
    pd.insert("T", c.pd_T);
    pd.insert("K", c.pd_K);
    if (c.eta_omega) pd.insert("eta_omega", *c.eta_omega);
    if (c.eta_pi) pd.insert("eta_pi", *c.eta_pi);
    if (c.b_cov) pd.insert("b_cov", *c.b_cov);
    if (!c.dataset_file.empty()) pd.insert("dataset", c.dataset_file);
    pd.insert("samples", static_cast<int64_t>(c.pd_samples));
    root.insert("primal_dual", std::move(pd));

    toml::table st;
    st.insert("mode", c.stackelberg_mode);
    st.insert("policy_pairs", c.policy_pairs);
    st.insert("kernel_pairs", c.kernel_pairs);
    root.insert("stackelberg", std::move(st));

    std::ostringstream out;
    out << root << '\n';
    return out.str();
}

Problem load_problem(const ExperimentConfig& c) {
    Problem p;
    try {
        if (c.response_kind == "stackelberg" || c.driver == Driver::stackelberg) {
            const GameConfig& gc = *c.game;
            StackelbergGame game;
            if (!gc.file.empty()) {
                game = load_game(resolve_path(c, gc.file));
            } else {
                CounterRng rng(gc.seed, RngModule::instances);
                game = random_game(gc.num_states, gc.leader_actions, gc.follower_actions, gc.discount, gc.beta, rng);
            }
            auto issues = validate_game(game);
            if (!issues.empty()) throw ConfigError("invalid game: " + issues.front());
            auto shared = std::make_shared<const StackelbergGame>(game);
            p.spec = tabular_spec(game.num_states, game.leader_actions, game.discount, game.start_dist);
            p.game = shared;
            p.response = std::make_shared<const ResponseMap>(stackelberg_response_map(shared, p.spec));
            p.base = p.response->base_params();
            return p;
        }

        std::optional<ResponseMap> preset_response;
        if (c.preset == "files") {
            if (c.num_states < 1 || c.num_actions < 1 || c.start_dist_file.empty() || c.reward_file.empty() ||
                c.kernel_file.empty()) {
                throw ConfigError("preset \"files\" needs num_states, num_actions, discount, start_dist, reward and kernel");
            }
            Vec rho = read_vector_csv(resolve_path(c, c.start_dist_file));
            const int SA = c.num_states * c.num_actions;
            Mat phi = c.features_file.empty() ? Mat(Mat::Identity(SA, SA))
                                              : read_matrix_csv(resolve_path(c, c.features_file)).values;
            p.spec = make_spec(c.num_states, c.num_actions, c.discount, rho, phi);
            Vec reward = read_vector_csv(resolve_path(c, c.reward_file));
            Mat kernel = read_matrix_csv(resolve_path(c, c.kernel_file)).values;
            if (reward.size() != SA) throw ConfigError(fmt::format("reward has {} entries, expected {}", reward.size(), SA));
            if (kernel.rows() != c.num_states || kernel.cols() != SA) {
                throw ConfigError(fmt::format("kernel must be {} x {}", c.num_states, SA));
            }
            p.base = params_from_model(reward, kernel, p.spec);
            auto issues = validate_params(p.base, p.spec);
            if (!issues.empty()) throw ConfigError("invalid model: " + issues.front());
        } else {
            Instance inst = c.preset == "reference"      ? reference_instance()
                            : c.preset == "single-state" ? single_state_instance()
                                                         : random_certified_instance(c.preset_seed);
            p.spec = inst.spec;
            p.base = inst.base;
            preset_response = inst.response;
        }

        bool overrides = c.eps_theta || c.eps_mu || !c.theta_dir_file.empty() || c.directions_seed != 7;
        if (c.response_kind.empty() && preset_response && !overrides) {
            p.response = std::make_shared<const ResponseMap>(*preset_response);
            return p;
        }
        std::string kind = c.response_kind.empty()
                               ? (preset_response ? to_string(preset_response->kind()) : std::string("constant"))
                               : c.response_kind;
        if (kind == "constant") {
            p.response = std::make_shared<const ResponseMap>(ResponseMap::constant(p.base, p.spec));
            return p;
        }
        double et = c.eps_theta.value_or(preset_response ? preset_response->eps_theta() : 0.0);
        double em = c.eps_mu.value_or(preset_response ? preset_response->eps_mu() : 0.0);
        AffineDirections dirs;
        if (!c.theta_dir_file.empty()) {
            dirs.theta_dir = read_matrix_csv(resolve_path(c, c.theta_dir_file)).values;
            dirs.mu_dir = read_matrix_csv(resolve_path(c, c.mu_dir_file)).values;
            const int D = p.spec.feature_dim(), SA = p.spec.num_pairs(), S = p.spec.num_states;
            if (dirs.theta_dir.rows() != D || dirs.theta_dir.cols() != SA || dirs.mu_dir.rows() != S * D ||
                dirs.mu_dir.cols() != SA) {
                throw ConfigError("direction matrices have the wrong shape");
            }
        } else {
            CounterRng rng(c.directions_seed, RngModule::instances);
            dirs = random_directions(p.spec, rng);
        }
        p.response = std::make_shared<const ResponseMap>(
            kind == "affine" ? ResponseMap::affine(p.base, et, em, dirs, p.spec)
                             : ResponseMap::policy_factored(p.base, et, em, dirs, p.spec));
    } catch (const NumericalError& e) {
        throw ConfigError(std::string("invalid problem data: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid problem data: ") + e.what());
    }
    return p;
}

std::string trace_record_json(const TraceRecord& rec) {
    std::string s = fmt::format("{{\"round\":{},\"d\":{},\"policy\":[", rec.round, json_vector(rec.d));
    for (Eigen::Index i = 0; i < rec.policy.rows(); ++i) {
        s += (i ? "," : "") + json_vector(rec.policy.row(i).transpose());
    }
    s += fmt::format("],\"step_norm\":{},\"dist_to_ref\":{},\"reg_objective\":{},\"perf_value\":{},\"stability_gap\":{},"
                     "\"rng_digest\":\"{:016x}\"}}",
                     json_number(rec.step_norm), rec.dist_to_ref ? json_number(*rec.dist_to_ref) : "null",
                     json_number(rec.reg_objective), json_number(rec.perf_value),
                     rec.stability_gap ? json_number(*rec.stability_gap) : "null", rec.rng_digest);
    return s;
}

void TraceSink::emit(const TraceRecord& record) {
    out_ << trace_record_json(record) << '\n';
    out_.flush();
    if (!out_) throw IoError("trace write failed");
}

void emit_trace(const std::vector<TraceRecord>& records, std::ostream& sink) {
    TraceSink s(sink);
    for (const auto& r : records) s.emit(r);
    sink.flush();
    if (!sink) throw IoError("trace write failed");
}

int run_command(const ExperimentConfig& config, const fs::path& out_dir) {
    std::optional<Prepared> prep;
    try {
        prep.emplace(prepare(config));
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return exit_config;
    } catch (const NumericalError& e) {
        spdlog::error("numerical failure while loading: {}", e.what());
        return exit_numerical;
    }
    try {
        fs::create_directories(out_dir);
        write_manifest(config, *prep, out_dir);
        RunContext ctx{config, *prep, out_dir};
        switch (config.driver) {
            case Driver::certify: run_certify(ctx); break;
            case Driver::solve: run_solve(ctx); break;
            case Driver::retrain_exact: run_retrain_exact(ctx, "retrain-exact"); break;
            case Driver::retrain_finite: run_retrain_finite(ctx); break;
            case Driver::primal_dual: run_primal_dual(ctx); break;
            case Driver::stackelberg:
                if (config.stackelberg_mode == "check") run_stackelberg_checks(ctx);
                else run_retrain_exact(ctx, "stackelberg");
                break;
            case Driver::diagnose: run_diagnose(ctx); break;
        }
    } catch (const ConfigError& e) {
        spdlog::error("config error: {}", e.what());
        return exit_config;
    } catch (const NumericalError& e) {
        spdlog::error("numerical failure: {}", e.what());
        return exit_numerical;
    } catch (const IoError& e) {
        spdlog::error("i/o failure: {}", e.what());
        return exit_numerical;
    } catch (const fs::filesystem_error& e) {
        spdlog::error("i/o failure: {}", e.what());
        return exit_numerical;
    }
    return exit_ok;
}

int run_many(const std::vector<std::pair<ExperimentConfig, fs::path>>& jobs) {
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PERF_LMDP_THREADS")) {
        int cap = std::atoi(env);
        if (cap >= 1) threads = std::min(threads, static_cast<unsigned>(cap));
    }
    threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<size_t>(1, jobs.size())));
    std::vector<int> codes(jobs.size(), exit_ok);
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next++; i < jobs.size(); i = next++) codes[i] = run_command(jobs[i].first, jobs[i].second);
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    int worst = exit_ok;
    for (int code : codes) worst = std::max(worst, code);
    return worst;
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
    return hex;
}

}  // namespace plmdp
