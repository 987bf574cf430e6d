#include "perf_lmdp/stackelberg.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <toml.hpp>

#include "perf_lmdp/csv_io.hpp"
#include "perf_lmdp/errors.hpp"
#include "perf_lmdp/instances.hpp"
#include "perf_lmdp/rng.hpp"

namespace plmdp {

double StackelbergGame::reward_scale() const {
    return std::max(leader_reward.cwiseAbs().maxCoeff(), follower_reward.cwiseAbs().maxCoeff());
}

std::vector<std::string> validate_game(const StackelbergGame& g) {
    std::vector<std::string> report;
    if (g.num_states <= 0 || g.leader_actions <= 0 || g.follower_actions <= 0) {
        report.push_back("game sizes must be positive");
        return report;
    }
    const int n = g.num_states * g.leader_actions * g.follower_actions;
    if (g.leader_reward.size() != n) report.push_back(fmt::format("leader reward must have {} entries", n));
    if (g.follower_reward.size() != n) report.push_back(fmt::format("follower reward must have {} entries", n));
    if (g.transition.rows() != n || g.transition.cols() != g.num_states) {
        report.push_back(fmt::format("transition must be {} x {}", n, g.num_states));
    } else {
        for (int k = 0; k < n; ++k) {
            if (g.transition.row(k).minCoeff() < 0.0 || std::abs(g.transition.row(k).sum() - 1.0) > 1e-9)
                report.push_back(fmt::format("transition row {} is not a probability vector", k));
        }
    }
    if (!(g.discount >= 0.0 && g.discount < 1.0)) report.push_back("discount must be in [0, 1)");
    if (!(g.softmax_beta >= 0.0)) report.push_back("softmax_beta must be nonnegative");
    if (g.start_dist.size() != g.num_states || g.start_dist.minCoeff() < 0.0 ||
        std::abs(g.start_dist.sum() - 1.0) > 1e-12)
        report.push_back("start_dist must be a probability vector over states");
    return report;
}

AgentMdp build_follower_mdp(const StackelbergGame& g, const Policy& leader_policy) {
    const int S = g.num_states, A1 = g.leader_actions, A2 = g.follower_actions;
    AgentMdp m{Mat::Zero(S, A2), Mat::Zero(S * A2, S)};
    for (int s = 0; s < S; ++s)
        for (int a1 = 0; a1 < A1; ++a1) {
            double w = leader_policy(s, a1);
            for (int a2 = 0; a2 < A2; ++a2) {
                int k = g.flat(s, a1, a2);
                m.reward(s, a2) += w * g.follower_reward(k);
                m.transition.row(s * A2 + a2) += w * g.transition.row(k);
            }
        }
    return m;
}

AgentMdp induced_leader_mdp(const StackelbergGame& g, const Policy& follower_policy) {
    const int S = g.num_states, A1 = g.leader_actions, A2 = g.follower_actions;
    AgentMdp m{Mat::Zero(S, A1), Mat::Zero(S * A1, S)};
    for (int s = 0; s < S; ++s)
        for (int a1 = 0; a1 < A1; ++a1)
            for (int a2 = 0; a2 < A2; ++a2) {
                double w = follower_policy(s, a2);
                int k = g.flat(s, a1, a2);
                m.reward(s, a1) += w * g.leader_reward(k);
                m.transition.row(s * A1 + a1) += w * g.transition.row(k);
            }
    return m;
}

SoftmaxResponse follower_softmax_response(const AgentMdp& mdp, double beta, double gamma) {
    if (beta < 0.0) throw std::invalid_argument("softmax temperature must be nonnegative");
    const int S = static_cast<int>(mdp.reward.rows()), A = static_cast<int>(mdp.reward.cols());
    SoftmaxResponse out;
    Mat Q = mdp.reward;
    const double target = 1e-10;
    for (int it = 0; it < 1000000; ++it) {
        Vec V = Q.rowwise().maxCoeff();
        Mat next(S, A);
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) next(s, a) = mdp.reward(s, a) + gamma * mdp.transition.row(s * A + a).dot(V);
        double change = (next - Q).cwiseAbs().maxCoeff();
        Q = std::move(next);
        out.sup_errors.push_back(change);
        if (change == 0.0 || change * gamma / (1.0 - gamma) <= target) break;
        if (it == 999999) throw NumericalError("value iteration did not converge");
    }
    out.q_values = Q;
    out.policy.resize(S, A);
    for (int s = 0; s < S; ++s) {
        double top = Q.row(s).maxCoeff();
        Eigen::RowVectorXd w = (beta * (Q.row(s).array() - top)).exp().matrix();
        out.policy.row(s) = w / w.sum();
    }
    return out;
}

MdpParams fit_linear_params(const AgentMdp& mdp, const LinearMdpSpec& spec) {
    const int S = spec.num_states, A = spec.num_actions;
    Vec reward(S * A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) reward(spec.index(s, a)) = mdp.reward(s, a);
    Mat kernel = mdp.transition.transpose();
    MdpParams p = params_from_model(reward, kernel, spec);
    double res_r = (spec.features * p.theta - reward).cwiseAbs().maxCoeff();
    double res_p = (p.mu * spec.features.transpose() - kernel).cwiseAbs().maxCoeff();
    if (res_r > 1e-8 || res_p > 1e-8) {
        throw NumericalError(fmt::format("fit-residual: features cannot represent the induced MDP "
                                         "(reward {:.3e}, transition {:.3e})", res_r, res_p));
    }
    return project_params(p.theta, p.mu, spec);
}

MdpParams stackelberg_params(const StackelbergGame& g, const Policy& leader_policy, const LinearMdpSpec& spec) {
    AgentMdp follower = build_follower_mdp(g, leader_policy);
    SoftmaxResponse response = follower_softmax_response(follower, g.softmax_beta, g.discount);
    return fit_linear_params(induced_leader_mdp(g, response.policy), spec);
}

ResponseMap stackelberg_response_map(std::shared_ptr<const StackelbergGame> game, const LinearMdpSpec& spec) {
    return ResponseMap::stackelberg(std::move(game), spec);
}

SensitivityBounds follower_sensitivity_bounds(const StackelbergGame& g) {
    double R = g.reward_scale();
    double c = 2.0 * std::sqrt(2.0) * g.softmax_beta * g.leader_actions * std::pow(g.follower_actions, 1.5) /
               std::pow(1.0 - g.discount, 2);
    return {c * R * R, c * R};
}

SensitivityBounds multi_follower_sensitivity_bounds(double beta, int followers, int actions, double reward_scale,
                                                    double gamma) {
    double c = 3.0 * std::sqrt(2.0) * beta * followers * std::pow(actions, 1.5 * followers + 1.0) /
               std::pow(1.0 - gamma, 2);
    return {c * reward_scale * reward_scale, c * reward_scale};
}

SensitivityCheckReport lemma1_sensitivity_check(const StackelbergGame& g, const Policy& pi1, const Policy& pi1_tilde) {
    SensitivityCheckReport rep;
    for (int s = 0; s < g.num_states; ++s) rep.delta = std::max(rep.delta, (pi1.row(s) - pi1_tilde.row(s)).lpNorm<1>());
    auto leader = [&](const Policy& pi) {
        SoftmaxResponse f = follower_softmax_response(build_follower_mdp(g, pi), g.softmax_beta, g.discount);
        return induced_leader_mdp(g, f.policy);
    };
    AgentMdp m1 = leader(pi1), m2 = leader(pi1_tilde);
    rep.max_reward_dev = (m1.reward - m2.reward).cwiseAbs().maxCoeff();
    rep.max_transition_dev = (m1.transition - m2.transition).cwiseAbs().maxCoeff();
    SensitivityBounds b = follower_sensitivity_bounds(g);
    rep.reward_bound = rep.delta * b.reward_per_delta;
    rep.transition_bound = rep.delta * b.transition_per_delta;
    rep.reward_pass = rep.max_reward_dev <= rep.reward_bound + 1e-12;
    rep.transition_pass = rep.max_transition_dev <= rep.transition_bound + 1e-12;
    return rep;
}

OccupancyL1Report occupancy_l1_perturbation_check(const Mat& kernel, const Mat& kernel_tilde, const Policy& policy,
                                                  const Vec& rho, double gamma) {
    const int S = static_cast<int>(policy.rows()), A = static_cast<int>(policy.cols());
    LinearMdpSpec spec = tabular_spec(S, A, gamma, rho);
    Vec reward = Vec::Zero(S * A);
    Vec d1 = occupancy_from_policy(policy, params_from_model(reward, kernel, spec), spec);
    Vec d2 = occupancy_from_policy(policy, params_from_model(reward, kernel_tilde, spec), spec);
    OccupancyL1Report rep;
    for (int j = 0; j < kernel.cols(); ++j)
        rep.kernel_deviation = std::max(rep.kernel_deviation, (kernel.col(j) - kernel_tilde.col(j)).lpNorm<1>());
    rep.l1_distance = (d1 - d2).lpNorm<1>();
    rep.bound = rep.kernel_deviation * gamma / std::pow(1.0 - gamma, 2);
    rep.pass = rep.l1_distance <= rep.bound + 1e-12;
    return rep;
}

StackelbergGame random_game(int S, int A1, int A2, double discount, double beta, CounterRng& rng) {
    StackelbergGame g;
    g.num_states = S;
    g.leader_actions = A1;
    g.follower_actions = A2;
    const int n = S * A1 * A2;
    g.leader_reward.resize(n);
    g.follower_reward.resize(n);
    for (int k = 0; k < n; ++k) g.leader_reward(k) = rng.uniform(-1.0, 1.0);
    for (int k = 0; k < n; ++k) g.follower_reward(k) = rng.uniform(-1.0, 1.0);
    g.transition.resize(n, S);
    for (int k = 0; k < n; ++k) g.transition.row(k) = random_simplex(S, rng).transpose();
    g.discount = discount;
    g.softmax_beta = beta;
    g.start_dist = Vec::Constant(S, 1.0 / S);
    return g;
}

namespace {

template <class T>
T require(const toml::table& tbl, const char* key, const std::filesystem::path& path) {
    auto node = tbl[key];
    if (!node) throw ConfigError(fmt::format("{}: missing field '{}'", path.string(), key));
    auto v = node.value<T>();
    if (!v) {
        auto where = node.node()->source().begin;
        throw ConfigError(fmt::format("{}:{}: field '{}' has the wrong type", path.string(), where.line, key));
    }
    return *v;
}

}  // namespace

StackelbergGame load_game(const std::filesystem::path& path) {
    toml::table tbl;
    try {
        tbl = toml::parse_file(path.string());
    } catch (const toml::parse_error& err) {
        throw ConfigError(fmt::format("{}:{}: {}", path.string(), err.source().begin.line, err.description()));
    }
    StackelbergGame g;
    g.num_states = static_cast<int>(require<int64_t>(tbl, "num_states", path));
    g.leader_actions = static_cast<int>(require<int64_t>(tbl, "leader_actions", path));
    g.follower_actions = static_cast<int>(require<int64_t>(tbl, "follower_actions", path));
    g.discount = require<double>(tbl, "discount", path);
    g.softmax_beta = require<double>(tbl, "softmax_beta", path);
    auto base = path.parent_path();
    g.leader_reward = read_vector_csv(base / require<std::string>(tbl, "leader_reward", path));
    g.follower_reward = read_vector_csv(base / require<std::string>(tbl, "follower_reward", path));
    g.transition = read_matrix_csv(base / require<std::string>(tbl, "transition", path)).values;
    if (auto arr = tbl["start_dist"].as_array()) {
        g.start_dist.resize(static_cast<Eigen::Index>(arr->size()));
        for (size_t i = 0; i < arr->size(); ++i) g.start_dist(static_cast<Eigen::Index>(i)) = arr->get(i)->value<double>().value_or(0.0);
    } else {
        g.start_dist = Vec::Constant(g.num_states, 1.0 / g.num_states);
    }
    auto report = validate_game(g);
    if (!report.empty()) throw ConfigError(path.string() + ": " + report.front());
    return g;
}

void save_game(const StackelbergGame& g, const std::filesystem::path& path) {
    auto base = path.parent_path();
    auto stem = path.stem().string();
    write_vector_csv(base / (stem + "_r1.csv"), g.leader_reward, "leader_reward");
    write_vector_csv(base / (stem + "_r2.csv"), g.follower_reward, "follower_reward");
    write_matrix_csv(base / (stem + "_P.csv"), g.transition, "transition");
    toml::array start;
    for (int s = 0; s < g.num_states; ++s) start.push_back(g.start_dist(s));
    toml::table tbl{
        {"num_states", g.num_states},
        {"leader_actions", g.leader_actions},
        {"follower_actions", g.follower_actions},
        {"discount", g.discount},
        {"softmax_beta", g.softmax_beta},
        {"start_dist", start},
        {"leader_reward", stem + "_r1.csv"},
        {"follower_reward", stem + "_r2.csv"},
        {"transition", stem + "_P.csv"},
    };
    std::ofstream out(path);
    out << tbl << "\n";
}

}  // namespace plmdp
