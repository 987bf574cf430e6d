#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "perf_lmdp/mdp_core.hpp"

namespace plmdp {

struct StackelbergGame;

enum class ResponseKind { constant, affine, policy_factored, stackelberg };

std::string to_string(ResponseKind kind);
ResponseKind response_kind_from_string(const std::string& name);

/// Linear directions of an affine response. theta_dir is D x SA; mu_dir is (S*D) x SA
/// and maps d to vec(delta mu) in column-major order of the S x D matrix.
/// Both are expected to have spectral norm at most 1.
struct AffineDirections {
    Mat theta_dir;
    Mat mu_dir;
};

/// Performative environment d -> (theta_d, mu_d).
class ResponseMap {
public:
    static ResponseMap constant(MdpParams base, LinearMdpSpec spec);
    static ResponseMap affine(MdpParams base, double eps_theta, double eps_mu, AffineDirections dirs,
                              LinearMdpSpec spec);
    /// d is first mapped to its policy and then to that policy's occupancy under `base`.
    static ResponseMap policy_factored(MdpParams base, double eps_theta, double eps_mu, AffineDirections dirs,
                                       LinearMdpSpec spec);
    static ResponseMap stackelberg(std::shared_ptr<const StackelbergGame> game, LinearMdpSpec spec);

    MdpParams apply(const Vec& d) const;

    ResponseKind kind() const { return kind_; }
    double eps_theta() const { return eps_theta_; }
    double eps_mu() const { return eps_mu_; }
    const MdpParams& base_params() const { return base_; }
    const LinearMdpSpec& spec() const { return spec_; }
    const AffineDirections& directions() const { return dirs_; }
    const std::shared_ptr<const StackelbergGame>& game() const { return game_; }
    /// True when declared sensitivities are not exact guarantees (stackelberg map on non-tabular features).
    bool heuristic_sensitivity() const { return heuristic_; }

private:
    ResponseMap() = default;
    MdpParams apply_affine(const Vec& d) const;

    ResponseKind kind_ = ResponseKind::constant;
    double eps_theta_ = 0.0;
    double eps_mu_ = 0.0;
    MdpParams base_;
    AffineDirections dirs_;
    LinearMdpSpec spec_;
    std::shared_ptr<const StackelbergGame> game_;
    bool heuristic_ = false;
};

struct SensitivityEstimate {
    double eps_theta_hat = 0.0;
    double eps_mu_hat = 0.0;
};

/// Max Lipschitz ratios over the probe pairs; mu differences in Frobenius norm.
SensitivityEstimate measure_sensitivity(const ResponseMap& map, const std::vector<std::pair<Vec, Vec>>& probe_pairs);

/// Radially rescales theta into the sqrt(D) ball, projects every transition column onto the
/// simplex and refits mu on the feature span. Valid input is returned unchanged.
MdpParams project_params(const Vec& raw_theta, const Mat& raw_mu, const LinearMdpSpec& spec);

/// Euclidean projection onto the probability simplex (sort-based).
Vec project_simplex(const Vec& v);

/// Pseudoinverse via SVD with cutoff 1e-10 * sigma_max.
Mat pseudo_inverse(const Mat& m);

/// V^pi_pi(rho) for pi = policy_from_occupancy(d) and params = response(d).
double performative_value(const Vec& d, const ResponseMap& response, const LinearMdpSpec& spec);

}  // namespace plmdp
