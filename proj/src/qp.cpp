#include "perf_lmdp/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace plmdp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

Vec clip(const Vec& v, const Vec& l, const Vec& u) { return v.cwiseMax(l).cwiseMin(u); }

bool is_equality(double l, double u) { return std::abs(u - l) < 1e-14 * std::max(1.0, std::abs(l)); }

Vec rho_vector(const QpProblem& p, double rho) {
    Vec r(p.A.rows());
    for (int i = 0; i < r.size(); ++i) {
        if (p.l(i) == -kInf && p.u(i) == kInf) r(i) = 1e-6;
        else if (is_equality(p.l(i), p.u(i))) r(i) = 1e3 * rho;
        else r(i) = rho;
    }
    return r;
}

// Solves the equality-constrained KKT system on the active rows; returns false on breakdown.
bool polish(const QpProblem& p, const Vec& z_admm, const Vec& y_admm, Vec& x_out, Vec& y_out) {
    const int n = static_cast<int>(p.P.rows());
    const int m = static_cast<int>(p.A.rows());
    std::vector<int> active;
    Vec target(m);
    for (int i = 0; i < m; ++i) {
        bool eq = is_equality(p.l(i), p.u(i));
        bool lower = p.l(i) > -kInf && (z_admm(i) - p.l(i) < -y_admm(i));
        bool upper = p.u(i) < kInf && (p.u(i) - z_admm(i) < y_admm(i));
        if (eq) target(i) = p.l(i);
        else if (lower) target(i) = p.l(i);
        else if (upper) target(i) = p.u(i);
        if (eq || lower || upper) active.push_back(i);
    }
    const int k = static_cast<int>(active.size());
    Mat K = Mat::Zero(n + k, n + k);
    Vec rhs(n + k);
    K.topLeftCorner(n, n) = p.P;
    rhs.head(n) = -p.q;
    for (int j = 0; j < k; ++j) {
        K.block(n + j, 0, 1, n) = p.A.row(active[j]);
        K.block(0, n + j, n, 1) = p.A.row(active[j]).transpose();
        rhs(n + j) = target(active[j]);
    }
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(K);
    Vec sol = cod.solve(rhs);
    for (int it = 0; it < 3; ++it) sol += cod.solve(rhs - K * sol);
    if (!sol.allFinite()) return false;
    x_out = sol.head(n);
    y_out = Vec::Zero(m);
    for (int j = 0; j < k; ++j) y_out(active[j]) = sol(n + j);
    return true;
}

}  // namespace

double qp_kkt_error(const QpProblem& p, const Vec& x, const Vec& y) {
    Vec Ax = p.A * x;
    double prim = inf_norm(Ax - clip(Ax, p.l, p.u));
    double dual = inf_norm(p.P * x + p.q + p.A.transpose() * y);
    double sign = 0.0, comp = 0.0;
    for (int i = 0; i < y.size(); ++i) {
        if (y(i) < 0.0) {
            if (p.l(i) == -kInf) sign = std::max(sign, -y(i));
            else comp = std::max(comp, std::abs(y(i) * (Ax(i) - p.l(i))));
        } else if (y(i) > 0.0) {
            if (p.u(i) == kInf) sign = std::max(sign, y(i));
            else comp = std::max(comp, std::abs(y(i) * (p.u(i) - Ax(i))));
        }
    }
    return std::max({prim, dual, sign, comp});
}

QpResult solve_qp(const QpProblem& p, const QpSettings& s, const Vec* x0, const Vec* y0) {
    const int n = static_cast<int>(p.P.rows());
    const int m = static_cast<int>(p.A.rows());
    Vec x = x0 ? *x0 : Vec::Zero(n);
    Vec y = y0 ? *y0 : Vec::Zero(m);
    Vec z = clip(p.A * x, p.l, p.u);

    double rho = s.rho;
    Vec rho_vec = rho_vector(p, rho);
    auto factor = [&]() {
        Mat K = p.P + s.sigma * Mat::Identity(n, n) + p.A.transpose() * rho_vec.asDiagonal() * p.A;
        return Eigen::LLT<Mat>(K);
    };
    Eigen::LLT<Mat> llt = factor();

    QpResult result;
    double kkt_target = s.eps_abs * 100.0;
    double next_polish = 1e-3;
    auto try_polish = [&]() {
        Vec xp, yp;
        if (!polish(p, z, y, xp, yp)) return false;
        double after = qp_kkt_error(p, xp, yp);
        if (after <= kkt_target && after < qp_kkt_error(p, x, y)) {
            result.x = xp;
            result.y = yp;
            result.polished = true;
            result.converged = true;
            return true;
        }
        return false;
    };

    for (int iter = 1; iter <= s.max_iter; ++iter) {
        Vec rhs = s.sigma * x - p.q + p.A.transpose() * (rho_vec.cwiseProduct(z) - y);
        Vec x_tilde = llt.solve(rhs);
        Vec z_tilde = p.A * x_tilde;
        Vec x_next = s.alpha * x_tilde + (1.0 - s.alpha) * x;
        Vec z_relaxed = s.alpha * z_tilde + (1.0 - s.alpha) * z;
        Vec z_next = clip(z_relaxed + y.cwiseQuotient(rho_vec), p.l, p.u);
        y += rho_vec.cwiseProduct(z_relaxed - z_next);
        x = std::move(x_next);
        z = std::move(z_next);
        result.iterations = iter;

        if (iter % s.check_every != 0 && iter != s.max_iter) continue;
        Vec Ax = p.A * x;
        Vec Px = p.P * x;
        Vec Aty = p.A.transpose() * y;
        double prim = inf_norm(Ax - z);
        double dual = inf_norm(Px + p.q + Aty);
        result.primal_residual = prim;
        result.dual_residual = dual;
        double eps_prim = s.eps_abs + s.eps_rel * std::max(inf_norm(Ax), inf_norm(z));
        double eps_dual = s.eps_abs + s.eps_rel * std::max({inf_norm(Px), inf_norm(Aty), inf_norm(p.q)});
        if (prim <= eps_prim && dual <= eps_dual) {
            result.converged = true;
            break;
        }
        if (s.polish && std::max(prim, dual) <= next_polish) {
            next_polish = std::max(prim, dual) * 0.1;
            if (try_polish()) return result;
        }
        if (s.adaptive_rho && iter % (s.check_every * 8) == 0) {
            double prim_scale = std::max({inf_norm(Ax), inf_norm(z), 1e-30});
            double dual_scale = std::max({inf_norm(Px), inf_norm(Aty), inf_norm(p.q), 1e-30});
            double ratio = std::sqrt((prim / prim_scale) / std::max(dual / dual_scale, 1e-30));
            double candidate = std::clamp(rho * ratio, 1e-6, 1e6);
            if (candidate > 5.0 * rho || candidate < 0.2 * rho) {
                rho = candidate;
                rho_vec = rho_vector(p, rho);
                llt = factor();
            }
        }
    }
    result.x = x;
    result.y = y;
    if (s.polish) try_polish();
    return result;
}

}  // namespace plmdp
