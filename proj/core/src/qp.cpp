#include "morphmesh/qp.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "morphmesh/errors.hpp"

namespace morphmesh {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kInf = 1e20;

struct Stacked {
  MatrixXd a;  // [constraint; I]
  VectorXd l;
  VectorXd u;
};

Stacked stack(const QPProblem& p) {
  const int n = p.size();
  const auto mc = p.constraint.rows();
  Stacked s;
  s.a.resize(mc + n, n);
  if (mc > 0) s.a.topRows(mc) = p.constraint;
  s.a.bottomRows(n).setIdentity();
  s.l.resize(mc + n);
  s.u.resize(mc + n);
  if (mc > 0) {
    s.l.head(mc) = p.lower;
    s.u.head(mc) = p.upper;
  }
  s.l.tail(n) = p.box_lower;
  s.u.tail(n) = p.box_upper;
  return s;
}

VectorXd clip(const VectorXd& v, const VectorXd& l, const VectorXd& u) { return v.cwiseMax(l).cwiseMin(u); }

double inf_norm(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

VectorXd row_rho(const Stacked& s, double rho) {
  VectorXd r(s.l.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    if (s.l[i] <= -kInf && s.u[i] >= kInf) {
      r[i] = kRhoMin;
    } else if (s.u[i] - s.l[i] < 1e-12) {
      r[i] = 1e3 * rho;
    } else {
      r[i] = rho;
    }
  }
  return r;
}

struct Kkt {
  double primal = 0.0;
  double dual = 0.0;
  double primal_scale = 0.0;
  double dual_scale = 0.0;
};

Kkt residuals(const QPProblem& p, const Stacked& s, const VectorXd& x, const VectorXd& z, const VectorXd& y) {
  const VectorXd ax = s.a * x;
  const VectorXd px = p.hessian * x;
  const VectorXd aty = s.a.transpose() * y;
  Kkt k;
  k.primal = inf_norm(ax - z);
  k.dual = inf_norm(px + p.gradient + aty);
  k.primal_scale = std::max(inf_norm(ax), inf_norm(z));
  k.dual_scale = std::max({inf_norm(px), inf_norm(aty), inf_norm(p.gradient)});
  return k;
}

// Solves the equality-constrained problem on the guessed active set. Returns
// false when the guess is inconsistent with the KKT sign conditions.
bool polish(const QPProblem& p, const Stacked& s, const VectorXd& z, const VectorXd& y, double tol,
            VectorXd& x_out, VectorXd& y_out) {
  const int n = p.size();
  std::vector<Eigen::Index> active;
  std::vector<double> target;
  std::vector<int> side;  // -1 lower, +1 upper
  for (Eigen::Index i = 0; i < s.l.size(); ++i) {
    if (z[i] - s.l[i] < -y[i]) {
      active.push_back(i);
      target.push_back(s.l[i]);
      side.push_back(-1);
    } else if (s.u[i] - z[i] < y[i]) {
      active.push_back(i);
      target.push_back(s.u[i]);
      side.push_back(1);
    }
  }
  const auto na = static_cast<Eigen::Index>(active.size());
  if (na > n) return false;
  MatrixXd kkt = MatrixXd::Zero(n + na, n + na);
  kkt.topLeftCorner(n, n) = p.hessian;
  VectorXd rhs(n + na);
  rhs.head(n) = -p.gradient;
  for (Eigen::Index k = 0; k < na; ++k) {
    kkt.block(n + k, 0, 1, n) = s.a.row(active[static_cast<std::size_t>(k)]);
    kkt.block(0, n + k, n, 1) = s.a.row(active[static_cast<std::size_t>(k)]).transpose();
    rhs[n + k] = target[static_cast<std::size_t>(k)];
  }
  // Regularised factorisation plus refinement against the exact system.
  constexpr double kDelta = 1e-9;
  MatrixXd reg = kkt;
  reg.diagonal().head(n).array() += kDelta;
  reg.diagonal().tail(na).array() -= kDelta;
  const Eigen::PartialPivLU<MatrixXd> lu(reg);
  VectorXd sol = lu.solve(rhs);
  for (int it = 0; it < 5; ++it) sol += lu.solve(rhs - kkt * sol);
  if (!sol.allFinite()) return false;

  x_out = sol.head(n);
  y_out = VectorXd::Zero(s.l.size());
  for (Eigen::Index k = 0; k < na; ++k) {
    const double mult = sol[n + k];
    if (side[static_cast<std::size_t>(k)] * mult < -tol) return false;
    y_out[active[static_cast<std::size_t>(k)]] = mult;
  }
  const VectorXd ax = s.a * x_out;
  return inf_norm(ax - clip(ax, s.l, s.u)) <= tol;
}

}  // namespace

double qp_primal_residual(const QPProblem& p, const VectorXd& x) {
  const Stacked s = stack(p);
  const VectorXd ax = s.a * x;
  return inf_norm(ax - clip(ax, s.l, s.u));
}

double qp_dual_residual(const QPProblem& p, const VectorXd& x, const VectorXd& y) {
  const Stacked s = stack(p);
  return inf_norm(p.hessian * x + p.gradient + s.a.transpose() * y);
}

QPSolution solve_qp(const QPProblem& p, const VectorXd& warm_start, const QPSettings& cfg) {
  const int n = p.size();
  if (p.hessian.rows() != n || p.hessian.cols() != n || p.box_lower.size() != n || p.box_upper.size() != n ||
      p.constraint.cols() != (p.constraint.rows() ? n : p.constraint.cols()) ||
      p.lower.size() != p.constraint.rows() || p.upper.size() != p.constraint.rows()) {
    throw Error(ErrorCode::kInvalidArgument, "inconsistent QP dimensions");
  }
  QPSolution sol;
  if (n == 0) {
    sol.x = VectorXd();
    sol.y = VectorXd::Zero(p.constraint.rows());
    sol.status = QPStatus::kSolved;
    return sol;
  }
  const Stacked s = stack(p);
  VectorXd x = clip(warm_start.size() == n ? warm_start : VectorXd::Zero(n), p.box_lower, p.box_upper);
  VectorXd z = clip(s.a * x, s.l, s.u);
  VectorXd y = VectorXd::Zero(s.l.size());
  double rho = std::clamp(cfg.rho, kRhoMin, kRhoMax);
  VectorXd rho_vec = row_rho(s, rho);

  auto factor = [&] {
    MatrixXd k = p.hessian + s.a.transpose() * rho_vec.asDiagonal() * s.a;
    k.diagonal().array() += cfg.sigma;
    return Eigen::LLT<MatrixXd>(k);
  };
  Eigen::LLT<MatrixXd> llt = factor();
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::kSingularMatrix, "QP system is not positive definite");

  Kkt kkt;
  for (sol.iterations = 1; sol.iterations <= cfg.max_iter; ++sol.iterations) {
    const VectorXd rhs = cfg.sigma * x - p.gradient + s.a.transpose() * (rho_vec.cwiseProduct(z) - y);
    const VectorXd xt = llt.solve(rhs);
    const VectorXd zt = s.a * xt;
    x = cfg.alpha * xt + (1.0 - cfg.alpha) * x;
    const VectorXd zr = cfg.alpha * zt + (1.0 - cfg.alpha) * z;
    const VectorXd z_next = clip(zr + y.cwiseQuotient(rho_vec), s.l, s.u);
    y += rho_vec.cwiseProduct(zr - z_next);
    z = z_next;

    kkt = residuals(p, s, x, z, y);
    if (kkt.primal <= cfg.eps_abs + cfg.eps_rel * kkt.primal_scale &&
        kkt.dual <= cfg.eps_abs + cfg.eps_rel * kkt.dual_scale) {
      sol.status = QPStatus::kSolved;
      break;
    }
    if (cfg.adapt_interval > 0 && sol.iterations % cfg.adapt_interval == 0) {
      const double pr = kkt.primal / std::max(kkt.primal_scale, 1e-30);
      const double dr = kkt.dual / std::max(kkt.dual_scale, 1e-30);
      const double next = std::clamp(rho * std::sqrt(pr / std::max(dr, 1e-30)), kRhoMin, kRhoMax);
      if (next > 5.0 * rho || next < 0.2 * rho) {
        rho = next;
        rho_vec = row_rho(s, rho);
        llt = factor();
      }
    }
  }
  sol.iterations = std::min(sol.iterations, cfg.max_iter);

  if (cfg.polish) {
    VectorXd xp;
    VectorXd yp;
    const double tol = std::max(cfg.eps_abs, 1e-9);
    if (polish(p, s, z, y, tol, xp, yp)) {
      const VectorXd zp = clip(s.a * xp, s.l, s.u);
      const Kkt kp = residuals(p, s, xp, zp, yp);
      if (kp.dual <= std::max(kkt.dual, tol) && kp.primal <= std::max(kkt.primal, tol)) {
        x = xp;
        y = yp;
        z = zp;
        kkt = kp;
        sol.polished = true;
        sol.status = QPStatus::kSolved;
      }
    }
  }

  sol.x = clip(x, p.box_lower, p.box_upper);
  sol.y = y;
  sol.primal_residual = qp_primal_residual(p, sol.x);
  sol.dual_residual = kkt.dual;
  return sol;
}

}  // namespace morphmesh
