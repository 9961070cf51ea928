#pragma once

#include <Eigen/Core>

namespace morphmesh {

// min 0.5 x'Px + q'x  s.t.  lower <= A x <= upper,  box_lower <= x <= box_upper
struct QPProblem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd constraint;  // may have zero rows
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  Eigen::VectorXd box_lower;
  Eigen::VectorXd box_upper;

  int size() const { return static_cast<int>(gradient.size()); }
};

struct QPSettings {
  int max_iter = 4000;
  double eps_abs = 1e-7;
  double eps_rel = 1e-7;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;  // over-relaxation
  int adapt_interval = 25;
  bool polish = true;
};

enum class QPStatus { kSolved, kMaxIterations };

struct QPSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // multipliers of [constraint; I]
  QPStatus status = QPStatus::kMaxIterations;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
};

// Operator-splitting (ADMM) solver with step-size adaptation and an
// active-set polish. The returned x always lies inside the box exactly.
QPSolution solve_qp(const QPProblem& problem, const Eigen::VectorXd& warm_start, const QPSettings& settings = {});

// KKT residuals of a candidate pair (x, y) for reporting and tests.
double qp_primal_residual(const QPProblem& problem, const Eigen::VectorXd& x);
double qp_dual_residual(const QPProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

}  // namespace morphmesh
