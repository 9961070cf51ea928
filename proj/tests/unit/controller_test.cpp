#include <cmath>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "morphmesh/controller.hpp"
#include "morphmesh/errors.hpp"
#include "morphmesh/qp.hpp"
#include "morphmesh/random.hpp"

namespace morphmesh {
namespace {

Vec3 random_unit(Rng& rng) { return Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng)).normalized(); }

// Projected gradient on a box-only QP, iterated to a fixed point.
VectorXd projected_gradient(const QPProblem& p) {
  const double step = 1.0 / Eigen::SelfAdjointEigenSolver<MatrixXd>(p.hessian).eigenvalues().maxCoeff();
  VectorXd x = VectorXd::Zero(p.size());
  for (int it = 0; it < 200000; ++it) {
    const VectorXd next = (x - step * (p.hessian * x + p.gradient)).cwiseMax(p.box_lower).cwiseMin(p.box_upper);
    const double change = (next - x).lpNorm<Eigen::Infinity>();
    x = next;
    if (change < 1e-14) break;
  }
  return x;
}

Mesh curved_mesh(int n) {
  MeshSpec spec;
  spec.rows = n;
  spec.cols = n;
  const double c = 0.025 * (n - 1);
  spec.surface = InitSurface::from_graph(scale_shift(parse_shape("x^2 + y^2"), {1.0, c, c, 1, 1, 1, 0}));
  return build_mesh(spec);
}

std::vector<int> one_axis_per_joint(const MeshTopology& topo) {
  std::vector<int> rows;
  for (int j = 0; j < topo.joint_count(); ++j) {
    rows.push_back(6 + 3 * j + (topo.joints()[static_cast<std::size_t>(j)].direction == JointDirection::kRow ? 1 : 0));
  }
  return rows;
}

TEST(ReferenceOmega, EquilibriumIsZero) {
  ControllerConfig cfg;
  EXPECT_TRUE(reference_omega(Vec3::UnitZ(), Vec3::UnitZ(), Vec3::Zero(), cfg).isZero(0.0));
}

TEST(ReferenceOmega, AlignmentTermByHand) {
  ControllerConfig cfg;
  cfg.k = 1.0;
  EXPECT_TRUE(reference_omega(Vec3::UnitX(), Vec3::UnitZ(), Vec3::Zero(), cfg).isApprox(Vec3(0, -1, 0)));
}

TEST(ReferenceOmega, SigmaRateAddsToGain) {
  ControllerConfig cfg;
  cfg.k = 1.0;
  cfg.sigma = 2.0;
  cfg.sigma_rate = 1.0;
  EXPECT_TRUE(reference_omega(Vec3::UnitX(), Vec3::UnitZ(), Vec3::Zero(), cfg).isApprox(Vec3(0, -1.5, 0)));
}

TEST(ReferenceOmega, AlignedNodeGetsFeedForwardPlusSpin) {
  Rng rng(2);
  ControllerConfig cfg;
  cfg.lambda = 0.7;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 n = random_unit(rng);
    const Vec3 n_dot = Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    const Vec3 out = reference_omega(n, n, n_dot, cfg);
    EXPECT_LT((out - (n.cross(n_dot) + cfg.lambda * n)).norm(), 1e-15);
  }
}

TEST(ReferenceOmega, RotationEquivariant) {
  Rng rng(4);
  ControllerConfig cfg;
  cfg.lambda = 0.3;
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 z = random_unit(rng);
    const Vec3 n = random_unit(rng);
    const Vec3 n_dot(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    const Mat3 r = exp_so3(Vec3(standard_normal(rng), standard_normal(rng), standard_normal(rng)));
    const Vec3 a = r * reference_omega(z, n, n_dot, cfg);
    const Vec3 b = reference_omega(r * z, r * n, r * n_dot, cfg);
    EXPECT_LT((a - b).norm(), 1e-12);
  }
}

TEST(ReferenceOmega, AntipodalIsFlaggedAndPerturbationResolvesIt) {
  ControllerConfig cfg;
  try {
    reference_omega(-Vec3::UnitZ(), Vec3::UnitZ(), Vec3::Zero(), cfg);
    FAIL() << "expected kAntipodalNormal";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAntipodalNormal);
  }
  const Vec3 z = perturb_antipodal(-Vec3::UnitZ(), Vec3::UnitZ());
  EXPECT_NEAR(std::acos(std::clamp(-z.z(), -1.0, 1.0)), 1e-3, 1e-9);
  EXPECT_NO_THROW(reference_omega(z, Vec3::UnitZ(), Vec3::Zero(), cfg));
}

TEST(ReferenceOmega, FreeBodyConvergesAtRateK) {
  // z' = w* x z with w* = k z x n: the angle obeys theta' = -k sin(theta).
  ControllerConfig cfg;
  cfg.k = 1.5;
  const Vec3 n = Vec3::UnitZ();
  Vec3 z = Vec3(std::sin(0.05), 0.0, std::cos(0.05));
  const double dt = 1e-4;
  const double theta0 = std::acos(z.dot(n));
  const double duration = 2.0;
  for (int s = 0; s < static_cast<int>(duration / dt); ++s) {
    const auto f = [&](const Vec3& v) { return reference_omega(v.normalized(), n, Vec3::Zero(), cfg).cross(v); };
    const Vec3 k1 = f(z);
    const Vec3 k2 = f(z + 0.5 * dt * k1);
    const Vec3 k3 = f(z + 0.5 * dt * k2);
    const Vec3 k4 = f(z + dt * k3);
    z = (z + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)).normalized();
  }
  const double slope = (std::log(std::acos(std::clamp(z.dot(n), -1.0, 1.0))) - std::log(theta0)) / duration;
  EXPECT_NEAR(slope, -cfg.k, 0.1 * cfg.k);
}

TEST(DampedInverse, ClosedForms) {
  EXPECT_TRUE(damped_inverse(MatrixXd::Identity(3, 3), 1e-6).isApprox(MatrixXd::Identity(3, 3) / (1.0 + 1e-6), 1e-15));
  MatrixXd d = MatrixXd::Zero(2, 2);
  d(0, 0) = 2.0;
  MatrixXd expected = MatrixXd::Zero(2, 2);
  expected(0, 0) = 2.0 / (4.0 + 1e-6);
  EXPECT_LT((damped_inverse(d, 1e-6) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(DampedInverse, ExactForZeroDampingAndSingularThrows) {
  Rng rng(5);
  MatrixXd a(4, 4);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) a(r, c) = standard_normal(rng) + (r == c ? 4.0 : 0.0);
  }
  EXPECT_LT((damped_inverse(a, 0.0) - a.inverse()).cwiseAbs().maxCoeff(), 1e-10);
  MatrixXd s = a;
  s.row(3) = s.row(2);
  try {
    damped_inverse(s, 0.0);
    FAIL() << "expected kSingularMatrix";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingularMatrix);
  }
  EXPECT_TRUE(damped_inverse(s, 1e-6).allFinite());
}

TEST(DampedInverse, DeviationIsOrderDamping) {
  Rng rng(6);
  MatrixXd a(5, 5);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) a(r, c) = standard_normal(rng) + (r == c ? 5.0 : 0.0);
  }
  const Eigen::JacobiSVD<MatrixXd> svd(a);
  const double smin = svd.singularValues().minCoeff();
  for (double eps : {1e-6, 1e-4, 1e-2}) {
    const double dev = (damped_inverse(a, eps) * a - MatrixXd::Identity(5, 5)).norm();
    // Per singular value the deviation is eps / (s^2 + eps).
    EXPECT_LE(dev, std::sqrt(5.0) * eps / (smin * smin + eps) * (1 + 1e-9));
    EXPECT_GT(dev, 0.0);
  }
}

TEST(DampedActuationMap, MatchesExplicitNullBasisForm) {
  const Mesh m = curved_mesh(3);
  const ConstraintSystem cs = analyze_constraints(m.topology, m.state.poses);
  const auto rows = one_axis_per_joint(m.topology);
  const MatrixXd z_act = select_rows(cs.z_nu, rows);
  const MatrixXd exact = cs.z_v * z_act.inverse();
  for (double eps : {1e-6, 1e-2}) {
    const MatrixXd oracle = cs.z_v * damped_inverse(z_act, eps);
    EXPECT_LT((damped_actuation_map(exact, eps) - oracle).cwiseAbs().maxCoeff(), 1e-10 * oracle.cwiseAbs().maxCoeff());
  }
}

TEST(SolveQp, UnconstrainedMatchesLinearSolve) {
  Rng rng(7);
  QPProblem p;
  MatrixXd b(4, 4);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) b(r, c) = standard_normal(rng);
  }
  p.hessian = b.transpose() * b + MatrixXd::Identity(4, 4);
  p.gradient = VectorXd::Random(4) * 0.1;
  p.constraint.resize(0, 4);
  p.box_lower = VectorXd::Constant(4, -100.0);
  p.box_upper = VectorXd::Constant(4, 100.0);
  const QPSolution sol = solve_qp(p, VectorXd::Zero(4));
  ASSERT_EQ(sol.status, QPStatus::kSolved);
  const VectorXd direct = p.hessian.ldlt().solve(-p.gradient);
  EXPECT_LT((sol.x - direct).lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(SolveQp, OneDofClampsAtBound) {
  QPProblem p;
  p.hessian = MatrixXd::Identity(1, 1);
  p.gradient = VectorXd::Constant(1, -1.0);  // unconstrained optimum 1 rad/s
  p.constraint.resize(0, 1);
  const double limit = deg_to_rad(5.0);
  p.box_lower = VectorXd::Constant(1, -limit);
  p.box_upper = VectorXd::Constant(1, limit);
  const QPSolution sol = solve_qp(p, VectorXd::Zero(1));
  EXPECT_EQ(sol.x[0], limit);
  p.gradient[0] = 1.0;
  EXPECT_EQ(solve_qp(p, VectorXd::Zero(1)).x[0], -limit);
}

TEST(SolveQp, RandomBoxQpsMatchProjectedGradient) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(uniform_below(rng, 6));
    MatrixXd b(n, n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) b(r, c) = standard_normal(rng);
    }
    QPProblem p;
    p.hessian = b.transpose() * b + 0.1 * MatrixXd::Identity(n, n);
    p.gradient.resize(n);
    for (int k = 0; k < n; ++k) p.gradient[k] = 2.0 * standard_normal(rng);
    p.constraint.resize(0, n);
    p.box_lower = VectorXd::Constant(n, -0.5);
    p.box_upper = VectorXd::Constant(n, 0.5);
    const QPSolution sol = solve_qp(p, VectorXd::Zero(n));
    ASSERT_EQ(sol.status, QPStatus::kSolved);
    EXPECT_LT((sol.x - projected_gradient(p)).lpNorm<Eigen::Infinity>(), 1e-6) << "trial " << trial;
    EXPECT_TRUE((sol.x.array() >= p.box_lower.array()).all() && (sol.x.array() <= p.box_upper.array()).all());
    EXPECT_LE(qp_primal_residual(p, sol.x), 1e-6);
    EXPECT_LE(qp_dual_residual(p, sol.x, sol.y), 1e-6);
  }
}

TEST(SolveQp, GeneralConstraintsAreHonoured) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(uniform_below(rng, 5));
    QPProblem p;
    p.hessian = MatrixXd::Identity(n, n);
    p.gradient.resize(n);
    for (int k = 0; k < n; ++k) p.gradient[k] = standard_normal(rng);
    p.constraint = MatrixXd::Ones(1, n);
    p.lower = VectorXd::Constant(1, -0.1);
    p.upper = VectorXd::Constant(1, 0.1);
    p.box_lower = VectorXd::Constant(n, -1.0);
    p.box_upper = VectorXd::Constant(n, 1.0);
    const QPSolution sol = solve_qp(p, VectorXd::Zero(n));
    ASSERT_EQ(sol.status, QPStatus::kSolved);
    EXPECT_LE(qp_primal_residual(p, sol.x), 1e-6);
    EXPECT_LE(qp_dual_residual(p, sol.x, sol.y), 1e-6);
  }
}

TEST(SolveQp, Deterministic) {
  QPProblem p;
  p.hessian = MatrixXd::Identity(3, 3) * 2.0;
  p.gradient = Eigen::Vector3d(1.0, -2.0, 0.5);
  p.constraint = MatrixXd::Ones(1, 3);
  p.lower = VectorXd::Constant(1, -0.2);
  p.upper = VectorXd::Constant(1, 0.2);
  p.box_lower = VectorXd::Constant(3, -0.4);
  p.box_upper = VectorXd::Constant(3, 0.4);
  const VectorXd a = solve_qp(p, VectorXd::Zero(3)).x;
  const VectorXd b = solve_qp(p, VectorXd::Zero(3)).x;
  EXPECT_EQ(a, b);
}

TEST(AssembleQp, ZeroReferencesGiveZeroCommand) {
  const Mesh m = curved_mesh(3);
  const auto rows = one_axis_per_joint(m.topology);
  ControllerConfig cfg;
  const MatrixXd map = ActuatedVelocitySolver(m.topology, m.state.poses, rows, cfg.damping).map();
  const std::vector<Vec3> refs(9, Vec3::Zero());
  const QPProblem p = assemble_qp(m.topology, m.state.poses, map, refs, VectorXd::Zero(12), cfg);
  const QPSolution sol = solve_qp(p, VectorXd::Zero(12));
  EXPECT_LT(sol.x.lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(AssembleQp, HessianIsSymmetricWithRegularisationFloor) {
  const Mesh m = curved_mesh(3);
  const auto rows = one_axis_per_joint(m.topology);
  ControllerConfig cfg;
  const MatrixXd map = ActuatedVelocitySolver(m.topology, m.state.poses, rows, cfg.damping).map();
  Rng rng(10);
  std::vector<Vec3> refs(9);
  for (auto& r : refs) r = 0.05 * random_unit(rng);
  const QPProblem p = assemble_qp(m.topology, m.state.poses, map, refs, VectorXd::Zero(12), cfg);
  EXPECT_LT((p.hessian - p.hessian.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  const double lmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(p.hessian).eigenvalues().minCoeff();
  EXPECT_GE(lmin, cfg.w_norm - 1e-12);
  EXPECT_TRUE(p.box_upper.isApproxToConstant(cfg.omega_max));
  EXPECT_TRUE(p.box_lower.isApproxToConstant(-cfg.omega_max));
}

TEST(AssembleQp, RangeRowsAtRestAreTheCurrentAlignment) {
  const Mesh m = curved_mesh(3);
  const auto rows = one_axis_per_joint(m.topology);
  ControllerConfig cfg;
  const MatrixXd map = ActuatedVelocitySolver(m.topology, m.state.poses, rows, cfg.damping).map();
  const RangeRows rom = range_of_motion_rows(m.topology, m.state.poses, map, cfg);
  for (int j = 0; j < m.topology.joint_count(); ++j) {
    const double c0 = joint_axis_alignment(m.topology, m.state.poses, j);
    // With zero command the row value is 0, so feasibility is cos(alpha) <= c0 <= 1.
    EXPECT_NEAR(rom.upper[j], 1.0 - c0, 1e-15);
    EXPECT_LE(rom.lower[j], 0.0);
    EXPECT_GE(c0, std::cos(cfg.alpha));
  }
}

TEST(AssembleQp, RangeRowMatchesForwardEulerStep) {
  const Mesh m = curved_mesh(3);
  const auto rows = one_axis_per_joint(m.topology);
  ControllerConfig cfg;
  const MatrixXd map = ActuatedVelocitySolver(m.topology, m.state.poses, rows, cfg.damping).map();
  const RangeRows rom = range_of_motion_rows(m.topology, m.state.poses, map, cfg);
  Rng rng(11);
  VectorXd pi(12);
  for (int k = 0; k < 12; ++k) pi[k] = 0.05 * standard_normal(rng);
  const VectorXd nu = map * pi;
  const VectorXd rel = absolute_to_relative_map(m.topology, m.state.poses) * nu;
  for (int j = 0; j < m.topology.joint_count(); ++j) {
    const Joint& jt = m.topology.joints()[static_cast<std::size_t>(j)];
    const Vec3 e = jt.direction == JointDirection::kRow ? Vec3::UnitX() : Vec3::UnitY();
    const Mat3 r = joint_relative_rotation(m.topology, m.state.poses, j);
    const Vec3 w = rel.segment<3>(6 + 3 * j);
    const double next = e.dot((Mat3::Identity() + skew(w) * cfg.control_dt) * r * e);
    EXPECT_NEAR(rom.a.row(j).dot(pi), next - e.dot(r * e), 1e-12);
  }
}

TEST(AssembleQp, OneAxisToyMatchesNormalEquations) {
  MeshSpec spec;
  spec.rows = 1;
  spec.cols = 2;
  spec.surface = InitSurface::from_graph(parse_shape("0.5*y^2"));
  const Mesh m = build_mesh(spec);
  ControllerConfig cfg;
  const MatrixXd full = ActuatedVelocitySolver(m.topology, m.state.poses, std::vector<int>{6, 7, 8}).map();
  const MatrixXd map = full.col(0);  // one actuated axis, the others held
  const std::vector<Vec3> refs = {Vec3::Zero(), Vec3(0.01, -0.004, 0.002)};
  const VectorXd prev = VectorXd::Constant(1, 0.003);
  const QPProblem p = assemble_qp(m.topology, m.state.poses, map, refs, prev, cfg);
  const QPSolution sol = solve_qp(p, VectorXd::Zero(1));
  // argmin |A pi - w*|^2 + w_norm pi^2 + w_slew (pi - prev)^2 by hand.
  VectorXd a(6);
  a << map.block<3, 1>(3, 0), map.block<3, 1>(9, 0);
  VectorXd w(6);
  w << refs[0], refs[1];
  const double oracle = (a.dot(w) + cfg.w_slew * prev[0]) / (a.squaredNorm() + cfg.w_norm + cfg.w_slew);
  ASSERT_LT(std::abs(oracle), cfg.omega_max);
  EXPECT_NEAR(sol.x[0], oracle, 1e-8);
}

TEST(ControllerTick, FlatChainOnFlatShapeStaysStill) {
  // A flat grid is a singular configuration; a chain is never singular.
  MeshSpec spec;
  spec.rows = 1;
  spec.cols = 3;
  const Mesh m = build_mesh(spec);
  const ConstraintSystem cs = analyze_constraints(m.topology, m.state.poses);
  const auto rows = pivoted_qr_rows(cs.z_nu);
  Controller c(ControllerConfig{}, rows, ShapeField(parse_shape("0")));
  const TickResult r = c.tick(m.topology, m.state.poses, 0.0, VectorXd::Zero(static_cast<int>(rows.size())));
  EXPECT_LT(r.pi.lpNorm<Eigen::Infinity>(), 1e-9);
}

TEST(ControllerTick, RespectsSpeedLimitAndIsReproducible) {
  const Mesh m = curved_mesh(3);
  const auto rows = one_axis_per_joint(m.topology);
  const ShapeField shape(scale_shift(parse_shape("x*y*cos(y)"), {0.03, 0, 0, 0.1, 0.1, 1, 0}));
  ControllerConfig cfg;
  Controller a(cfg, rows, shape);
  Controller b(cfg, rows, shape);
  const TickResult ra = a.tick(m.topology, m.state.poses, 0.0, VectorXd::Zero(12));
  const TickResult rb = b.tick(m.topology, m.state.poses, 0.0, VectorXd::Zero(12));
  EXPECT_LE(ra.pi.lpNorm<Eigen::Infinity>(), deg_to_rad(5.0) + 1e-9);
  EXPECT_GT(ra.pi.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(ra.pi, rb.pi);
}

TEST(ControllerConfig, ValidationRejectsBadGains) {
  ControllerConfig cfg;
  cfg.k = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = ControllerConfig{};
  cfg.sigma = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = ControllerConfig{};
  cfg.alpha = kPi;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace morphmesh
