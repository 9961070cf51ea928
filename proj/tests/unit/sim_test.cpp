#include <cmath>

#include <gtest/gtest.h>

#include "morphmesh/actuation.hpp"
#include "morphmesh/errors.hpp"
#include "morphmesh/random.hpp"
#include "morphmesh/sim.hpp"

namespace morphmesh {
namespace {

Mesh curved_3x3() {
  MeshSpec spec;
  spec.rows = 3;
  spec.cols = 3;
  spec.surface = InitSurface::from_graph(scale_shift(parse_shape("x^2 + y^2"), {1.0, 0.05, 0.05, 1, 1, 1, 0}));
  return build_mesh(spec);
}

std::vector<int> one_axis_per_joint(const MeshTopology& topo) {
  std::vector<int> rows;
  for (int j = 0; j < topo.joint_count(); ++j) {
    rows.push_back(6 + 3 * j + (topo.joints()[static_cast<std::size_t>(j)].direction == JointDirection::kRow ? 1 : 0));
  }
  return rows;
}

// E|eta| for eta ~ N(0, s^2) conditioned on |eta| <= b, by composite Simpson.
double truncated_abs_mean_by_quadrature(double s, double b) {
  const int n = 20000;
  const double h = b / n;
  double num = 0.0, den = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double x = k * h;
    const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    const double pdf = std::exp(-0.5 * x * x / (s * s));
    num += w * x * pdf;
    den += w * pdf;
  }
  return num / den;
}

TEST(Step, ZeroCommandLeavesStateUnchanged) {
  const Mesh m = curved_3x3();
  auto poses = m.state.poses;
  SimConfig cfg;
  step(m.topology, poses, one_axis_per_joint(m.topology), VectorXd::Zero(12), 0.01, cfg);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    EXPECT_LT((poses[k].position - m.state.poses[k].position).norm(), 1e-12);
    EXPECT_LT((poses[k].orientation.coeffs() - m.state.poses[k].orientation.coeffs()).norm(), 1e-12);
  }
}

TEST(Step, SingleJointTurnsByRateTimesDuration) {
  MeshSpec spec;
  spec.rows = 1;
  spec.cols = 2;
  const Mesh m = build_mesh(spec);
  const std::vector<int> rows = {6, 7, 8};
  SimConfig cfg;
  cfg.plant_damping = 0.0;
  for (IntegratorKind kind : {IntegratorKind::kRK45, IntegratorKind::kRK4}) {
    cfg.integrator = kind;
    auto poses = m.state.poses;
    const double rate = 0.08;
    const VectorXd pi = Eigen::Vector3d(0.0, 0.0, rate);
    for (int k = 0; k < 100; ++k) step(m.topology, poses, rows, pi, 0.01, cfg);
    const Mat3 rel = joint_relative_rotation(m.topology, poses, 0);
    const Vec3 angle = log_so3(rel);
    EXPECT_NEAR(angle.z(), rate * 1.0, 1e-6);
    EXPECT_LT(angle.head<2>().norm(), 1e-9);
    EXPECT_LT(holonomic_residual(m.topology, poses).lpNorm<Eigen::Infinity>(), 1e-9);
    for (const Pose& p : poses) EXPECT_NEAR(p.orientation.coeffs().norm(), 1.0, 1e-9);
  }
}

TEST(Step, FixedNodesDoNotMove) {
  const Mesh m = curved_3x3();
  auto poses = m.state.poses;
  SimConfig cfg;
  Rng rng(3);
  VectorXd pi(12);
  for (int k = 0; k < 12; ++k) pi[k] = deg_to_rad(5.0) * (2 * uniform01(rng) - 1);
  for (int k = 0; k < 20; ++k) step(m.topology, poses, one_axis_per_joint(m.topology), pi, 0.01, cfg);
  EXPECT_EQ(poses[0].position, m.state.poses[0].position);
  EXPECT_EQ(poses[0].orientation.coeffs(), m.state.poses[0].orientation.coeffs());
}

TEST(ActuationNoise, ZeroStaysZeroAndMagnitudeNeverGrows) {
  NoiseSpec spec;
  spec.kind = NoiseSpec::Kind::kActuation;
  Rng rng(1);
  EXPECT_TRUE(apply_actuation_noise(VectorXd::Zero(5), spec, rng).isZero(0.0));
  const double limit = deg_to_rad(5.0);
  for (int trial = 0; trial < 2000; ++trial) {
    VectorXd pi(4);
    for (int k = 0; k < 4; ++k) pi[k] = limit * (2 * uniform01(rng) - 1);
    const VectorXd out = apply_actuation_noise(pi, spec, rng);
    for (int k = 0; k < 4; ++k) {
      EXPECT_LE(std::abs(out[k]), std::abs(pi[k]));
      EXPECT_GE(out[k] * pi[k], 0.0);
      EXPECT_GE(std::abs(out[k]), 0.8 * std::abs(pi[k]) - 1e-15);
    }
  }
  const VectorXd full = apply_actuation_noise(VectorXd::Constant(1, limit), spec, rng);
  EXPECT_GE(full[0], deg_to_rad(4.0));
}

TEST(ActuationNoise, MeanReductionMatchesTruncatedGaussian) {
  NoiseSpec spec;
  spec.kind = NoiseSpec::Kind::kActuation;
  const double expected = truncated_abs_mean_by_quadrature(spec.actuation_sigma, spec.actuation_max_fraction);
  EXPECT_NEAR(expected_truncated_abs(spec.actuation_sigma, spec.actuation_max_fraction), expected, 1e-9);
  Rng rng(12345);
  const int draws = 100000;
  double sum = 0.0;
  for (int k = 0; k < draws; ++k) sum += 1.0 - apply_actuation_noise(VectorXd::Ones(1), spec, rng)[0];
  EXPECT_NEAR(sum / draws, expected, 0.01 * expected);
}

TEST(TruncatedNormal, RespectsBound) {
  Rng rng(4);
  for (int k = 0; k < 10000; ++k) EXPECT_LE(std::abs(truncated_normal(rng, 1.0, 0.5)), 0.5);
}

TEST(StateNoise, ZeroAmplitudeIsIdentity) {
  const Mesh m = curved_3x3();
  NoiseSpec spec;
  spec.kind = NoiseSpec::Kind::kState;
  spec.state_sigma = 0.0;
  spec.state_max = 0.0;
  Rng rng(2);
  const auto noisy = apply_state_noise(m.topology, m.state.poses, one_axis_per_joint(m.topology), spec, rng);
  for (std::size_t k = 0; k < noisy.size(); ++k) {
    EXPECT_LT((noisy[k].position - m.state.poses[k].position).norm(), 1e-15);
  }
}

TEST(StateNoise, PerturbationIsFeasibleAndSpreadsToPassiveJoints) {
  const Mesh m = curved_3x3();
  NoiseSpec spec;
  spec.kind = NoiseSpec::Kind::kState;
  Rng rng(8);
  // A well-conditioned pattern; an ill-conditioned one amplifies the motor
  // perturbation into large passive motions.
  const auto rows = pivoted_qr_rows(analyze_constraints(m.topology, m.state.poses).z_nu);
  const auto noisy = apply_state_noise(m.topology, m.state.poses, rows, spec, rng, 1e-6);
  EXPECT_LT(holonomic_residual(m.topology, noisy).lpNorm<Eigen::Infinity>(), 1e-6);
  int moved = 0;
  for (int j = 0; j < m.topology.joint_count(); ++j) {
    const Mat3 before = joint_relative_rotation(m.topology, m.state.poses, j);
    const Mat3 after = joint_relative_rotation(m.topology, noisy, j);
    const Vec3 change = log_so3(after * before.transpose());
    // Every joint moves, including the axes that carry no motor.
    if (change.norm() > 1e-9) ++moved;
    EXPECT_LE(change.norm(), deg_to_rad(1.0));
  }
  EXPECT_GT(moved, 1);
}

TEST(Metrics, ByHandCases) {
  const MeshTopology topo(1, 1, 0.025, 0.025, {}, {});
  std::vector<Pose> poses(1);
  poses[0].position = Vec3(0.2, 0.1, 0.01);
  const ShapeField flat(parse_shape("0"));
  MetricsFrame f = metrics(topo, poses, flat, 0.0);
  EXPECT_EQ(f.e_o[0], 0.0);
  EXPECT_NEAR(f.e_p[0], 0.01, 1e-15);

  poses[0].orientation = UnitQuaternion::from_axis_angle(Vec3::UnitX(), kPi / 2);
  f = metrics(topo, poses, flat, 0.0);
  EXPECT_NEAR(f.e_o[0], kPi / 2, 1e-12);
}

TEST(Percentile, LinearInterpolationBetweenRanks) {
  const std::vector<double> v = {4, 1, 3, 2, 5};
  EXPECT_EQ(percentile(v, 0.0), 1.0);
  EXPECT_EQ(percentile(v, 1.0), 5.0);
  EXPECT_EQ(percentile(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(percentile(v, 0.1), 1.4);
  EXPECT_DOUBLE_EQ(percentile(v, 0.9), 4.6);
}

TEST(Run, DeterministicAndHygienic) {
  const Mesh m = curved_3x3();
  const auto rows = one_axis_per_joint(m.topology);
  const ShapeField shape(
      anchor_through(scale_shift(parse_shape("x*y*cos(y)"), {0.03, 0, 0, 0.1, 0.1, 1, 0}), m.state.poses[0].position));
  ControllerConfig cc;
  SimConfig sc;
  sc.duration = 0.5;
  sc.noise.kind = NoiseSpec::Kind::kActuation;
  sc.rng_seed = 17;
  const SimResult a = run(m.topology, m.state.poses, rows, shape, cc, sc);
  const SimResult b = run(m.topology, m.state.poses, rows, shape, cc, sc);
  ASSERT_EQ(a.frames.size(), 51u);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    EXPECT_EQ(a.frames[k].e_o_mean, b.frames[k].e_o_mean);
    EXPECT_EQ(a.frames[k].pi, b.frames[k].pi);
    EXPECT_LE(a.frames[k].quat_norm_error, 1e-9);
    EXPECT_LE(a.frames[k].residual_inf, 1e-4);
    if (a.frames[k].pi.size()) EXPECT_LE(a.frames[k].pi.lpNorm<Eigen::Infinity>(), cc.omega_max + 1e-9);
  }
  for (const auto& poses : a.trajectory) {
    EXPECT_EQ(poses[0].position, m.state.poses[0].position);
    EXPECT_EQ(poses[0].orientation.coeffs(), m.state.poses[0].orientation.coeffs());
  }
  EXPECT_LT(a.frames.back().e_o_mean, a.frames.front().e_o_mean);
}

TEST(SimConfig, ValidationRejectsBadValues) {
  SimConfig cfg;
  cfg.duration = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = SimConfig{};
  cfg.abs_tol = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = SimConfig{};
  cfg.noise.actuation_max_fraction = 1.5;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace morphmesh
