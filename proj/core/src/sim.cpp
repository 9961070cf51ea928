#include "morphmesh/sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "morphmesh/errors.hpp"

namespace morphmesh {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double kA[7][6] = {
    {},
    {1.0 / 5.0},
    {3.0 / 40.0, 9.0 / 40.0},
    {44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0},
    {19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0},
    {9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0},
    {35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0},
};
// Fifth-order weights minus embedded fourth-order weights.
constexpr double kE[7] = {71.0 / 57600.0,      0.0,          -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0};

// Free-node state: position then raw (not renormalised) quaternion, 7 per node.
class FreeState {
 public:
  FreeState(const MeshTopology& topo, std::span<const Pose> poses)
      : topo_(topo), poses_(poses.begin(), poses.end()) {}

  VectorXd pack() const {
    const auto& free = topo_.free_nodes();
    VectorXd x(7 * static_cast<Eigen::Index>(free.size()));
    for (std::size_t k = 0; k < free.size(); ++k) {
      const Pose& p = poses_[static_cast<std::size_t>(free[k])];
      x.segment<3>(7 * static_cast<Eigen::Index>(k)) = p.position;
      x.segment<4>(7 * static_cast<Eigen::Index>(k) + 3) = p.orientation.coeffs();
    }
    return x;
  }

  // Poses with normalised orientations for evaluating the kinematics.
  const std::vector<Pose>& unpack(const VectorXd& x) {
    const auto& free = topo_.free_nodes();
    for (std::size_t k = 0; k < free.size(); ++k) {
      Pose& p = poses_[static_cast<std::size_t>(free[k])];
      p.position = x.segment<3>(7 * static_cast<Eigen::Index>(k));
      p.orientation = UnitQuaternion::normalized(x.segment<4>(7 * static_cast<Eigen::Index>(k) + 3));
    }
    return poses_;
  }

  VectorXd derivative(const VectorXd& x, const VelocityField& velocity, double gain) {
    const VectorXd nu = velocity(unpack(x));
    const auto& free = topo_.free_nodes();
    VectorXd dx(x.size());
    for (std::size_t k = 0; k < free.size(); ++k) {
      const auto o = 7 * static_cast<Eigen::Index>(k);
      const auto v = 6 * static_cast<Eigen::Index>(free[k]);
      dx.segment<3>(o) = nu.segment<3>(v);
      dx.segment<4>(o + 3) = quat_derivative(x.segment<4>(o + 3), nu.segment<3>(v + 3), gain);
    }
    return dx;
  }

 private:
  const MeshTopology& topo_;
  std::vector<Pose> poses_;
};

double joint_residual(const MeshTopology& topo, std::span<const Pose> poses) {
  const VectorXd g = holonomic_residual(topo, poses);
  const auto rows = 3 * static_cast<Eigen::Index>(topo.joint_count());
  return rows > 0 ? g.head(rows).lpNorm<Eigen::Infinity>() : 0.0;
}

std::string at_time(double t, const std::string& what) {
  std::ostringstream os;
  os << "t = " << t << " s: " << what;
  return os.str();
}

}  // namespace

void NoiseSpec::validate() const {
  if (!(actuation_max_fraction >= 0.0 && actuation_max_fraction <= 1.0)) {
    throw Error(ErrorCode::kConfig, "noise.actuation_max_fraction must lie in [0, 1]");
  }
  if (!(actuation_sigma >= 0.0) || !(state_sigma >= 0.0) || !(state_max >= 0.0)) {
    throw Error(ErrorCode::kConfig, "noise amplitudes must be >= 0");
  }
}

void SimConfig::validate() const {
  if (!(duration > 0.0)) throw Error(ErrorCode::kConfig, "sim.duration must be positive");
  if (!(control_dt > 0.0)) throw Error(ErrorCode::kConfig, "sim.control_dt must be positive");
  if (!(abs_tol > 0.0 && rel_tol > 0.0)) throw Error(ErrorCode::kConfig, "sim tolerances must be positive");
  if (rk4_substeps < 1) throw Error(ErrorCode::kConfig, "sim.rk4_substeps must be >= 1");
  if (!(baumgarte_gain >= 0.0)) throw Error(ErrorCode::kConfig, "sim.baumgarte_gain must be >= 0");
  if (!(projection_tol > 0.0)) throw Error(ErrorCode::kConfig, "sim.projection_tol must be positive");
  if (!(plant_damping >= 0.0)) throw Error(ErrorCode::kConfig, "sim.plant_damping must be >= 0");
  noise.validate();
}

StepStats step(const MeshTopology& topo, std::vector<Pose>& poses, const VelocityField& velocity, double dt,
               const SimConfig& cfg) {
  StepStats stats;
  FreeState state(topo, poses);
  VectorXd x = state.pack();
  const double gain = cfg.baumgarte_gain;

  if (cfg.integrator == IntegratorKind::kRK4) {
    const double h = dt / cfg.rk4_substeps;
    for (int s = 0; s < cfg.rk4_substeps; ++s) {
      const VectorXd k1 = state.derivative(x, velocity, gain);
      const VectorXd k2 = state.derivative(x + 0.5 * h * k1, velocity, gain);
      const VectorXd k3 = state.derivative(x + 0.5 * h * k2, velocity, gain);
      const VectorXd k4 = state.derivative(x + h * k3, velocity, gain);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      ++stats.steps;
    }
  } else {
    double t = 0.0;
    double h = dt;
    VectorXd k[7];
    k[0] = state.derivative(x, velocity, gain);
    while (t < dt) {
      const bool last = t + h >= dt * (1.0 - 1e-12);
      if (last) h = dt - t;
      if (h < cfg.min_step) {
        throw Error(ErrorCode::kIntegratorStepFailure, "adaptive step fell below " + std::to_string(cfg.min_step) + " s");
      }
      for (int s = 1; s < 7; ++s) {
        VectorXd xs = x;
        for (int j = 0; j < s; ++j) {
          if (kA[s][j] != 0.0) xs += h * kA[s][j] * k[j];
        }
        k[s] = state.derivative(xs, velocity, gain);
      }
      // Stage 7 is evaluated at the fifth-order solution (first same as last).
      VectorXd x_new = x;
      VectorXd err = VectorXd::Zero(x.size());
      for (int j = 0; j < 7; ++j) {
        if (j < 6 && kA[6][j] != 0.0) x_new += h * kA[6][j] * k[j];
        if (kE[j] != 0.0) err += h * kE[j] * k[j];
      }
      const VectorXd scale = (cfg.abs_tol + cfg.rel_tol * x.cwiseAbs().cwiseMax(x_new.cwiseAbs()).array()).matrix();
      const double e = x.size() ? err.cwiseQuotient(scale).lpNorm<Eigen::Infinity>() : 0.0;
      if (e <= 1.0) {
        t = last ? dt : t + h;
        x = std::move(x_new);
        k[0] = k[6];
        ++stats.steps;
      } else {
        ++stats.rejected;
      }
      const double factor = e > 0.0 ? 0.9 * std::pow(e, -0.2) : 5.0;
      h *= std::clamp(factor, 0.2, 5.0);
    }
  }

  poses = state.unpack(x);  // renormalises every quaternion
  stats.residual_inf = joint_residual(topo, poses);
  if (stats.residual_inf > cfg.projection_tol) {
    try {
      project_to_manifold(topo, poses, 1e-3 * cfg.projection_tol, 20);
    } catch (const Error& e) {
      throw Error(ErrorCode::kIntegratorStepFailure, std::string("drift projection failed: ") + e.what());
    }
    stats.projected = true;
    stats.residual_inf = joint_residual(topo, poses);
  }
  return stats;
}

StepStats step(const MeshTopology& topo, std::vector<Pose>& poses, std::span<const int> rows, const VectorXd& pi,
               double dt, const SimConfig& cfg) {
  const std::vector<int> pattern(rows.begin(), rows.end());
  const double damping = cfg.plant_damping;
  VelocityField field = [&topo, &pattern, &pi, damping](std::span<const Pose> p) -> VectorXd {
    if (pi.size() == 0 || pi.isZero(0.0)) return VectorXd::Zero(topo.velocity_dim());
    return ActuatedVelocitySolver(topo, p, pattern, damping).solve(pi);
  };
  return step(topo, poses, field, dt, cfg);
}

double truncated_normal(Rng& rng, double sigma, double bound) {
  if (sigma == 0.0 || bound == 0.0) return 0.0;
  for (;;) {
    const double v = sigma * standard_normal(rng);
    if (std::abs(v) <= bound) return v;
  }
}

double expected_truncated_abs(double sigma, double bound) {
  if (sigma == 0.0 || bound == 0.0) return 0.0;
  const double a = bound / sigma;
  return sigma * std::sqrt(2.0 / kPi) * (1.0 - std::exp(-0.5 * a * a)) / std::erf(a / std::sqrt(2.0));
}

VectorXd apply_actuation_noise(const VectorXd& pi, const NoiseSpec& spec, Rng& rng) {
  VectorXd out = pi;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double eta = truncated_normal(rng, spec.actuation_sigma, spec.actuation_max_fraction);
    out[i] = pi[i] * (1.0 - std::abs(eta));
  }
  return out;
}

std::vector<Pose> apply_state_noise(const MeshTopology& topo, std::span<const Pose> poses, std::span<const int> rows,
                                    const NoiseSpec& spec, Rng& rng, double damping) {
  std::vector<Pose> view(poses.begin(), poses.end());
  if (rows.empty()) return view;
  VectorXd angles(static_cast<Eigen::Index>(rows.size()));
  for (Eigen::Index i = 0; i < angles.size(); ++i) angles[i] = truncated_normal(rng, spec.state_sigma, spec.state_max);
  if (angles.isZero(0.0)) return view;
  const ActuatedVelocitySolver solver(topo, poses, rows, damping);
  apply_displacement(topo, view, solver.solve(angles));
  project_to_manifold(topo, view, 1e-10, 20);
  return view;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

MetricsFrame metrics(const MeshTopology& topo, std::span<const Pose> poses, const ShapeField& shape, double t) {
  MetricsFrame f;
  f.t = t;
  const auto n = static_cast<std::size_t>(topo.node_count());
  f.e_o.resize(n);
  f.e_p.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Pose& p = poses[k];
    const SurfaceSample s = shape.sample(p.position.x(), p.position.y(), t);
    const double c = std::clamp(p.rotation().col(2).dot(s.normal), -1.0, 1.0);
    f.e_o[k] = std::acos(c);
    f.e_p[k] = std::abs(p.position.z() - s.z);
    f.quat_norm_error = std::max(f.quat_norm_error, std::abs(p.orientation.coeffs().norm() - 1.0));
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  f.e_o_mean = mean(f.e_o);
  f.e_o_p10 = percentile(f.e_o, 0.1);
  f.e_o_p90 = percentile(f.e_o, 0.9);
  f.e_p_mean = mean(f.e_p);
  f.e_p_p10 = percentile(f.e_p, 0.1);
  f.e_p_p90 = percentile(f.e_p, 0.9);
  f.residual_inf = joint_residual(topo, poses);
  for (int j = 0; j < topo.joint_count(); ++j) {
    f.min_alignment = std::min(f.min_alignment, joint_axis_alignment(topo, poses, j));
  }
  return f;
}

SimResult run(const MeshTopology& topo, std::vector<Pose> poses, std::span<const int> rows, const ShapeField& shape,
              const ControllerConfig& controller_cfg, const SimConfig& cfg, const RunOptions& options) {
  cfg.validate();
  ControllerConfig ccfg = controller_cfg;
  ccfg.control_dt = cfg.control_dt;
  Controller controller(ccfg, std::vector<int>(rows.begin(), rows.end()), shape);
  Rng actuation_rng(derive_seed(cfg.rng_seed, RngStream::kActuationNoise));
  Rng state_rng(derive_seed(cfg.rng_seed, RngStream::kStateNoise));

  const auto ticks = static_cast<int>(std::llround(cfg.duration / cfg.control_dt));
  const int stride = std::max(options.trajectory_stride, 1);
  const int dof = static_cast<int>(rows.size());
  VectorXd pi_prev = VectorXd::Zero(dof);
  SimResult result;
  result.frames.reserve(static_cast<std::size_t>(ticks) + 1);

  for (int k = 0; k <= ticks; ++k) {
    const double t = k * cfg.control_dt;
    try {
      const std::vector<Pose> view = cfg.noise.kind == NoiseSpec::Kind::kState
                                         ? apply_state_noise(topo, poses, rows, cfg.noise, state_rng, cfg.plant_damping)
                                         : poses;
      const TickResult tick = controller.tick(topo, view, t, pi_prev);
      result.qp_fallbacks += tick.fallback ? 1 : 0;

      MetricsFrame frame = metrics(topo, poses, shape, t);
      frame.pi = tick.pi;
      result.frames.push_back(frame);
      if (k % stride == 0 || k == ticks) {
        result.trajectory.push_back(poses);
        result.trajectory_times.push_back(t);
      }
      if (options.on_frame && !options.on_frame(result.frames.back())) break;
      if (k == ticks) break;

      const VectorXd applied = cfg.noise.kind == NoiseSpec::Kind::kActuation
                                   ? apply_actuation_noise(tick.pi, cfg.noise, actuation_rng)
                                   : tick.pi;
      result.frames.back().pi_applied = applied;
      const StepStats stats = step(topo, poses, rows, applied, cfg.control_dt, cfg);
      result.integrator_steps += stats.steps;
      result.projections += stats.projected ? 1 : 0;
      pi_prev = tick.pi;
    } catch (const Error& e) {
      throw Error(e.code(), at_time(t, e.what()));
    }
  }
  result.final_poses = std::move(poses);
  return result;
}

}  // namespace morphmesh
