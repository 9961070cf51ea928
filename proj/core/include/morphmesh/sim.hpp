#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "morphmesh/controller.hpp"
#include "morphmesh/mesh.hpp"
#include "morphmesh/random.hpp"
#include "morphmesh/shape.hpp"

namespace morphmesh {

enum class IntegratorKind { kRK45, kRK4 };

struct NoiseSpec {
  enum class Kind { kNone, kActuation, kState };
  Kind kind = Kind::kNone;
  // Actuation: pi_i (1 - |eta|), eta ~ N(0, sigma^2) truncated to |eta| <= max.
  double actuation_sigma = 0.1;
  double actuation_max_fraction = 0.2;
  // State: per-motor angle N(0, sigma^2) truncated to |angle| <= max [rad].
  double state_sigma = 0.025 * kPi / 180.0;
  double state_max = 0.05 * kPi / 180.0;

  void validate() const;
};

struct SimConfig {
  double duration = 10.0;     // [s]
  double control_dt = 0.01;   // [s]
  IntegratorKind integrator = IntegratorKind::kRK45;
  double abs_tol = 1e-8;
  double rel_tol = 1e-8;
  int rk4_substeps = 1;
  double min_step = 1e-9;     // [s]
  double baumgarte_gain = 10.0;  // [1/s]
  double projection_tol = 1e-6;  // [m]
  // Damped least-squares weight of the plant's motor-to-motion map. Zero is
  // the exact map, which diverges at singular configurations.
  double plant_damping = 1e-6;
  NoiseSpec noise;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

// Node velocities for a held motor command at the given poses.
using VelocityField = std::function<VectorXd(std::span<const Pose>)>;

struct StepStats {
  int steps = 0;
  int rejected = 0;
  bool projected = false;
  double residual_inf = 0.0;  // joint residual after the step
};

// Advances `poses` over dt with the motor command held. Quaternions carry the
// norm-restoring term and are renormalised at the end; a constraint
// projection follows if the joint residual exceeds the tolerance. Fixed nodes
// are not touched. Throws kIntegratorStepFailure when the adaptive step drops
// below min_step.
StepStats step(const MeshTopology& topology, std::vector<Pose>& poses, const VelocityField& velocity, double dt,
               const SimConfig& cfg);

// Convenience: the actuated solver at each stage maps `pi` to node velocities.
StepStats step(const MeshTopology& topology, std::vector<Pose>& poses, std::span<const int> rows,
               const VectorXd& pi, double dt, const SimConfig& cfg);

// Draws |eta| <= max_fraction by rejection from N(0, sigma^2).
double truncated_normal(Rng& rng, double sigma, double bound);

VectorXd apply_actuation_noise(const VectorXd& pi, const NoiseSpec& spec, Rng& rng);

// The controller's view of a state-noise perturbation: motor angles mapped by
// the actuation map to a pose displacement, then projected back onto the
// constraints. `poses` is left untouched.
std::vector<Pose> apply_state_noise(const MeshTopology& topology, std::span<const Pose> poses,
                                    std::span<const int> rows, const NoiseSpec& spec, Rng& rng,
                                    double damping = 0.0);

// Expected reduction factor E|eta| of the truncated normal above.
double expected_truncated_abs(double sigma, double bound);

struct MetricsFrame {
  double t = 0.0;
  std::vector<double> e_o;  // [rad] per node
  std::vector<double> e_p;  // [m] per node
  double e_o_mean = 0.0, e_o_p10 = 0.0, e_o_p90 = 0.0;
  double e_p_mean = 0.0, e_p_p10 = 0.0, e_p_p90 = 0.0;
  VectorXd pi;
  // Command after actuation noise; empty on the final frame, which is not applied.
  VectorXd pi_applied;
  // Hygiene, recorded alongside.
  double residual_inf = 0.0;
  double quat_norm_error = 0.0;
  double min_alignment = 1.0;  // smallest joint paired-axis alignment
};

// Linear interpolation between closest ranks (inclusive definition).
double percentile(std::vector<double> values, double q);

MetricsFrame metrics(const MeshTopology& topology, std::span<const Pose> poses, const ShapeField& shape, double t);

struct SimResult {
  std::vector<MetricsFrame> frames;                // one per control tick, plus the final time
  std::vector<std::vector<Pose>> trajectory;       // every `trajectory_stride` ticks
  std::vector<double> trajectory_times;
  std::vector<Pose> final_poses;
  int qp_fallbacks = 0;
  int integrator_steps = 0;
  int projections = 0;
};

struct RunOptions {
  int trajectory_stride = 1;
  // Called after each recorded frame; return false to stop early.
  std::function<bool(const MetricsFrame&)> on_frame;
};

SimResult run(const MeshTopology& topology, std::vector<Pose> poses, std::span<const int> rows,
              const ShapeField& shape, const ControllerConfig& controller, const SimConfig& cfg,
              const RunOptions& options = {});

}  // namespace morphmesh
