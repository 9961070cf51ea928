#pragma once

#include <optional>
#include <span>
#include <vector>

#include "morphmesh/actuation.hpp"
#include "morphmesh/mesh.hpp"
#include "morphmesh/qp.hpp"
#include "morphmesh/shape.hpp"

namespace morphmesh {

struct ControllerConfig {
  double k = 2.0;           // alignment gain [1/s]
  double lambda = 0.0;      // spin about the node normal [1/s]
  double sigma = 1.0;       // gain scaling, > 0
  double sigma_rate = 0.0;  // its time derivative [1/s]
  // Per-node tracking weights in node-index order; empty means all 1.
  std::vector<double> weights;
  double omega_max = 5.0 * kPi / 180.0;  // [rad/s]
  double alpha = 50.0 * kPi / 180.0;     // joint range of motion [rad]
  double control_dt = 0.01;              // [s]
  double damping = 1e-6;
  double w_norm = 1e-4;
  double w_slew = 1e-2;
  QPSettings qp;

  void validate() const;
  double weight(int node) const { return weights.empty() ? 1.0 : weights[static_cast<std::size_t>(node)]; }
};

// w* = n x n_dot + (k + sigma_rate / sigma) z x n + lambda z. Throws
// Error(kAntipodalNormal) when z and n are (numerically) opposite.
Vec3 reference_omega(const Vec3& z, const Vec3& n, const Vec3& n_dot, const ControllerConfig& cfg);

// Tilts z by 1e-3 rad about an axis orthogonal to n, moving it off the
// antipode of n.
Vec3 perturb_antipodal(const Vec3& z, const Vec3& n);

// (Z'Z + damping I)^-1 Z'. Throws kSingularMatrix only for damping 0 and a
// singular input.
MatrixXd damped_inverse(const MatrixXd& z_act, double damping);

// Given M = Z_v Z_act^-1 with an orthonormal Z_v, returns
// Z_v (Z_act'Z_act + damping I)^-1 Z_act' = M (I + damping M'M)^-1 without
// needing Z_v itself.
MatrixXd damped_actuation_map(const MatrixXd& m, double damping);

// Linear motor-velocity rows for the joint range-of-motion limits: alignment
// of the joint's paired axis after one forward-Euler step stays in
// [cos(alpha), 1]. A joint already outside the range may not get worse.
struct RangeRows {
  MatrixXd a;
  VectorXd lower;
  VectorXd upper;
};
RangeRows range_of_motion_rows(const MeshTopology& topology, std::span<const Pose> poses, const MatrixXd& map,
                               const ControllerConfig& cfg);

// `map` is the (damped) 6nm x dof motor-to-node-velocity map; `references`
// holds one w* per node.
QPProblem assemble_qp(const MeshTopology& topology, std::span<const Pose> poses, const MatrixXd& map,
                      std::span<const Vec3> references, const VectorXd& pi_prev, const ControllerConfig& cfg);

// Dense route: map from the constraint system and pattern rows.
QPProblem assemble_qp(const MeshTopology& topology, std::span<const Pose> poses, const ConstraintSystem& system,
                      std::span<const int> rows, std::span<const Vec3> references, const VectorXd& pi_prev,
                      const ControllerConfig& cfg);

struct TickResult {
  VectorXd pi;
  QPStatus status = QPStatus::kSolved;
  int qp_iterations = 0;
  bool fallback = false;  // QP failed; previous command clamped into the box
  int antipodal_nodes = 0;
};

// Per-simulation controller state: the desired normals of the previous tick
// for the backward-difference normal rate.
class Controller {
 public:
  Controller(ControllerConfig cfg, std::vector<int> rows, ShapeField shape);

  const ControllerConfig& config() const { return cfg_; }
  const std::vector<int>& rows() const { return rows_; }

  // Motor-to-node-velocity map at `poses`. Damped through the sparse KKT
  // route; with zero damping the exact map, falling back to the dense route
  // when the sparse system is rank deficient.
  MatrixXd actuation_map(const MeshTopology& topology, std::span<const Pose> poses) const;

  TickResult tick(const MeshTopology& topology, std::span<const Pose> poses, double t, const VectorXd& pi_prev);

  // Forget the stored normals (next tick uses a zero normal rate).
  void reset() { previous_normals_.clear(); }

 private:
  ControllerConfig cfg_;
  std::vector<int> rows_;
  ShapeField shape_;
  std::vector<Vec3> previous_normals_;
  double previous_time_ = 0.0;
};

}  // namespace morphmesh
