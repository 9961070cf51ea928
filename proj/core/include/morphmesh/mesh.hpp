#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "morphmesh/se3.hpp"
#include "morphmesh/shape.hpp"

namespace morphmesh {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

// Zero-based (row, column) node coordinates. Row index i advances along the
// world x axis ("row direction"), column index j along world y.
struct NodeId {
  int i = 0;
  int j = 0;

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

enum class JointDirection { kRow, kColumn };

// Spherical joint between `parent` (closer to the father node) and `child`.
// Row joints link (i-1, j) -> (i, j) with offset l*e1; column joints link
// (i, j-1) -> (i, j) with offset l*e2.
struct Joint {
  int parent = 0;
  int child = 0;
  JointDirection direction = JointDirection::kRow;
};

class MeshTopology {
 public:
  MeshTopology() = default;
  // `fixed_reference` holds one pose per entry of `fixed_nodes`. Node 0 (the
  // father) is always fixed and added if missing.
  MeshTopology(int rows, int cols, double half_side, double square_length,
               std::vector<int> fixed_nodes, std::vector<Pose> fixed_reference);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int node_count() const { return rows_ * cols_; }
  int joint_count() const { return static_cast<int>(joints_.size()); }
  double half_side() const { return half_side_; }
  double square_length() const { return square_length_; }

  int node_index(int i, int j) const { return i * cols_ + j; }
  int node_index(NodeId id) const { return node_index(id.i, id.j); }
  NodeId node_id(int index) const { return {index / cols_, index % cols_}; }

  const std::vector<Joint>& joints() const { return joints_; }
  // l*e1 for row joints, l*e2 for column joints (in the node frame).
  Vec3 joint_offset(const Joint& joint) const;

  const std::vector<int>& fixed_nodes() const { return fixed_nodes_; }
  const std::vector<Pose>& fixed_reference() const { return fixed_reference_; }
  bool is_fixed(int node) const { return fixed_slot_[node] >= 0; }
  int fixed_slot(int node) const { return fixed_slot_[node]; }
  // Nodes allowed to move, ascending.
  const std::vector<int>& free_nodes() const { return free_nodes_; }
  // Column offset of a free node in a free-only velocity vector, or -1.
  int free_column(int node) const { return free_column_[node]; }

  int velocity_dim() const { return 6 * node_count(); }
  int relative_dim() const { return 6 + 3 * joint_count(); }
  int constraint_rows() const { return 3 * joint_count() + 6 * static_cast<int>(fixed_nodes_.size()); }
  // 7 numbers per node (position + quaternion).
  int state_dim() const { return 7 * node_count(); }

  // "J(1,1)-(2,1):x" with one-based node indices.
  std::string joint_label(int joint, int axis) const;
  // Label of a row of the relative-coordinate basis Z_nu.
  std::string relative_row_label(int row) const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  double half_side_ = 0.0;
  double square_length_ = 0.0;
  std::vector<Joint> joints_;
  std::vector<int> fixed_nodes_;
  std::vector<Pose> fixed_reference_;
  std::vector<int> fixed_slot_;
  std::vector<int> free_nodes_;
  std::vector<int> free_column_;
};

// Node poses plus the stacked node velocity [v_1, w_1, ..., v_nm, w_nm]
// (world frame, m/s and rad/s).
struct MeshState {
  std::vector<Pose> poses;
  VectorXd velocity;
};

struct Mesh {
  MeshTopology topology;
  MeshState state;
};

struct InitSurface {
  enum class Kind { kFlat, kGraph, kCylinder };

  Kind kind = Kind::kFlat;
  // Used for kGraph: node positions are sampled on z = graph(x, y, 0).
  ShapeExpr graph;
  // Used for kCylinder: axis along world x, wrapping in +y towards +z.
  double cylinder_radius = 0.3;

  static InitSurface flat() { return {}; }
  static InitSurface from_graph(ShapeExpr g) { return {Kind::kGraph, std::move(g), 0.0}; }
  static InitSurface cylinder(double radius) { return {Kind::kCylinder, ShapeExpr(), radius}; }
};

struct MeshSpec {
  int rows = 1;
  int cols = 1;
  double half_side = 0.025;      // l: node centre to joint centre [m]
  double square_length = 0.025;  // L: node side [m]
  InitSurface surface;
  std::vector<NodeId> fixed_nodes = {{0, 0}};
  double fit_tolerance = 1e-10;  // [m]
  int max_fit_iterations = 200;
};

// Throws Error(kInitFitFailure) if the sampled surface cannot be projected
// onto the joint constraints.
Mesh build_mesh(const MeshSpec& spec);

// Per joint: (p_parent + R_parent d) - (p_child - R_child d); then per fixed
// node: position error and world-frame rotation-vector error.
VectorXd holonomic_residual(const MeshTopology& topology, std::span<const Pose> poses);

SparseMatrix constraint_jacobian_sparse(const MeshTopology& topology, std::span<const Pose> poses);
MatrixXd constraint_jacobian(const MeshTopology& topology, std::span<const Pose> poses);

// T with V = T nu: father velocity rows then R_parent^T (w_child - w_parent)
// per joint.
SparseMatrix absolute_to_relative_map_sparse(const MeshTopology& topology, std::span<const Pose> poses);
MatrixXd absolute_to_relative_map(const MeshTopology& topology, std::span<const Pose> poses);

struct ConstraintSystem {
  VectorXd residual;
  MatrixXd jacobian;
  VectorXd singular_values;
  double rank_tolerance = 0.0;
  int rank = 0;
  int dof = 0;
  MatrixXd z_v;   // 6nm x dof, orthonormal columns spanning null(Jc)
  MatrixXd z_nu;  // (6 + 3 Ns) x dof, T * z_v
};

// `rank_tolerance` defaults to sigma_max * max(rows, cols) * eps.
ConstraintSystem analyze_constraints(const MeshTopology& topology, std::span<const Pose> poses,
                                     std::optional<double> rank_tolerance = std::nullopt);

struct RelativeVelocities {
  VectorXd relative;  // V, length 6 + 3 Ns
  VectorXd absolute;  // nu, length 6nm
};

// Lemma route: V = Z_nu Z_act^-1 pi, nu = Z_v Z_act^-1 pi. Throws
// kSingularActuation when rows.size() != dof or cond(Z_act) > max_condition.
RelativeVelocities relative_from_actuated(const ConstraintSystem& system, std::span<const int> rows,
                                          const VectorXd& pi, double max_condition = 1e12);

MatrixXd select_rows(const MatrixXd& m, std::span<const int> rows);

// Sparse route to the same map. Solves [Jc; S_act T] nu = [0; pi] on the free
// nodes; the stacked matrix has full column rank exactly when Z_act is
// invertible. Fixed-node velocities are exactly zero.
//
// With damping > 0 it instead returns the damped least-squares motion
// argmin |S_act T nu - pi|^2 + damping |nu|^2 subject to Jc nu = 0, which is
// Z_v (Z_act'Z_act + damping I)^-1 Z_act' pi and stays bounded through
// singular configurations.
class ActuatedVelocitySolver {
 public:
  ActuatedVelocitySolver(const MeshTopology& topology, std::span<const Pose> poses,
                         std::span<const int> rows, double damping = 0.0);
  ~ActuatedVelocitySolver();
  ActuatedVelocitySolver(ActuatedVelocitySolver&&) noexcept;
  ActuatedVelocitySolver& operator=(ActuatedVelocitySolver&&) noexcept;

  // False when the stacked matrix is rank deficient (loss of full actuation).
  // Always true in damped mode unless the factorisation itself fails.
  bool full_rank() const;
  VectorXd solve(const VectorXd& pi) const;
  // M = Z_v Z_act^-1 (6nm x dof).
  MatrixXd map() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Applies a small world-frame twist: p += v, R <- exp(w) R, to free nodes.
void apply_displacement(const MeshTopology& topology, std::vector<Pose>& poses, const VectorXd& delta);

struct ProjectionResult {
  int iterations = 0;
  double residual_inf = 0.0;
};

// Gauss-Newton projection of the free-node poses onto g = 0 (minimum-norm
// steps). Fixed nodes are never touched. Throws kInitFitFailure when the
// residual does not drop below `tolerance` within `max_iterations`.
ProjectionResult project_to_manifold(const MeshTopology& topology, std::vector<Pose>& poses,
                                     double tolerance, int max_iterations = 50);

// R_parent^T R_child.
Mat3 joint_relative_rotation(const MeshTopology& topology, std::span<const Pose> poses, int joint);

// e_a^T R_rel e_a with a = x for row joints and a = y for column joints.
double joint_axis_alignment(const MeshTopology& topology, std::span<const Pose> poses, int joint);

}  // namespace morphmesh
