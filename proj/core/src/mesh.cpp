#include "morphmesh/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <Eigen/SparseQR>
#include <Eigen/OrderingMethods>
#include <Eigen/LU>

#include "morphmesh/errors.hpp"

namespace morphmesh {

namespace {

using Triplet = Eigen::Triplet<double>;

void add_block(std::vector<Triplet>& out, int row, int col, const Mat3& block) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (block(r, c) != 0.0) out.emplace_back(row + r, col + c, block(r, c));
    }
  }
}

void add_identity(std::vector<Triplet>& out, int row, int col, double sign) {
  for (int k = 0; k < 3; ++k) out.emplace_back(row + k, col + k, sign);
}

std::vector<Mat3> rotations(std::span<const Pose> poses) {
  std::vector<Mat3> out;
  out.reserve(poses.size());
  for (const auto& p : poses) out.push_back(p.rotation());
  return out;
}

// Joint velocity rows [I, -S(R_p d)] nu_p - [I, S(R_c d)] nu_c. `column` maps
// a node to its first velocity column (or -1 to drop it).
template <typename ColumnOf>
int append_joint_rows(const MeshTopology& topo, const std::vector<Mat3>& rot, ColumnOf column,
                      bool skip_fixed_pairs, std::vector<Triplet>& out, int row) {
  for (const Joint& joint : topo.joints()) {
    const int cp = column(joint.parent);
    const int cc = column(joint.child);
    if (skip_fixed_pairs && cp < 0 && cc < 0) continue;
    const Vec3 d = topo.joint_offset(joint);
    if (cp >= 0) {
      add_identity(out, row, cp, 1.0);
      add_block(out, row, cp + 3, -skew(rot[joint.parent] * d));
    }
    if (cc >= 0) {
      add_identity(out, row, cc, -1.0);
      add_block(out, row, cc + 3, -skew(rot[joint.child] * d));
    }
    row += 3;
  }
  return row;
}

SparseMatrix from_triplets(int rows, int cols, const std::vector<Triplet>& t) {
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  m.makeCompressed();
  return m;
}

// Free-node joint Jacobian and joint residual, used by the projection.
struct FreeSystem {
  SparseMatrix jacobian;
  VectorXd residual;
};

FreeSystem free_joint_system(const MeshTopology& topo, std::span<const Pose> poses) {
  const auto rot = rotations(poses);
  std::vector<Triplet> t;
  const int rows = append_joint_rows(
      topo, rot, [&](int node) { return topo.free_column(node); }, true, t, 0);
  FreeSystem sys;
  sys.jacobian = from_triplets(rows, 6 * static_cast<int>(topo.free_nodes().size()), t);
  sys.residual.resize(rows);
  int row = 0;
  for (const Joint& joint : topo.joints()) {
    if (topo.is_fixed(joint.parent) && topo.is_fixed(joint.child)) continue;
    const Vec3 d = topo.joint_offset(joint);
    sys.residual.segment<3>(row) = (poses[joint.parent].position + rot[joint.parent] * d) -
                                   (poses[joint.child].position - rot[joint.child] * d);
    row += 3;
  }
  return sys;
}

Pose tangent_pose(const ShapeField& field, double x, double y) {
  const SurfaceSample s = field.sample(x, y, 0.0);
  const Vec3 ex = Vec3(1.0, 0.0, s.dfdx).normalized();
  const Vec3 ez = s.normal;
  const Vec3 ey = ez.cross(ex).normalized();
  Mat3 r;
  r.col(0) = ey.cross(ez);
  r.col(1) = ey;
  r.col(2) = ez;
  return {Vec3(x, y, s.z), UnitQuaternion::from_rotation(r)};
}

std::vector<Pose> sample_surface(const MeshSpec& spec) {
  const double pitch = 2.0 * spec.half_side;
  std::vector<Pose> poses(static_cast<std::size_t>(spec.rows * spec.cols));
  std::optional<ShapeField> field;
  if (spec.surface.kind == InitSurface::Kind::kGraph) field.emplace(spec.surface.graph);
  const double r = spec.surface.cylinder_radius;
  const double step = 2.0 * std::atan(spec.half_side / r);
  for (int i = 0; i < spec.rows; ++i) {
    for (int j = 0; j < spec.cols; ++j) {
      Pose& pose = poses[static_cast<std::size_t>(i * spec.cols + j)];
      const double x = pitch * i;
      const double y = pitch * j;
      switch (spec.surface.kind) {
        case InitSurface::Kind::kFlat:
          pose.position = Vec3(x, y, 0.0);
          break;
        case InitSurface::Kind::kGraph:
          pose = tangent_pose(*field, x, y);
          break;
        case InitSurface::Kind::kCylinder: {
          // Adjacent tangent frames meet at the joint centre when the angular
          // step is 2 atan(l / r).
          const double th = step * j;
          pose.position = Vec3(x, r * std::sin(th), r * (1.0 - std::cos(th)));
          pose.orientation = UnitQuaternion::from_axis_angle(Vec3::UnitX(), th);
          break;
        }
      }
    }
  }
  return poses;
}

}  // namespace

MeshTopology::MeshTopology(int rows, int cols, double half_side, double square_length,
                           std::vector<int> fixed_nodes, std::vector<Pose> fixed_reference)
    : rows_(rows), cols_(cols), half_side_(half_side), square_length_(square_length) {
  if (rows < 1 || cols < 1) throw Error(ErrorCode::kInvalidArgument, "mesh needs n, m >= 1");
  if (!(half_side > 0.0)) throw Error(ErrorCode::kInvalidArgument, "half side l must be positive");
  if (fixed_nodes.size() != fixed_reference.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one reference pose per fixed node");
  }
  const int nodes = rows * cols;

  // Build order: first column chain along the row direction, then each new
  // column starting from the top, linking every node to its row and column
  // predecessors.
  for (int i = 1; i < rows; ++i) {
    joints_.push_back({node_index(i - 1, 0), node_index(i, 0), JointDirection::kRow});
  }
  for (int j = 1; j < cols; ++j) {
    joints_.push_back({node_index(0, j - 1), node_index(0, j), JointDirection::kColumn});
    for (int i = 1; i < rows; ++i) {
      joints_.push_back({node_index(i - 1, j), node_index(i, j), JointDirection::kRow});
      joints_.push_back({node_index(i, j - 1), node_index(i, j), JointDirection::kColumn});
    }
  }

  std::vector<std::pair<int, Pose>> fixed;
  for (std::size_t k = 0; k < fixed_nodes.size(); ++k) {
    const int node = fixed_nodes[k];
    if (node < 0 || node >= nodes) throw Error(ErrorCode::kInvalidArgument, "fixed node out of range");
    if (std::none_of(fixed.begin(), fixed.end(), [&](const auto& f) { return f.first == node; })) {
      fixed.emplace_back(node, fixed_reference[k]);
    }
  }
  if (std::none_of(fixed.begin(), fixed.end(), [](const auto& f) { return f.first == 0; })) {
    fixed.emplace_back(0, Pose{});
  }
  std::sort(fixed.begin(), fixed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  fixed_slot_.assign(static_cast<std::size_t>(nodes), -1);
  for (const auto& [node, pose] : fixed) {
    fixed_slot_[static_cast<std::size_t>(node)] = static_cast<int>(fixed_nodes_.size());
    fixed_nodes_.push_back(node);
    fixed_reference_.push_back(pose);
  }
  free_column_.assign(static_cast<std::size_t>(nodes), -1);
  for (int k = 0; k < nodes; ++k) {
    if (fixed_slot_[static_cast<std::size_t>(k)] < 0) {
      free_column_[static_cast<std::size_t>(k)] = 6 * static_cast<int>(free_nodes_.size());
      free_nodes_.push_back(k);
    }
  }
}

Vec3 MeshTopology::joint_offset(const Joint& joint) const {
  return joint.direction == JointDirection::kRow ? Vec3(half_side_, 0.0, 0.0) : Vec3(0.0, half_side_, 0.0);
}

std::string MeshTopology::joint_label(int joint, int axis) const {
  const Joint& jt = joints_.at(static_cast<std::size_t>(joint));
  const NodeId p = node_id(jt.parent);
  const NodeId c = node_id(jt.child);
  static constexpr char kAxis[] = {'x', 'y', 'z'};
  return "J(" + std::to_string(p.i + 1) + "," + std::to_string(p.j + 1) + ")-(" + std::to_string(c.i + 1) +
         "," + std::to_string(c.j + 1) + "):" + kAxis[axis];
}

std::string MeshTopology::relative_row_label(int row) const {
  if (row < 6) {
    static constexpr const char* kBase[] = {"vx", "vy", "vz", "wx", "wy", "wz"};
    return std::string("base:") + kBase[row];
  }
  return joint_label((row - 6) / 3, (row - 6) % 3);
}

VectorXd holonomic_residual(const MeshTopology& topo, std::span<const Pose> poses) {
  VectorXd g(topo.constraint_rows());
  int row = 0;
  for (const Joint& joint : topo.joints()) {
    const Vec3 d = topo.joint_offset(joint);
    const Pose& p = poses[joint.parent];
    const Pose& c = poses[joint.child];
    g.segment<3>(row) = (p.position + p.rotation() * d) - (c.position - c.rotation() * d);
    row += 3;
  }
  for (std::size_t k = 0; k < topo.fixed_nodes().size(); ++k) {
    const Pose& now = poses[topo.fixed_nodes()[k]];
    const Pose& ref = topo.fixed_reference()[k];
    g.segment<3>(row) = now.position - ref.position;
    g.segment<3>(row + 3) = log_so3(now.rotation() * ref.rotation().transpose());
    row += 6;
  }
  return g;
}

SparseMatrix constraint_jacobian_sparse(const MeshTopology& topo, std::span<const Pose> poses) {
  const auto rot = rotations(poses);
  std::vector<Triplet> t;
  int row = append_joint_rows(topo, rot, [](int node) { return 6 * node; }, false, t, 0);
  for (int node : topo.fixed_nodes()) {
    for (int k = 0; k < 6; ++k) t.emplace_back(row + k, 6 * node + k, 1.0);
    row += 6;
  }
  return from_triplets(topo.constraint_rows(), topo.velocity_dim(), t);
}

MatrixXd constraint_jacobian(const MeshTopology& topo, std::span<const Pose> poses) {
  return MatrixXd(constraint_jacobian_sparse(topo, poses));
}

SparseMatrix absolute_to_relative_map_sparse(const MeshTopology& topo, std::span<const Pose> poses) {
  std::vector<Triplet> t;
  for (int k = 0; k < 6; ++k) t.emplace_back(k, k, 1.0);
  int row = 6;
  for (const Joint& joint : topo.joints()) {
    const Mat3 rpt = poses[joint.parent].rotation().transpose();
    add_block(t, row, 6 * joint.child + 3, rpt);
    add_block(t, row, 6 * joint.parent + 3, -rpt);
    row += 3;
  }
  return from_triplets(topo.relative_dim(), topo.velocity_dim(), t);
}

MatrixXd absolute_to_relative_map(const MeshTopology& topo, std::span<const Pose> poses) {
  return MatrixXd(absolute_to_relative_map_sparse(topo, poses));
}

ConstraintSystem analyze_constraints(const MeshTopology& topo, std::span<const Pose> poses,
                                     std::optional<double> rank_tolerance) {
  ConstraintSystem cs;
  cs.residual = holonomic_residual(topo, poses);
  cs.jacobian = constraint_jacobian(topo, poses);
  const int cols = static_cast<int>(cs.jacobian.cols());
  Eigen::BDCSVD<MatrixXd> svd(cs.jacobian, Eigen::ComputeFullV);
  cs.singular_values = svd.singularValues();
  const double sigma_max = cs.singular_values.size() > 0 ? cs.singular_values[0] : 0.0;
  cs.rank_tolerance = rank_tolerance.value_or(
      sigma_max * static_cast<double>(std::max(cs.jacobian.rows(), cs.jacobian.cols())) *
      std::numeric_limits<double>::epsilon());
  cs.rank = static_cast<int>((cs.singular_values.array() > cs.rank_tolerance).count());
  cs.dof = cols - cs.rank;
  cs.z_v = svd.matrixV().rightCols(cs.dof);
  cs.z_nu = absolute_to_relative_map_sparse(topo, poses) * cs.z_v;
  return cs;
}

MatrixXd select_rows(const MatrixXd& m, std::span<const int> rows) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

RelativeVelocities relative_from_actuated(const ConstraintSystem& cs, std::span<const int> rows,
                                          const VectorXd& pi, double max_condition) {
  if (static_cast<int>(rows.size()) != cs.dof || pi.size() != cs.dof) {
    throw Error(ErrorCode::kSingularActuation, "actuation pattern size " + std::to_string(rows.size()) +
                                                   " does not match dof " + std::to_string(cs.dof));
  }
  RelativeVelocities out;
  if (cs.dof == 0) {
    out.relative = VectorXd::Zero(cs.z_nu.rows());
    out.absolute = VectorXd::Zero(cs.z_v.rows());
    return out;
  }
  const MatrixXd z_act = select_rows(cs.z_nu, rows);
  Eigen::JacobiSVD<MatrixXd> svd(z_act);
  const auto& s = svd.singularValues();
  const double cond = s[s.size() - 1] > 0.0 ? s[0] / s[s.size() - 1] : std::numeric_limits<double>::infinity();
  if (!(cond <= max_condition)) {
    throw Error(ErrorCode::kSingularActuation, "Z_act condition number " + std::to_string(cond) +
                                                   " exceeds " + std::to_string(max_condition));
  }
  const VectorXd xi = z_act.partialPivLu().solve(pi);
  out.relative = cs.z_nu * xi;
  out.absolute = cs.z_v * xi;
  return out;
}

struct ActuatedVelocitySolver::Impl {
  int node_count = 0;
  std::vector<int> free_nodes;
  int joint_rows = 0;
  int dof = 0;
  bool full_rank = false;
  // Square systems (the generic case) use LU; redundant joint rows need QR.
  bool square = false;
  // Damped mode factors the KKT system of the regularised least squares.
  bool damped = false;
  int cols = 0;
  SparseMatrix actuated;
  SparseMatrix kkt;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  Eigen::SparseQR<SparseMatrix, Eigen::COLAMDOrdering<int>> qr;

  template <typename Rhs>
  auto solve(const Rhs& rhs) const {
    using Result = Eigen::Matrix<double, Eigen::Dynamic, Rhs::ColsAtCompileTime>;
    if (!square) return Result(qr.solve(rhs));
    Result x = lu.solve(rhs);
    // One refinement pass; the regularised KKT system loses a few digits.
    if (damped) x += Result(lu.solve(Result(rhs - kkt * x)));
    return x;
  }

  // Right-hand side of the linear system for motor commands `pi` (dof x k).
  template <typename Pi>
  MatrixXd rhs(const Pi& pi) const {
    if (damped) {
      MatrixXd out = MatrixXd::Zero(cols + joint_rows, pi.cols());
      out.topRows(cols) = actuated.transpose() * pi;
      return out;
    }
    MatrixXd out = MatrixXd::Zero(joint_rows + dof, pi.cols());
    out.bottomRows(dof) = pi;
    return out;
  }

};

ActuatedVelocitySolver::ActuatedVelocitySolver(const MeshTopology& topo, std::span<const Pose> poses,
                                               std::span<const int> rows, double damping)
    : impl_(std::make_unique<Impl>()) {
  if (!(damping >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "damping must be >= 0");
  impl_->node_count = topo.node_count();
  impl_->free_nodes = topo.free_nodes();
  impl_->dof = static_cast<int>(rows.size());
  impl_->damped = damping > 0.0;
  const auto rot = rotations(poses);
  std::vector<Triplet> t;
  std::vector<Triplet> act;
  auto column = [&](int node) { return topo.free_column(node); };
  const int joint_rows = append_joint_rows(topo, rot, column, true, t, 0);
  impl_->joint_rows = joint_rows;
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const int r = rows[a];
    if (r < 6) continue;  // father twist: always zero
    const Joint& joint = topo.joints()[static_cast<std::size_t>((r - 6) / 3)];
    const Vec3 coeff = rot[joint.parent].col((r - 6) % 3);
    for (int k = 0; k < 3; ++k) {
      if (const int cc = column(joint.child); cc >= 0) act.emplace_back(static_cast<int>(a), cc + 3 + k, coeff[k]);
      if (const int cp = column(joint.parent); cp >= 0) act.emplace_back(static_cast<int>(a), cp + 3 + k, -coeff[k]);
    }
  }
  const int cols = 6 * static_cast<int>(impl_->free_nodes.size());
  impl_->cols = cols;
  if (cols == 0) {
    impl_->full_rank = impl_->dof == 0;
    return;
  }

  if (impl_->damped) {
    // [A'A + eps I, Jc'; Jc, 0] [nu; mu] = [A' pi; 0]. Where Jc itself loses
    // rank the zero block is replaced by -delta I, which keeps the system
    // regular at the cost of an O(delta) constraint violation.
    constexpr double kDelta = 1e-12;
    impl_->actuated = from_triplets(impl_->dof, cols, act);
    const SparseMatrix h = SparseMatrix(impl_->actuated.transpose()) * impl_->actuated;
    std::vector<Triplet> kkt;
    for (int c = 0; c < h.outerSize(); ++c) {
      for (SparseMatrix::InnerIterator it(h, c); it; ++it) kkt.emplace_back(it.row(), it.col(), it.value());
    }
    for (int c = 0; c < cols; ++c) kkt.emplace_back(c, c, damping);
    for (const Triplet& e : t) {
      kkt.emplace_back(cols + e.row(), e.col(), e.value());
      kkt.emplace_back(e.col(), cols + e.row(), e.value());
    }
    const int size = cols + joint_rows;
    impl_->square = true;
    for (double delta : {0.0, kDelta}) {
      std::vector<Triplet> reg = kkt;
      if (delta > 0.0) {
        for (int r = 0; r < joint_rows; ++r) reg.emplace_back(cols + r, cols + r, -delta);
      }
      impl_->kkt = from_triplets(size, size, reg);
      impl_->lu.compute(impl_->kkt);
      if (impl_->lu.info() != Eigen::Success) continue;
      const VectorXd ones = VectorXd::Ones(size);
      const VectorXd back = impl_->lu.solve(impl_->kkt * ones);
      impl_->full_rank = back.allFinite() && (back - ones).lpNorm<Eigen::Infinity>() < 1e-6;
      if (impl_->full_rank) break;
    }
    return;
  }

  for (const Triplet& e : act) t.emplace_back(joint_rows + e.row(), e.col(), e.value());
  const int row = joint_rows + impl_->dof;
  const SparseMatrix k = from_triplets(row, cols, t);
  if (row < cols) {
    impl_->full_rank = false;
    return;
  }
  if (row == cols) {
    impl_->square = true;
    impl_->lu.compute(k);
    if (impl_->lu.info() == Eigen::Success) {
      // SparseLU does not flag near-singular pivots; a round trip does.
      const VectorXd ones = VectorXd::Ones(cols);
      const VectorXd back = impl_->lu.solve(k * ones);
      impl_->full_rank = back.allFinite() && (back - ones).lpNorm<Eigen::Infinity>() < 1e-6;
    }
    return;
  }
  impl_->qr.compute(k);
  impl_->full_rank = impl_->qr.info() == Eigen::Success && impl_->qr.rank() == cols;
}

ActuatedVelocitySolver::~ActuatedVelocitySolver() = default;
ActuatedVelocitySolver::ActuatedVelocitySolver(ActuatedVelocitySolver&&) noexcept = default;
ActuatedVelocitySolver& ActuatedVelocitySolver::operator=(ActuatedVelocitySolver&&) noexcept = default;

bool ActuatedVelocitySolver::full_rank() const { return impl_->full_rank; }

VectorXd ActuatedVelocitySolver::solve(const VectorXd& pi) const {
  if (!impl_->full_rank) {
    throw Error(ErrorCode::kSingularActuation, "actuated rows do not give full actuation");
  }
  VectorXd out = VectorXd::Zero(6 * impl_->node_count);
  if (impl_->free_nodes.empty() || impl_->dof == 0) return out;
  const VectorXd sol = impl_->solve(impl_->rhs(pi));
  for (std::size_t k = 0; k < impl_->free_nodes.size(); ++k) {
    out.segment<6>(6 * impl_->free_nodes[k]) = sol.segment<6>(6 * static_cast<Eigen::Index>(k));
  }
  return out;
}

MatrixXd ActuatedVelocitySolver::map() const {
  if (!impl_->full_rank) {
    throw Error(ErrorCode::kSingularActuation, "actuated rows do not give full actuation");
  }
  MatrixXd out = MatrixXd::Zero(6 * impl_->node_count, impl_->dof);
  if (impl_->free_nodes.empty() || impl_->dof == 0) return out;
  const MatrixXd sol = impl_->solve(impl_->rhs(MatrixXd::Identity(impl_->dof, impl_->dof)));
  for (std::size_t k = 0; k < impl_->free_nodes.size(); ++k) {
    out.middleRows(6 * impl_->free_nodes[k], 6) = sol.middleRows(6 * static_cast<Eigen::Index>(k), 6);
  }
  return out;
}

void apply_displacement(const MeshTopology& topo, std::vector<Pose>& poses, const VectorXd& delta) {
  for (int node : topo.free_nodes()) {
    Pose& p = poses[static_cast<std::size_t>(node)];
    p.position += delta.segment<3>(6 * node);
    p.orientation = rotate_world(p.orientation, delta.segment<3>(6 * node + 3));
  }
}

ProjectionResult project_to_manifold(const MeshTopology& topo, std::vector<Pose>& poses, double tolerance,
                                     int max_iterations) {
  ProjectionResult result;
  FreeSystem sys = free_joint_system(topo, poses);
  double norm = sys.residual.size() ? sys.residual.lpNorm<Eigen::Infinity>() : 0.0;
  const int n_free = static_cast<int>(topo.free_nodes().size());
  while (norm > tolerance) {
    if (result.iterations >= max_iterations) {
      throw Error(ErrorCode::kInitFitFailure, "constraint projection did not converge (residual " +
                                                  std::to_string(norm) + " m)");
    }
    ++result.iterations;
    // Minimum-norm Gauss-Newton step; the small shift keeps J J^T definite
    // when joint rows are redundant.
    SparseMatrix jjt = sys.jacobian * SparseMatrix(sys.jacobian.transpose());
    for (int k = 0; k < jjt.rows(); ++k) jjt.coeffRef(k, k) += 1e-12;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(jjt);
    if (ldlt.info() != Eigen::Success) {
      throw Error(ErrorCode::kInitFitFailure, "projection normal matrix factorization failed");
    }
    const VectorXd step_free = -(sys.jacobian.transpose() * ldlt.solve(sys.residual));
    VectorXd step = VectorXd::Zero(topo.velocity_dim());
    for (int k = 0; k < n_free; ++k) {
      step.segment<6>(6 * topo.free_nodes()[static_cast<std::size_t>(k)]) = step_free.segment<6>(6 * k);
    }
    double scale = 1.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      std::vector<Pose> trial = poses;
      apply_displacement(topo, trial, scale * step);
      FreeSystem next = free_joint_system(topo, trial);
      const double next_norm = next.residual.lpNorm<Eigen::Infinity>();
      if (next_norm < norm) {
        poses = std::move(trial);
        sys = std::move(next);
        norm = next_norm;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      throw Error(ErrorCode::kInitFitFailure, "constraint projection stalled (residual " +
                                                  std::to_string(norm) + " m)");
    }
  }
  result.residual_inf = norm;
  return result;
}

Mesh build_mesh(const MeshSpec& spec) {
  if (spec.rows < 1 || spec.cols < 1) throw Error(ErrorCode::kInvalidArgument, "mesh needs n, m >= 1");
  if (!(spec.half_side > 0.0)) throw Error(ErrorCode::kInvalidArgument, "half side l must be positive");
  std::vector<Pose> poses = sample_surface(spec);

  // Fit with only the father pinned, then freeze the remaining fixed nodes at
  // their fitted poses so that the frozen set is itself consistent.
  MeshTopology father_only(spec.rows, spec.cols, spec.half_side, spec.square_length, {0}, {poses[0]});
  project_to_manifold(father_only, poses, spec.fit_tolerance, spec.max_fit_iterations);

  std::vector<int> fixed = {0};
  std::vector<Pose> reference = {poses[0]};
  for (const NodeId& id : spec.fixed_nodes) {
    if (id.i < 0 || id.i >= spec.rows || id.j < 0 || id.j >= spec.cols) {
      throw Error(ErrorCode::kInvalidArgument, "fixed node outside the mesh");
    }
    const int node = id.i * spec.cols + id.j;
    fixed.push_back(node);
    reference.push_back(poses[static_cast<std::size_t>(node)]);
  }
  Mesh mesh{MeshTopology(spec.rows, spec.cols, spec.half_side, spec.square_length, fixed, reference), {}};
  mesh.state.poses = std::move(poses);
  mesh.state.velocity = VectorXd::Zero(mesh.topology.velocity_dim());
  return mesh;
}

Mat3 joint_relative_rotation(const MeshTopology& topo, std::span<const Pose> poses, int joint) {
  const Joint& jt = topo.joints()[static_cast<std::size_t>(joint)];
  return poses[jt.parent].rotation().transpose() * poses[jt.child].rotation();
}

double joint_axis_alignment(const MeshTopology& topo, std::span<const Pose> poses, int joint) {
  const Joint& jt = topo.joints()[static_cast<std::size_t>(joint)];
  const int axis = jt.direction == JointDirection::kRow ? 0 : 1;
  return joint_relative_rotation(topo, poses, joint)(axis, axis);
}

}  // namespace morphmesh
