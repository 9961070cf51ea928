#include "morphmesh/controller.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "morphmesh/errors.hpp"

namespace morphmesh {

void ControllerConfig::validate() const {
  if (!(k > 0.0)) throw Error(ErrorCode::kConfig, "controller.k must be positive");
  if (!(sigma > 0.0)) throw Error(ErrorCode::kConfig, "controller.sigma must be positive");
  if (!(k + sigma_rate / sigma > 0.0)) throw Error(ErrorCode::kConfig, "controller gain k + sigma_rate/sigma must be positive");
  if (!(omega_max > 0.0)) throw Error(ErrorCode::kConfig, "controller.omega_max must be positive");
  if (!(alpha > 0.0 && alpha < kPi)) throw Error(ErrorCode::kConfig, "controller.alpha must lie in (0, 180) deg");
  if (!(control_dt > 0.0)) throw Error(ErrorCode::kConfig, "controller.control_dt must be positive");
  if (!(damping >= 0.0)) throw Error(ErrorCode::kConfig, "controller.damping must be >= 0");
  if (!(w_norm >= 0.0 && w_slew >= 0.0)) throw Error(ErrorCode::kConfig, "controller regularisation must be >= 0");
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(ErrorCode::kConfig, "controller weights must be >= 0");
  }
}

Vec3 reference_omega(const Vec3& z, const Vec3& n, const Vec3& n_dot, const ControllerConfig& cfg) {
  if (z.dot(n) < -1.0 + 1e-9) throw Error(ErrorCode::kAntipodalNormal, "node normal is opposite the desired normal");
  const double gain = cfg.k + cfg.sigma_rate / cfg.sigma;
  return n.cross(n_dot) + gain * z.cross(n) + cfg.lambda * z;
}

Vec3 perturb_antipodal(const Vec3& z, const Vec3& n) {
  Vec3 axis = n.cross(Vec3::UnitX());
  if (axis.norm() < 0.5) axis = n.cross(Vec3::UnitY());
  return exp_so3(1e-3 * axis.normalized()) * z;
}

MatrixXd damped_inverse(const MatrixXd& z_act, double damping) {
  if (damping < 0.0) throw Error(ErrorCode::kInvalidArgument, "damping must be >= 0");
  const auto n = z_act.cols();
  if (damping == 0.0) {
    if (z_act.rows() != n) throw Error(ErrorCode::kSingularMatrix, "undamped inverse of a non-square matrix");
    const Eigen::FullPivLU<MatrixXd> lu(z_act);
    if (!lu.isInvertible()) throw Error(ErrorCode::kSingularMatrix, "matrix is singular");
    return lu.inverse();
  }
  MatrixXd gram = z_act.transpose() * z_act;
  gram.diagonal().array() += damping;
  return gram.llt().solve(z_act.transpose());
}

MatrixXd damped_actuation_map(const MatrixXd& m, double damping) {
  if (damping == 0.0) return m;
  MatrixXd g = m.transpose() * m;
  g *= damping;
  g.diagonal().array() += 1.0;
  // (I + eps M'M) is symmetric positive definite; M (.)^-1 = ((.)^-1 M')'.
  return g.llt().solve(m.transpose()).transpose();
}

RangeRows range_of_motion_rows(const MeshTopology& topo, std::span<const Pose> poses, const MatrixXd& map,
                               const ControllerConfig& cfg) {
  const int dof = static_cast<int>(map.cols());
  const double cos_alpha = std::cos(cfg.alpha);
  RangeRows out;
  out.a.resize(topo.joint_count(), dof);
  out.lower.resize(topo.joint_count());
  out.upper.resize(topo.joint_count());
  for (int j = 0; j < topo.joint_count(); ++j) {
    const Joint& jt = topo.joints()[static_cast<std::size_t>(j)];
    const Mat3 rp = poses[static_cast<std::size_t>(jt.parent)].rotation();
    const Mat3 rel = rp.transpose() * poses[static_cast<std::size_t>(jt.child)].rotation();
    const Vec3 e = jt.direction == JointDirection::kRow ? Vec3::UnitX() : Vec3::UnitY();
    const double c0 = e.dot(rel * e);
    // e'(I + S(w) dt) R e = c0 + dt w'((R e) x e), with w the relative rate in
    // the parent frame.
    const Vec3 g = cfg.control_dt * (rel * e).cross(e);
    const MatrixXd w_rel = rp.transpose() * (map.middleRows(6 * jt.child + 3, 3) - map.middleRows(6 * jt.parent + 3, 3));
    out.a.row(j) = g.transpose() * w_rel;
    out.lower[j] = std::min(cos_alpha - c0, 0.0);
    out.upper[j] = 1.0 - c0;
  }
  return out;
}

QPProblem assemble_qp(const MeshTopology& topo, std::span<const Pose> poses, const MatrixXd& map,
                      std::span<const Vec3> references, const VectorXd& pi_prev, const ControllerConfig& cfg) {
  const int dof = static_cast<int>(map.cols());
  if (static_cast<int>(references.size()) != topo.node_count()) {
    throw Error(ErrorCode::kInvalidArgument, "one reference angular velocity per node");
  }
  QPProblem qp;
  qp.hessian = MatrixXd::Zero(dof, dof);
  qp.gradient = VectorXd::Zero(dof);
  // Stack weighted angular rows once, then one product for the Hessian.
  MatrixXd rows(3 * topo.node_count(), dof);
  VectorXd target(3 * topo.node_count());
  for (int node = 0; node < topo.node_count(); ++node) {
    const double s = std::sqrt(cfg.weight(node));
    rows.middleRows(3 * node, 3) = s * map.middleRows(6 * node + 3, 3);
    target.segment<3>(3 * node) = s * references[static_cast<std::size_t>(node)];
  }
  qp.hessian.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose());
  qp.hessian = qp.hessian.selfadjointView<Eigen::Lower>();
  qp.hessian.diagonal().array() += cfg.w_norm + cfg.w_slew;
  qp.gradient = -(rows.transpose() * target);
  if (pi_prev.size() == dof) qp.gradient -= cfg.w_slew * pi_prev;

  RangeRows rom = range_of_motion_rows(topo, poses, map, cfg);
  qp.constraint = std::move(rom.a);
  qp.lower = std::move(rom.lower);
  qp.upper = std::move(rom.upper);
  qp.box_lower = VectorXd::Constant(dof, -cfg.omega_max);
  qp.box_upper = VectorXd::Constant(dof, cfg.omega_max);
  return qp;
}

QPProblem assemble_qp(const MeshTopology& topo, std::span<const Pose> poses, const ConstraintSystem& system,
                      std::span<const int> rows, std::span<const Vec3> references, const VectorXd& pi_prev,
                      const ControllerConfig& cfg) {
  const MatrixXd map = system.z_v * damped_inverse(select_rows(system.z_nu, rows), cfg.damping);
  return assemble_qp(topo, poses, map, references, pi_prev, cfg);
}

Controller::Controller(ControllerConfig cfg, std::vector<int> rows, ShapeField shape)
    : cfg_(std::move(cfg)), rows_(std::move(rows)), shape_(std::move(shape)) {
  cfg_.validate();
}

MatrixXd Controller::actuation_map(const MeshTopology& topo, std::span<const Pose> poses) const {
  if (cfg_.damping > 0.0) return ActuatedVelocitySolver(topo, poses, rows_, cfg_.damping).map();
  const ActuatedVelocitySolver solver(topo, poses, rows_);
  if (solver.full_rank()) return damped_actuation_map(solver.map(), cfg_.damping);
  const ConstraintSystem cs = analyze_constraints(topo, poses);
  if (cs.dof != static_cast<int>(rows_.size())) {
    throw Error(ErrorCode::kSingularActuation, "mesh dof changed from " + std::to_string(rows_.size()) + " to " +
                                                   std::to_string(cs.dof));
  }
  return cs.z_v * damped_inverse(select_rows(cs.z_nu, rows_), 1e-12);
}

TickResult Controller::tick(const MeshTopology& topo, std::span<const Pose> poses, double t, const VectorXd& pi_prev) {
  const int nodes = topo.node_count();
  const int dof = static_cast<int>(rows_.size());
  TickResult result;
  if (dof == 0) {
    result.pi = VectorXd();
    return result;
  }

  std::vector<Vec3> normals(static_cast<std::size_t>(nodes));
  for (int k = 0; k < nodes; ++k) {
    const Vec3& p = poses[static_cast<std::size_t>(k)].position;
    normals[static_cast<std::size_t>(k)] = shape_.sample(p.x(), p.y(), t).normal;
  }
  const bool have_rate = previous_normals_.size() == normals.size() && t > previous_time_;
  std::vector<Vec3> references(static_cast<std::size_t>(nodes));
  for (int k = 0; k < nodes; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Vec3 n_dot = have_rate ? Vec3((normals[ku] - previous_normals_[ku]) / (t - previous_time_)) : Vec3::Zero();
    Vec3 z = poses[ku].rotation().col(2);
    if (z.dot(normals[ku]) < -1.0 + 1e-9) {
      z = perturb_antipodal(z, normals[ku]);
      ++result.antipodal_nodes;
    }
    references[ku] = topo.is_fixed(k) ? Vec3::Zero() : reference_omega(z, normals[ku], n_dot, cfg_);
  }
  previous_normals_ = std::move(normals);
  previous_time_ = t;

  const MatrixXd map = actuation_map(topo, poses);
  const QPProblem qp = assemble_qp(topo, poses, map, references, pi_prev, cfg_);
  const VectorXd warm = pi_prev.size() == dof ? pi_prev : VectorXd::Zero(dof);
  const QPSolution sol = solve_qp(qp, warm, cfg_.qp);
  result.status = sol.status;
  result.qp_iterations = sol.iterations;
  if (sol.status == QPStatus::kSolved) {
    result.pi = sol.x;
  } else {
    result.fallback = true;
    result.pi = warm.cwiseMax(qp.box_lower).cwiseMin(qp.box_upper);
  }
  return result;
}

}  // namespace morphmesh
