#include "morphmesh/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "morphmesh/errors.hpp"
#include "morphmesh/io.hpp"
#include "morphmesh/random.hpp"

namespace morphmesh {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_file(const PipelineOptions& options, const std::string& name, const std::string& content) {
  if (options.out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw Error(ErrorCode::kConfig, "cannot create output directory '" + options.out_dir + "': " + ec.message());
  const fs::path path = fs::path(options.out_dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kConfig, "cannot write '" + path.string() + "'");
  out << content;
}

void write_json(const PipelineOptions& options, const std::string& name, const json& j) {
  write_file(options, name, j.dump(2) + "\n");
}

void write_resolved_config(const Scenario& scenario, const PipelineOptions& options) {
  write_json(options, "resolved_config.json", scenario_to_json(scenario));
}

std::ostream* log_of(const PipelineOptions& options) { return options.log; }

template <typename... Args>
void say(const PipelineOptions& options, const Args&... args) {
  if (std::ostream* out = log_of(options)) {
    (*out << ... << args);
    *out << '\n' << std::flush;  // progress stays visible when piped
  }
}

std::string fixed(double value, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << value;
  return s.str();
}

std::string histogram_text(const std::vector<int>& histogram) {
  std::string out;
  for (std::size_t k = 0; k < histogram.size(); ++k) {
    if (k) out += ", ";
    out += std::to_string(k) + ":" + std::to_string(histogram[k]);
  }
  return out;
}

ActuationPattern place(const Scenario& scenario, const Mesh& mesh, const ConstraintSystem& cs, PlaceReport& report) {
  report.dof = cs.dof;
  if (cs.dof == 0) {
    report.pattern.motors_per_joint = motors_per_joint({}, mesh.topology.joint_count());
    report.converged = true;
    return report.pattern;
  }
  const EvolveResult evolved = evolve(cs.z_nu, scenario.ga);
  report.generations = evolved.generations;
  report.converged = evolved.converged;
  report.pattern = place_actuators(evolved, mesh.topology, mesh.state.poses, scenario.ga);
  return report.pattern;
}

VectorXd frame_pi(const MetricsFrame& f, int dof) { return f.pi.size() == dof ? f.pi : VectorXd::Zero(dof); }

std::string plot_errors_csv(const SimResult& result, int stride) {
  std::string out = "# t [s]; orientation error [deg]; position error [mm]\n";
  out += "t,eO_mean_deg,eO_p10_deg,eO_p90_deg,eP_mean_mm,eP_p10_mm,eP_p90_mm\n";
  for (std::size_t k = 0; k < result.frames.size(); ++k) {
    if (k % static_cast<std::size_t>(stride) != 0 && k + 1 != result.frames.size()) continue;
    const MetricsFrame& f = result.frames[k];
    for (double v : {f.t, rad_to_deg(f.e_o_mean), rad_to_deg(f.e_o_p10), rad_to_deg(f.e_o_p90), 1e3 * f.e_p_mean,
                     1e3 * f.e_p_p10}) {
      out += format_double(v) + ",";
    }
    out += format_double(1e3 * f.e_p_p90) + "\n";
  }
  return out;
}

std::string plot_pi_csv(const SimResult& result, int dof, int stride) {
  std::string out = "# t [s]; motor velocities [deg/s]\nt";
  for (int a = 0; a < dof; ++a) out += ",pi_" + std::to_string(a + 1) + "_deg_s";
  out += "\n";
  for (std::size_t k = 0; k < result.frames.size(); ++k) {
    if (k % static_cast<std::size_t>(stride) != 0 && k + 1 != result.frames.size()) continue;
    const MetricsFrame& f = result.frames[k];
    out += format_double(f.t);
    const VectorXd pi = frame_pi(f, dof);
    for (int a = 0; a < dof; ++a) out += "," + format_double(rad_to_deg(pi[a]));
    out += "\n";
  }
  return out;
}

std::string trajectory_csv(const MeshTopology& topo, const SimResult& result) {
  std::string out = trajectory_header(topo) + "\n";
  for (std::size_t k = 0; k < result.trajectory.size(); ++k) {
    out += trajectory_row(result.trajectory_times[k], result.trajectory[k]) + "\n";
  }
  return out;
}

// --- verify ----------------------------------------------------------------

class Suite {
 public:
  void check(std::string name, double value, double tolerance, std::string detail = {}) {
    InvariantResult r;
    r.name = std::move(name);
    r.value = value;
    r.tolerance = tolerance;
    r.passed = std::isfinite(value) && value <= tolerance;
    r.detail = std::move(detail);
    merge(std::move(r));
  }

  // Failures that are not a measured quantity.
  void fail(std::string name, std::string detail) {
    InvariantResult r;
    r.name = std::move(name);
    r.value = std::numeric_limits<double>::infinity();
    r.passed = false;
    r.detail = std::move(detail);
    merge(std::move(r));
  }

  VerifyReport report() const {
    VerifyReport out;
    out.invariants = results_;
    out.passed = std::all_of(results_.begin(), results_.end(), [](const InvariantResult& r) { return r.passed; });
    return out;
  }

 private:
  // One entry per invariant, keeping the worst value over all samples.
  void merge(InvariantResult r) {
    for (InvariantResult& existing : results_) {
      if (existing.name != r.name) continue;
      const bool worse = existing.passed ? (!r.passed || r.value > existing.value) : false;
      if (worse) existing = std::move(r);
      return;
    }
    results_.push_back(std::move(r));
  }

  std::vector<InvariantResult> results_;
};

double max_abs(const MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

void check_state(Suite& suite, const Scenario& scenario, const MeshTopology& topo, const std::vector<Pose>& poses,
                 Rng& rng, const std::string& where) {
  double quat = 0.0;
  for (const Pose& p : poses) quat = std::max(quat, std::abs(p.orientation.coeffs().norm() - 1.0));
  suite.check("quaternion_unit_norm", quat, 1e-9, where);

  const VectorXd g = holonomic_residual(topo, poses);
  suite.check("holonomic_residual", g.size() ? g.lpNorm<Eigen::Infinity>() : 0.0, 1e-6, where);

  const ConstraintSystem cs = analyze_constraints(topo, poses);
  suite.check("nullspace_annihilation", max_abs(cs.jacobian * cs.z_v), 1e-8, where);
  suite.check("nullspace_orthonormal",
              max_abs(cs.z_v.transpose() * cs.z_v - MatrixXd::Identity(cs.dof, cs.dof)), 1e-8, where);
  suite.check("dof_count", std::abs(cs.dof - (topo.velocity_dim() - cs.rank)), 0.0, where);

  // Fixed nodes cannot move in any feasible direction.
  double pinned = 0.0;
  for (int node = 0; node < topo.node_count(); ++node) {
    if (topo.is_fixed(node)) pinned = std::max(pinned, max_abs(cs.z_v.middleRows(6 * node, 6)));
  }
  suite.check("fixed_nodes_pinned", pinned, 1e-8, where);

  // Directional finite differences of g against Jc along random directions.
  double fd_error = 0.0;
  constexpr double kStep = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    VectorXd dir(topo.velocity_dim());
    for (Eigen::Index k = 0; k < dir.size(); ++k) dir[k] = standard_normal(rng);
    for (int node = 0; node < topo.node_count(); ++node) {
      if (topo.is_fixed(node)) dir.segment<6>(6 * node).setZero();
    }
    if (dir.norm() == 0.0) break;
    dir.normalize();
    std::vector<Pose> plus = poses;
    std::vector<Pose> minus = poses;
    apply_displacement(topo, plus, kStep * dir);
    apply_displacement(topo, minus, -kStep * dir);
    const VectorXd fd = (holonomic_residual(topo, plus) - holonomic_residual(topo, minus)) / (2.0 * kStep);
    const VectorXd analytic = cs.jacobian * dir;
    const double scale = std::max(analytic.norm(), 1e-12);
    fd_error = std::max(fd_error, (fd - analytic).norm() / scale);
  }
  suite.check("jacobian_finite_difference", fd_error, 1e-5, where);

  // Target normals: symbolic partials against central differences.
  const ShapeField field(scenario.target.shape.build());
  double grad_error = 0.0;
  constexpr double kH = 1e-6;
  for (const Pose& p : poses) {
    const double x = p.position.x();
    const double y = p.position.y();
    const SurfaceSample s = field.sample(x, y, 0.0);
    const double fx = (field.height(x + kH, y, 0.0) - field.height(x - kH, y, 0.0)) / (2.0 * kH);
    const double fy = (field.height(x, y + kH, 0.0) - field.height(x, y - kH, 0.0)) / (2.0 * kH);
    const double scale = std::max({std::abs(s.dfdx), std::abs(s.dfdy), 1.0});
    grad_error = std::max({grad_error, std::abs(fx - s.dfdx) / scale, std::abs(fy - s.dfdy) / scale});
  }
  suite.check("shape_gradient", grad_error, 1e-6, where);

  if (cs.dof == 0) return;
  const std::vector<int> rows = pivoted_qr_rows(cs.z_nu);
  const MatrixXd z_act = select_rows(cs.z_nu, rows);
  const Eigen::FullPivLU<MatrixXd> lu(z_act);
  if (!lu.isInvertible()) {
    suite.fail("actuation_round_trip", where + ": pivoted-QR rows are singular");
    return;
  }
  VectorXd pi(cs.dof);
  for (Eigen::Index k = 0; k < pi.size(); ++k) pi[k] = standard_normal(rng);
  const VectorXd back = z_act * lu.solve(pi);
  suite.check("actuation_round_trip", (back - pi).lpNorm<Eigen::Infinity>(), 1e-8, where);

  const ActuatedVelocitySolver solver(topo, poses, rows);
  if (!solver.full_rank()) {
    suite.fail("sparse_dense_agreement", where + ": sparse actuated system is rank deficient");
  } else {
    const MatrixXd dense = cs.z_v * lu.inverse();
    const MatrixXd sparse = solver.map();
    suite.check("sparse_dense_agreement", max_abs(dense - sparse) / std::max(max_abs(dense), 1e-12), 1e-8, where);
  }

}

}  // namespace

Mesh build_scenario_mesh(const Scenario& scenario) {
  Mesh mesh = build_mesh(scenario.mesh.to_spec());
  const std::string& path = scenario.mesh.state_snapshot_path;
  if (path.empty()) return mesh;
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "mesh.state_snapshot_path: cannot open '" + path + "'");
  const std::vector<NodeRecord> records = read_snapshot(in);
  if (static_cast<int>(records.size()) != mesh.topology.node_count()) {
    throw Error(ErrorCode::kConfig, "mesh.state_snapshot_path: expected " +
                                        std::to_string(mesh.topology.node_count()) + " nodes, got " +
                                        std::to_string(records.size()));
  }
  std::vector<bool> seen(records.size(), false);
  for (const NodeRecord& r : records) {
    if (r.node.i < 0 || r.node.i >= mesh.topology.rows() || r.node.j < 0 || r.node.j >= mesh.topology.cols()) {
      throw Error(ErrorCode::kConfig, "mesh.state_snapshot_path: node outside the mesh");
    }
    const auto k = static_cast<std::size_t>(mesh.topology.node_index(r.node));
    if (seen[k]) throw Error(ErrorCode::kConfig, "mesh.state_snapshot_path: duplicate node");
    seen[k] = true;
    mesh.state.poses[k] = r.pose;
  }
  return mesh;
}

AnalyzeReport cmd_analyze(const Scenario& scenario, const PipelineOptions& options) {
  const Mesh mesh = build_scenario_mesh(scenario);
  const MeshTopology& topo = mesh.topology;
  const ConstraintSystem cs = analyze_constraints(topo, mesh.state.poses);
  AnalyzeReport r;
  r.nodes = topo.node_count();
  r.joints = topo.joint_count();
  r.fixed_nodes = topo.node_count() - static_cast<int>(topo.free_nodes().size());
  r.state_dim = topo.state_dim();
  r.velocity_dim = topo.velocity_dim();
  r.constraint_rows = static_cast<int>(cs.jacobian.rows());
  r.rank = cs.rank;
  r.dof = cs.dof;
  r.residual_inf = cs.residual.size() ? cs.residual.lpNorm<Eigen::Infinity>() : 0.0;
  r.smallest_singular_value = cs.rank > 0 ? cs.singular_values[cs.rank - 1] : 0.0;

  say(options, "mesh               ", topo.rows(), " x ", topo.cols());
  say(options, "nodes              ", r.nodes);
  say(options, "joints             ", r.joints);
  say(options, "fixed nodes        ", r.fixed_nodes);
  say(options, "state dimension    ", r.state_dim);
  say(options, "velocity dimension ", r.velocity_dim);
  say(options, "constraint rows    ", r.constraint_rows);
  say(options, "rank               ", r.rank);
  say(options, "dof                ", r.dof);
  say(options, "residual [m]       ", format_double(r.residual_inf));
  write_json(options, "analyze.json", to_json(r));
  write_resolved_config(scenario, options);
  return r;
}

json to_json(const AnalyzeReport& r) {
  return {{"nodes", r.nodes},
          {"joints", r.joints},
          {"fixed_nodes", r.fixed_nodes},
          {"state_dim", r.state_dim},
          {"velocity_dim", r.velocity_dim},
          {"constraint_rows", r.constraint_rows},
          {"rank", r.rank},
          {"dof", r.dof},
          {"residual_inf_m", r.residual_inf},
          {"smallest_singular_value", r.smallest_singular_value}};
}

PlaceReport cmd_place(const Scenario& scenario, const PipelineOptions& options) {
  const Stopwatch clock;
  const Mesh mesh = build_scenario_mesh(scenario);
  const ConstraintSystem cs = analyze_constraints(mesh.topology, mesh.state.poses);
  PlaceReport report;
  place(scenario, mesh, cs, report);
  report.wall_time_s = clock.seconds();
  if (report.dof == 0) {
    say(options, "dof 0: no motors needed");
  } else {
    say(options, "dof                ", report.dof);
    say(options, "generations        ", report.generations, report.converged ? " (converged)" : "");
    say(options, "fitness            ", format_double(report.pattern.fitness));
    say(options, "|det Z_act|        ", format_double(report.pattern.determinant));
    say(options, "sensitivity        ", format_double(report.pattern.sensitivity));
    say(options, "motors per joint   ", histogram_text(report.pattern.motors_per_joint));
  }
  write_json(options, "pattern.json", pattern_to_json(report.pattern, mesh.topology, report.dof, scenario.seed));
  write_resolved_config(scenario, options);
  return report;
}

std::string metrics_csv(const SimResult& result, int dof) {
  std::string out = "# t [s]; eO_* [rad]; eP_* [m]; pi_* [rad/s]\n";
  out += "t,eO_mean,eO_p10,eO_p90,eP_mean,eP_p10,eP_p90";
  for (int a = 0; a < dof; ++a) out += ",pi_" + std::to_string(a + 1);
  out += "\n";
  for (const MetricsFrame& f : result.frames) {
    out += format_double(f.t);
    for (double v : {f.e_o_mean, f.e_o_p10, f.e_o_p90, f.e_p_mean, f.e_p_p10, f.e_p_p90}) out += "," + format_double(v);
    const VectorXd pi = frame_pi(f, dof);
    for (int a = 0; a < dof; ++a) out += "," + format_double(pi[a]);
    out += "\n";
  }
  return out;
}

SimulateOutput cmd_simulate(const Scenario& scenario, const PipelineOptions& options) {
  const Stopwatch clock;
  scenario.validate();
  const Mesh mesh = build_scenario_mesh(scenario);
  const MeshTopology& topo = mesh.topology;
  const ConstraintSystem cs = analyze_constraints(topo, mesh.state.poses);

  SimulateOutput out;
  RunReport& report = out.report;
  report.name = scenario.name;
  report.seed = scenario.seed;
  report.config_hash = hex64(config_hash(scenario));
  report.dof = cs.dof;
  report.joints = topo.joint_count();

  if (!scenario.pattern_path.empty()) {
    std::ifstream in(scenario.pattern_path);
    if (!in) throw Error(ErrorCode::kConfig, "ga.pattern_path: cannot open '" + scenario.pattern_path + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::kConfig, "ga.pattern_path: " + std::string(e.what()));
    }
    report.pattern = pattern_from_json(j, topo, cs.dof);
    say(options, "pattern loaded from ", scenario.pattern_path);
  } else {
    PlaceReport placed;
    report.pattern = place(scenario, mesh, cs, placed);
    say(options, "pattern placed: |det Z_act| ", format_double(report.pattern.determinant), ", motors per joint ",
        histogram_text(report.pattern.motors_per_joint));
  }
  write_json(options, "pattern.json", pattern_to_json(report.pattern, topo, cs.dof, scenario.seed));
  write_resolved_config(scenario, options);

  const ShapeField shape = target_field(scenario, mesh);
  RunOptions run_options;
  run_options.trajectory_stride = scenario.outputs.trajectory ? scenario.outputs.trajectory_stride
                                                              : std::numeric_limits<int>::max();
  const auto ticks_per_second = static_cast<int>(std::llround(1.0 / scenario.sim.control_dt));
  int tick = 0;
  run_options.on_frame = [&](const MetricsFrame& f) {
    if (ticks_per_second > 0 && tick++ % ticks_per_second == 0) {
      say(options, "t ", fixed(f.t, 2), " s   eO ", fixed(rad_to_deg(f.e_o_mean), 3), " deg   eP ",
          fixed(1e3 * f.e_p_mean, 3), " mm");
    }
    return true;
  };
  out.result = run(topo, mesh.state.poses, report.pattern.rows, shape, scenario.controller, scenario.sim, run_options);
  const SimResult& result = out.result;

  if (!result.frames.empty()) {
    const MetricsFrame& first = result.frames.front();
    const MetricsFrame& last = result.frames.back();
    report.initial_e_o_deg = rad_to_deg(first.e_o_mean);
    report.initial_e_p_mm = 1e3 * first.e_p_mean;
    report.final_e_o_deg = rad_to_deg(last.e_o_mean);
    report.final_e_p_mm = 1e3 * last.e_p_mean;
    report.final_time_s = last.t;
  }
  for (const MetricsFrame& f : result.frames) {
    if (f.pi.size()) report.max_abs_pi_deg_s = std::max(report.max_abs_pi_deg_s, rad_to_deg(f.pi.cwiseAbs().maxCoeff()));
    report.min_joint_alignment = std::min(report.min_joint_alignment, f.min_alignment);
    report.max_residual_m = std::max(report.max_residual_m, f.residual_inf);
    report.max_quat_norm_error = std::max(report.max_quat_norm_error, f.quat_norm_error);
  }
  report.qp_fallbacks = result.qp_fallbacks;
  report.integrator_steps = result.integrator_steps;
  report.projections = result.projections;

  const std::string metrics = metrics_csv(result, cs.dof);
  report.metrics_hash = fnv1a64(metrics);
  write_file(options, "metrics.csv", metrics);
  if (scenario.outputs.trajectory) write_file(options, "trajectory.csv", trajectory_csv(topo, result));
  if (scenario.outputs.plot_data) {
    write_file(options, "plot_errors.csv", plot_errors_csv(result, scenario.outputs.plot_stride));
    write_file(options, "plot_pi.csv", plot_pi_csv(result, cs.dof, scenario.outputs.plot_stride));
  }
  report.wall_time_s = clock.seconds();
  write_json(options, "report.json", to_json(report));
  say(options, "final eO ", fixed(report.final_e_o_deg, 3), " deg, eP ", fixed(report.final_e_p_mm, 3), " mm at t ",
      fixed(report.final_time_s, 2), " s (", fixed(report.wall_time_s, 1), " s wall)");
  return out;
}

json to_json(const RunReport& r) {
  return {{"name", r.name},
          {"seed", r.seed},
          {"config_hash", r.config_hash},
          {"dof", r.dof},
          {"joints", r.joints},
          {"pattern",
           {{"rows", r.pattern.rows},
            {"fitness", r.pattern.fitness},
            {"determinant", r.pattern.determinant},
            {"sensitivity", r.pattern.sensitivity},
            {"motors_per_joint", r.pattern.motors_per_joint}}},
          {"initial_mean_e_o_deg", r.initial_e_o_deg},
          {"initial_mean_e_p_mm", r.initial_e_p_mm},
          {"final_mean_e_o_deg", r.final_e_o_deg},
          {"final_mean_e_p_mm", r.final_e_p_mm},
          {"final_time_s", r.final_time_s},
          {"max_abs_pi_deg_s", r.max_abs_pi_deg_s},
          {"min_joint_alignment", r.min_joint_alignment},
          {"max_residual_m", r.max_residual_m},
          {"max_quat_norm_error", r.max_quat_norm_error},
          {"qp_fallbacks", r.qp_fallbacks},
          {"integrator_steps", r.integrator_steps},
          {"projections", r.projections},
          {"wall_time_s", r.wall_time_s},
          {"metrics_hash", hex64(r.metrics_hash)}};
}

VerifyReport cmd_verify(const Scenario& scenario, const PipelineOptions& options, int samples) {
  Suite suite;
  Rng rng(derive_seed(scenario.seed, RngStream::kVerify));
  Mesh mesh;
  try {
    mesh = build_scenario_mesh(scenario);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    suite.fail("mesh_construction", e.what());
    return suite.report();
  }
  const MeshTopology& topo = mesh.topology;
  check_state(suite, scenario, topo, mesh.state.poses, rng, "initial state");

  // Random feasible configurations: a bounded move along the null space,
  // then projection back onto the constraints.
  for (int s = 0; s < samples; ++s) {
    std::vector<Pose> poses = mesh.state.poses;
    const ConstraintSystem cs = analyze_constraints(topo, poses);
    if (cs.dof == 0) break;
    VectorXd xi(cs.dof);
    for (Eigen::Index k = 0; k < xi.size(); ++k) xi[k] = standard_normal(rng);
    VectorXd delta = cs.z_v * xi;
    delta *= 0.05 / std::max(delta.lpNorm<Eigen::Infinity>(), 1e-12);
    apply_displacement(topo, poses, delta);
    try {
      project_to_manifold(topo, poses, 1e-10, 50);
    } catch (const Error& e) {
      suite.fail("sample_projection", e.what());
      continue;
    }
    check_state(suite, scenario, topo, poses, rng, "sample " + std::to_string(s + 1));
  }

  const VerifyReport report = suite.report();
  for (const InvariantResult& r : report.invariants) {
    say(options, r.passed ? "PASS " : "FAIL ", r.name, "  value ", format_double(r.value), "  tolerance ",
        format_double(r.tolerance), r.detail.empty() ? "" : "  (" + r.detail + ")");
  }
  write_json(options, "verify.json", to_json(report));
  return report;
}

json to_json(const VerifyReport& report) {
  json list = json::array();
  for (const InvariantResult& r : report.invariants) {
    json e = {{"name", r.name}, {"passed", r.passed}, {"tolerance", r.tolerance}, {"detail", r.detail}};
    e["value"] = std::isfinite(r.value) ? json(r.value) : json(nullptr);
    list.push_back(e);
  }
  json failing = json::array();
  for (const InvariantResult& r : report.invariants) {
    if (!r.passed) failing.push_back(r.name);
  }
  return {{"passed", report.passed}, {"invariants", list}, {"failing", failing}};
}

}  // namespace morphmesh
