#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphmesh/scenario.hpp"

namespace morphmesh {

// Where results go. An empty `out_dir` writes nothing to disk.
struct PipelineOptions {
  std::string out_dir;
  std::ostream* log = nullptr;  // human-readable progress; null for silence
};

// Mesh built from the scenario, with the optional state snapshot applied.
Mesh build_scenario_mesh(const Scenario& scenario);

struct AnalyzeReport {
  int nodes = 0;
  int joints = 0;
  int fixed_nodes = 0;
  int state_dim = 0;     // 7 per node (position and quaternion)
  int velocity_dim = 0;  // 6 per node
  int constraint_rows = 0;
  int rank = 0;
  int dof = 0;
  double residual_inf = 0.0;  // [m]
  double smallest_singular_value = 0.0;  // last one counted in the rank
};

AnalyzeReport cmd_analyze(const Scenario& scenario, const PipelineOptions& options);
nlohmann::json to_json(const AnalyzeReport& report);

struct PlaceReport {
  int dof = 0;
  ActuationPattern pattern;
  int generations = 0;
  bool converged = false;
  double wall_time_s = 0.0;
};

// Runs the GA and the sensitivity selection and writes pattern.json. A mesh
// with zero dof yields an empty pattern ("no motors needed").
PlaceReport cmd_place(const Scenario& scenario, const PipelineOptions& options);

struct RunReport {
  std::string name;
  std::uint64_t seed = 0;
  std::string config_hash;
  int dof = 0;
  int joints = 0;
  ActuationPattern pattern;
  double initial_e_o_deg = 0.0;
  double initial_e_p_mm = 0.0;
  double final_e_o_deg = 0.0;
  double final_e_p_mm = 0.0;
  double final_time_s = 0.0;
  // Hygiene over every recorded frame.
  double max_abs_pi_deg_s = 0.0;
  double min_joint_alignment = 1.0;
  double max_residual_m = 0.0;
  double max_quat_norm_error = 0.0;
  int qp_fallbacks = 0;
  int integrator_steps = 0;
  int projections = 0;
  double wall_time_s = 0.0;
  std::uint64_t metrics_hash = 0;  // FNV-1a of metrics.csv
};

struct SimulateOutput {
  RunReport report;
  SimResult result;
};

// Loads the pattern (scenario pattern_path) or places actuators, then runs
// the simulation and writes metrics, trajectory, plot data, the pattern, the
// report and the resolved configuration.
SimulateOutput cmd_simulate(const Scenario& scenario, const PipelineOptions& options);
nlohmann::json to_json(const RunReport& report);

// The metrics CSV exactly as written to disk.
std::string metrics_csv(const SimResult& result, int dof);

struct InvariantResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyReport {
  bool passed = false;
  std::vector<InvariantResult> invariants;
};

// Invariant suite on the configured mesh state plus `samples` random feasible
// configurations reached from it (seeded from the scenario seed).
VerifyReport cmd_verify(const Scenario& scenario, const PipelineOptions& options, int samples = 3);
nlohmann::json to_json(const VerifyReport& report);

}  // namespace morphmesh
