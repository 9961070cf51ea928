#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "morphmesh/errors.hpp"
#include "morphmesh/io.hpp"
#include "morphmesh/pipeline.hpp"

namespace morphmesh {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("morphmesh_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Scenario flat_scenario(int n, int m) {
  Scenario s;
  s.name = "flat";
  s.mesh.rows = n;
  s.mesh.cols = m;
  s.target.shape.expression = "0";
  return s;
}

Scenario small_curved() {
  Scenario s = preset("3x3_ideal");
  s.ga.max_generations = 200;
  s.ga.stall_generations = 50;
  s.ga.sensitivity_candidates = 3;
  s.sim.duration = 0.2;
  return s;
}

const InvariantResult* find(const VerifyReport& r, const std::string& name) {
  for (const auto& inv : r.invariants) {
    if (inv.name == name) return &inv;
  }
  return nullptr;
}

TEST(Analyze, CountsForSmallMeshes) {
  const AnalyzeReport two = cmd_analyze(flat_scenario(1, 2), {});
  EXPECT_EQ(two.nodes, 2);
  EXPECT_EQ(two.joints, 1);
  EXPECT_EQ(two.state_dim, 14);

  const AnalyzeReport three = cmd_analyze(preset("3x3_ideal"), {});
  EXPECT_EQ(three.nodes, 9);
  EXPECT_EQ(three.joints, 12);
  EXPECT_EQ(three.dof, 12);
  EXPECT_EQ(three.constraint_rows, 42);
  EXPECT_LT(three.residual_inf, 1e-6);
}

TEST(Analyze, WritesReportAndResolvedConfig) {
  const fs::path dir = scratch_dir("analyze");
  cmd_analyze(preset("3x3_ideal"), {dir.string(), nullptr});
  EXPECT_TRUE(fs::exists(dir / "analyze.json"));
  const auto resolved = nlohmann::json::parse(slurp(dir / "resolved_config.json"));
  EXPECT_EQ(scenario_to_json(scenario_from_json(resolved)), resolved);
}

TEST(Place, SingleNodeNeedsNoMotors) {
  std::ostringstream log;
  const PlaceReport r = cmd_place(flat_scenario(1, 1), {"", &log});
  EXPECT_EQ(r.dof, 0);
  EXPECT_TRUE(r.pattern.rows.empty());
  EXPECT_NE(log.str().find("no motors needed"), std::string::npos);
}

TEST(Place, SameSeedGivesIdenticalFile) {
  const fs::path a = scratch_dir("place_a");
  const fs::path b = scratch_dir("place_b");
  const Scenario s = small_curved();
  const PlaceReport ra = cmd_place(s, {a.string(), nullptr});
  cmd_place(s, {b.string(), nullptr});
  EXPECT_EQ(slurp(a / "pattern.json"), slurp(b / "pattern.json"));
  EXPECT_EQ(static_cast<int>(ra.pattern.rows.size()), 12);
  EXPECT_GT(ra.pattern.determinant, 0.0);
}

TEST(Simulate, OutputsAreByteIdenticalPerSeed) {
  const fs::path a = scratch_dir("sim_a");
  const fs::path b = scratch_dir("sim_b");
  Scenario s = small_curved();
  s.sim.noise.kind = NoiseSpec::Kind::kActuation;
  const SimulateOutput oa = cmd_simulate(s, {a.string(), nullptr});
  const SimulateOutput ob = cmd_simulate(s, {b.string(), nullptr});
  for (const char* file : {"metrics.csv", "trajectory.csv", "plot_errors.csv", "plot_pi.csv", "pattern.json",
                           "resolved_config.json"}) {
    ASSERT_TRUE(fs::exists(a / file)) << file;
    EXPECT_EQ(slurp(a / file), slurp(b / file)) << file;
  }
  EXPECT_EQ(oa.report.metrics_hash, ob.report.metrics_hash);
  EXPECT_EQ(oa.report.metrics_hash, fnv1a64(slurp(a / "metrics.csv")));
  EXPECT_EQ(oa.report.dof, 12);
  EXPECT_LE(oa.report.max_abs_pi_deg_s, 5.0 + 1e-9);
}

TEST(Simulate, MetricsCsvLayout) {
  Scenario s = small_curved();
  s.sim.duration = 0.05;
  const SimulateOutput out = cmd_simulate(s, {});
  std::istringstream csv(metrics_csv(out.result, 12));
  std::string comment, header, first;
  std::getline(csv, comment);
  std::getline(csv, header);
  std::getline(csv, first);
  EXPECT_EQ(comment.rfind("#", 0), 0u);
  EXPECT_EQ(header.rfind("t,eO_mean,eO_p10,eO_p90,eP_mean,eP_p10,eP_p90,pi_1,", 0), 0u) << header;
  EXPECT_NE(header.find(",pi_12"), std::string::npos);
  EXPECT_EQ(first.rfind("0,", 0), 0u);
}

TEST(Simulate, PatternFileIsReused) {
  const fs::path dir = scratch_dir("reuse");
  Scenario s = small_curved();
  const PlaceReport placed = cmd_place(s, {dir.string(), nullptr});
  s.pattern_path = (dir / "pattern.json").string();
  s.sim.duration = 0.05;
  const SimulateOutput out = cmd_simulate(s, {});
  EXPECT_EQ(out.report.pattern.rows, placed.pattern.rows);
}

TEST(Verify, FreshFlatMeshPasses) {
  const VerifyReport r = cmd_verify(flat_scenario(3, 3), {});
  for (const auto& inv : r.invariants) EXPECT_TRUE(inv.passed) << inv.name << " " << inv.value << " " << inv.detail;
  EXPECT_TRUE(r.passed);
}

TEST(Verify, CurvedPresetPasses) {
  const VerifyReport r = cmd_verify(preset("3x3_ideal"), {});
  for (const auto& inv : r.invariants) EXPECT_TRUE(inv.passed) << inv.name << " " << inv.value << " " << inv.detail;
}

TEST(Verify, CorruptedSnapshotFailsOnTheJointResidual) {
  const fs::path dir = scratch_dir("corrupt");
  Scenario s = flat_scenario(3, 3);
  Mesh mesh = build_mesh(s.mesh.to_spec());
  mesh.state.poses[4].position.z() += 0.002;
  {
    std::ofstream out(dir / "state.csv");
    write_snapshot(out, mesh.topology, mesh.state.poses);
  }
  s.mesh.state_snapshot_path = (dir / "state.csv").string();
  const VerifyReport r = cmd_verify(s, {});
  EXPECT_FALSE(r.passed);
  const InvariantResult* inv = find(r, "holonomic_residual");
  ASSERT_NE(inv, nullptr);
  EXPECT_FALSE(inv->passed);
  EXPECT_NEAR(inv->value, 0.002, 1e-12);
  const auto j = to_json(r);
  EXPECT_NE(j.at("failing").dump().find("holonomic_residual"), std::string::npos);
}

TEST(Verify, MovedFixedNodeIsNamed) {
  const fs::path dir = scratch_dir("fixed_moved");
  Scenario s = flat_scenario(2, 2);
  Mesh mesh = build_mesh(s.mesh.to_spec());
  for (auto& p : mesh.state.poses) p.position.x() += 0.01;  // rigid shift: joints intact, fixed node moved
  {
    std::ofstream out(dir / "state.csv");
    write_snapshot(out, mesh.topology, mesh.state.poses);
  }
  s.mesh.state_snapshot_path = (dir / "state.csv").string();
  const VerifyReport r = cmd_verify(s, {});
  EXPECT_FALSE(r.passed);
  const InvariantResult* inv = find(r, "holonomic_residual");
  ASSERT_NE(inv, nullptr);
  EXPECT_FALSE(inv->passed);
  EXPECT_NEAR(inv->value, 0.01, 1e-12);
}

TEST(Verify, RandomChainsPass) {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Scenario s = flat_scenario(1, 3);
    s.mesh.init.kind = InitSurfaceSpec::Kind::kGraph;
    s.mesh.init.graph.expression = "x^2 + y^2";
    s.mesh.init.graph.params.amplitude = 0.5 + static_cast<double>(seed % 7);
    apply_seed(s, seed);
    const VerifyReport r = cmd_verify(s, {});
    for (const auto& inv : r.invariants) EXPECT_TRUE(inv.passed) << "seed " << seed << " " << inv.name << " " << inv.detail;
  }
}

TEST(Verify, BadSnapshotFileIsAConfigError) {
  const fs::path dir = scratch_dir("bad_snapshot");
  {
    std::ofstream out(dir / "state.csv");
    out << "i,j,px\n1,1,0\n";
  }
  Scenario s = flat_scenario(2, 2);
  s.mesh.state_snapshot_path = (dir / "state.csv").string();
  try {
    cmd_verify(s, {});
    FAIL() << "expected a config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Snapshot, RoundTripsExactly) {
  const Mesh mesh = build_mesh(preset("3x3_ideal").mesh.to_spec());
  std::stringstream buf;
  write_snapshot(buf, mesh.topology, mesh.state.poses);
  const auto records = read_snapshot(buf);
  ASSERT_EQ(records.size(), 9u);
  for (const auto& r : records) {
    const auto& p = mesh.state.poses[static_cast<std::size_t>(mesh.topology.node_index(r.node))];
    EXPECT_EQ(r.pose.position, p.position);
    // Quaternions are renormalized on read, which may move the last bit.
    EXPECT_LT((r.pose.orientation.coeffs() - p.orientation.coeffs()).norm(), 1e-15);
  }
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}

}  // namespace
}  // namespace morphmesh
