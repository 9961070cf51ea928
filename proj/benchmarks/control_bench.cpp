#include <benchmark/benchmark.h>

#include "morphmesh/actuation.hpp"
#include "morphmesh/controller.hpp"
#include "morphmesh/scenario.hpp"
#include "morphmesh/sim.hpp"

namespace {

using namespace morphmesh;

void BM_ControllerTick(benchmark::State& state) {
  const Scenario s = preset(state.range(0) == 3 ? "3x3_ideal" : "8x8_ideal");
  const Mesh m = build_mesh(s.mesh.to_spec());
  const std::vector<int> rows = pivoted_qr_rows(analyze_constraints(m.topology, m.state.poses).z_nu);
  Controller c(s.controller, rows, target_field(s, m));
  const VectorXd prev = VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
  double t = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(c.tick(m.topology, m.state.poses, t, prev));
    t += s.sim.control_dt;
  }
}
BENCHMARK(BM_ControllerTick)->Arg(3)->Arg(8)->Unit(benchmark::kMillisecond);

// One control period of plant integration.
void BM_PlantStep(benchmark::State& state) {
  const Scenario s = preset("3x3_ideal");
  const Mesh m = build_mesh(s.mesh.to_spec());
  const std::vector<int> rows = pivoted_qr_rows(analyze_constraints(m.topology, m.state.poses).z_nu);
  const VectorXd pi = VectorXd::Constant(static_cast<Eigen::Index>(rows.size()), 0.01);
  for (auto _ : state) {
    std::vector<Pose> poses = m.state.poses;
    benchmark::DoNotOptimize(step(m.topology, poses, rows, pi, s.sim.control_dt, s.sim));
  }
}
BENCHMARK(BM_PlantStep)->Unit(benchmark::kMillisecond);

}  // namespace
