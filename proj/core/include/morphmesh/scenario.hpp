#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphmesh/actuation.hpp"
#include "morphmesh/controller.hpp"
#include "morphmesh/mesh.hpp"
#include "morphmesh/shape.hpp"
#include "morphmesh/sim.hpp"

namespace morphmesh {

// A shape given either by builtin name or by expression, then scaled and
// shifted. Lengths in metres.
struct ShapeSpec {
  std::string builtin;     // empty when `expression` is used
  std::string expression;  // empty when `builtin` is used
  ShapeParams params;

  // The source text after resolving a builtin name.
  std::string source() const;
  ShapeExpr build() const;
};

struct InitSurfaceSpec {
  enum class Kind { kFlat, kGraph, kCylinder };
  Kind kind = Kind::kFlat;
  ShapeSpec graph;             // kGraph
  double cylinder_radius = 0.3;  // kCylinder [m]
};

struct MeshConfig {
  int rows = 3;
  int cols = 3;
  double half_side = 0.025;      // [m]
  double square_length = 0.025;  // [m]
  std::vector<NodeId> fixed_nodes = {{0, 0}};
  InitSurfaceSpec init;
  // Optional snapshot CSV replacing the fitted initial poses.
  std::string state_snapshot_path;

  MeshSpec to_spec() const;
};

struct TargetConfig {
  ShapeSpec shape;
  // Shift the target so it passes through the first fixed node at all times.
  bool anchor_to_fixed = true;
};

struct OutputConfig {
  bool trajectory = true;
  int trajectory_stride = 10;  // control ticks between trajectory rows
  bool plot_data = true;
  int plot_stride = 10;        // control ticks between plot rows
};

struct Scenario {
  std::string name;
  std::uint64_t seed = 1;
  MeshConfig mesh;
  GAConfig ga;
  std::string pattern_path;  // precomputed pattern; skips the GA when set
  ControllerConfig controller;
  TargetConfig target;
  SimConfig sim;
  OutputConfig outputs;

  void validate() const;
};

// JSON with unit-suffixed keys (degrees for angles). Unknown keys and
// ill-typed values throw Error(kConfig) naming the offending path.
Scenario scenario_from_json(const nlohmann::json& j);
// Fully materialised configuration; scenario_from_json round-trips it.
nlohmann::json scenario_to_json(const Scenario& s);

Scenario load_scenario(const std::string& path);

// Bundled scenarios by name; throws Error(kConfig) for unknown names.
const std::vector<std::string>& preset_names();
Scenario preset(std::string_view name);

// FNV-1a over the canonical (sorted-key, shortest round-trip) serialisation
// of the resolved configuration.
std::uint64_t config_hash(const Scenario& s);

// Seeds of the independent random streams, derived from the scenario seed.
void apply_seed(Scenario& s, std::uint64_t seed);

// Target field with scaling and anchoring applied.
ShapeField target_field(const Scenario& s, const Mesh& mesh);

}  // namespace morphmesh
