#include "morphmesh/scenario.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "morphmesh/errors.hpp"
#include "morphmesh/io.hpp"

namespace morphmesh {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& message) {
  throw Error(ErrorCode::kConfig, path + ": " + message);
}

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  std::string at(std::string_view key) const { return path_ + "." + std::string(key); }

  const json* find(std::string_view key) {
    const auto it = j_.find(std::string(key));
    if (it == j_.end()) return nullptr;
    seen_.insert(std::string(key));
    return &*it;
  }

  void number(std::string_view key, double& out, double scale = 1.0) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(at(key), "expected a number");
      out = v->get<double>() * scale;
    }
  }

  void integer(std::string_view key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(at(key), "expected an integer");
      const auto value = v->get<std::int64_t>();
      if (value < std::numeric_limits<int>::min() || value > std::numeric_limits<int>::max()) {
        fail(at(key), "integer out of range");
      }
      out = static_cast<int>(value);
    }
  }

  void unsigned64(std::string_view key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(at(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void boolean(std::string_view key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void string(std::string_view key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.contains(item.key())) fail(at(item.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

constexpr double kDeg = kPi / 180.0;

ShapeSpec read_shape(const json& j, const std::string& path) {
  Reader r(j, path);
  ShapeSpec s;
  r.string("builtin", s.builtin);
  r.string("expr", s.expression);
  if (s.builtin.empty() == s.expression.empty()) fail(path, "exactly one of 'builtin' and 'expr' is required");
  r.number("amplitude_m", s.params.amplitude);
  r.number("x0_m", s.params.x0);
  r.number("y0_m", s.params.y0);
  r.number("sx_m", s.params.sx);
  r.number("sy_m", s.params.sy);
  r.number("time_scale", s.params.time_scale);
  r.number("offset_m", s.params.offset);
  r.finish();
  if (s.params.sx == 0.0 || s.params.sy == 0.0) fail(path, "sx_m and sy_m must be non-zero");
  try {
    (void)s.build();
  } catch (const Error& e) {
    fail(path, e.what());
  }
  return s;
}

json write_shape(const ShapeSpec& s) {
  json j;
  if (!s.builtin.empty()) {
    j["builtin"] = s.builtin;
  } else {
    j["expr"] = s.expression;
  }
  j["amplitude_m"] = s.params.amplitude;
  j["x0_m"] = s.params.x0;
  j["y0_m"] = s.params.y0;
  j["sx_m"] = s.params.sx;
  j["sy_m"] = s.params.sy;
  j["time_scale"] = s.params.time_scale;
  j["offset_m"] = s.params.offset;
  return j;
}

void read_mesh(const json& j, MeshConfig& m) {
  Reader r(j, "mesh");
  r.integer("n", m.rows);
  r.integer("m", m.cols);
  r.number("l_m", m.half_side);
  r.number("L_m", m.square_length);
  if (const json* fixed = r.find("fixed_nodes")) {
    if (!fixed->is_array()) fail("mesh.fixed_nodes", "expected an array of [i, j] pairs");
    m.fixed_nodes.clear();
    for (std::size_t k = 0; k < fixed->size(); ++k) {
      const json& e = (*fixed)[k];
      const std::string path = "mesh.fixed_nodes[" + std::to_string(k) + "]";
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
        fail(path, "expected [i, j] with one-based integers");
      }
      m.fixed_nodes.push_back({e[0].get<int>() - 1, e[1].get<int>() - 1});
    }
  }
  if (const json* init = r.find("init_surface")) {
    Reader ri(*init, "mesh.init_surface");
    std::string kind = "flat";
    ri.string("kind", kind);
    if (kind == "flat") {
      m.init.kind = InitSurfaceSpec::Kind::kFlat;
    } else if (kind == "graph") {
      m.init.kind = InitSurfaceSpec::Kind::kGraph;
      const json* shape = ri.find("shape");
      if (!shape) fail("mesh.init_surface.shape", "required for kind 'graph'");
      m.init.graph = read_shape(*shape, "mesh.init_surface.shape");
    } else if (kind == "cylinder") {
      m.init.kind = InitSurfaceSpec::Kind::kCylinder;
      ri.number("radius_m", m.init.cylinder_radius);
    } else {
      fail("mesh.init_surface.kind", "expected 'flat', 'graph' or 'cylinder'");
    }
    ri.finish();
  }
  r.string("state_snapshot_path", m.state_snapshot_path);
  r.finish();
}

json write_mesh(const MeshConfig& m) {
  json j;
  j["n"] = m.rows;
  j["m"] = m.cols;
  j["l_m"] = m.half_side;
  j["L_m"] = m.square_length;
  j["fixed_nodes"] = json::array();
  for (const NodeId& id : m.fixed_nodes) j["fixed_nodes"].push_back({id.i + 1, id.j + 1});
  json init;
  switch (m.init.kind) {
    case InitSurfaceSpec::Kind::kFlat:
      init["kind"] = "flat";
      break;
    case InitSurfaceSpec::Kind::kGraph:
      init["kind"] = "graph";
      init["shape"] = write_shape(m.init.graph);
      break;
    case InitSurfaceSpec::Kind::kCylinder:
      init["kind"] = "cylinder";
      init["radius_m"] = m.init.cylinder_radius;
      break;
  }
  j["init_surface"] = init;
  j["state_snapshot_path"] = m.state_snapshot_path;
  return j;
}

void read_ga(const json& j, Scenario& s) {
  Reader r(j, "ga");
  GAConfig& g = s.ga;
  r.integer("population_size", g.population_size);
  r.number("crossover_prob", g.crossover_prob);
  r.number("mutation_prob", g.mutation_prob);
  r.integer("stall_generations", g.stall_generations);
  r.number("fitness_threshold", g.fitness_threshold);
  r.integer("max_generations", g.max_generations);
  r.boolean("seed_with_qr", g.seed_with_qr);
  r.integer("sensitivity_candidates", g.sensitivity_candidates);
  r.number("probe_angle_deg", g.probe_angle, kDeg);
  r.number("reward_exponent", g.reward_exponent);
  r.string("pattern_path", s.pattern_path);
  r.finish();
}

json write_ga(const Scenario& s) {
  const GAConfig& g = s.ga;
  return {{"population_size", g.population_size},
          {"crossover_prob", g.crossover_prob},
          {"mutation_prob", g.mutation_prob},
          {"stall_generations", g.stall_generations},
          {"fitness_threshold", g.fitness_threshold},
          {"max_generations", g.max_generations},
          {"seed_with_qr", g.seed_with_qr},
          {"sensitivity_candidates", g.sensitivity_candidates},
          {"probe_angle_deg", g.probe_angle / kDeg},
          {"reward_exponent", g.reward_exponent},
          {"pattern_path", s.pattern_path}};
}

void read_controller(const json& j, ControllerConfig& c) {
  Reader r(j, "controller");
  r.number("k_per_s", c.k);
  r.number("lambda_per_s", c.lambda);
  r.number("sigma", c.sigma);
  r.number("sigma_rate_per_s", c.sigma_rate);
  if (const json* w = r.find("weights")) {
    if (!w->is_array()) fail("controller.weights", "expected an array of numbers");
    c.weights.clear();
    for (std::size_t k = 0; k < w->size(); ++k) {
      if (!(*w)[k].is_number()) fail("controller.weights[" + std::to_string(k) + "]", "expected a number");
      c.weights.push_back((*w)[k].get<double>());
    }
  }
  r.number("omega_max_deg_s", c.omega_max, kDeg);
  r.number("alpha_deg", c.alpha, kDeg);
  r.number("damping", c.damping);
  r.number("w_norm", c.w_norm);
  r.number("w_slew", c.w_slew);
  if (const json* qp = r.find("qp")) {
    Reader rq(*qp, "controller.qp");
    rq.integer("max_iter", c.qp.max_iter);
    rq.number("eps_abs", c.qp.eps_abs);
    rq.number("eps_rel", c.qp.eps_rel);
    rq.number("rho", c.qp.rho);
    rq.number("sigma", c.qp.sigma);
    rq.number("alpha", c.qp.alpha);
    rq.integer("adapt_interval", c.qp.adapt_interval);
    rq.boolean("polish", c.qp.polish);
    rq.finish();
  }
  r.finish();
}

json write_controller(const ControllerConfig& c) {
  return {{"k_per_s", c.k},
          {"lambda_per_s", c.lambda},
          {"sigma", c.sigma},
          {"sigma_rate_per_s", c.sigma_rate},
          {"weights", c.weights},
          {"omega_max_deg_s", c.omega_max / kDeg},
          {"alpha_deg", c.alpha / kDeg},
          {"damping", c.damping},
          {"w_norm", c.w_norm},
          {"w_slew", c.w_slew},
          {"qp",
           {{"max_iter", c.qp.max_iter},
            {"eps_abs", c.qp.eps_abs},
            {"eps_rel", c.qp.eps_rel},
            {"rho", c.qp.rho},
            {"sigma", c.qp.sigma},
            {"alpha", c.qp.alpha},
            {"adapt_interval", c.qp.adapt_interval},
            {"polish", c.qp.polish}}}};
}

void read_sim(const json& j, SimConfig& c) {
  Reader r(j, "sim");
  r.number("duration_s", c.duration);
  r.number("control_dt_s", c.control_dt);
  std::string integrator = c.integrator == IntegratorKind::kRK45 ? "rk45" : "rk4";
  r.string("integrator", integrator);
  if (integrator == "rk45") {
    c.integrator = IntegratorKind::kRK45;
  } else if (integrator == "rk4") {
    c.integrator = IntegratorKind::kRK4;
  } else {
    fail("sim.integrator", "expected 'rk45' or 'rk4'");
  }
  r.number("abs_tol", c.abs_tol);
  r.number("rel_tol", c.rel_tol);
  r.integer("rk4_substeps", c.rk4_substeps);
  r.number("min_step_s", c.min_step);
  r.number("baumgarte_gain_per_s", c.baumgarte_gain);
  r.number("projection_tol_m", c.projection_tol);
  r.number("plant_damping", c.plant_damping);
  if (const json* noise = r.find("noise")) {
    Reader rn(*noise, "sim.noise");
    std::string kind = "none";
    rn.string("kind", kind);
    if (kind == "none") {
      c.noise.kind = NoiseSpec::Kind::kNone;
    } else if (kind == "actuation") {
      c.noise.kind = NoiseSpec::Kind::kActuation;
    } else if (kind == "state") {
      c.noise.kind = NoiseSpec::Kind::kState;
    } else {
      fail("sim.noise.kind", "expected 'none', 'actuation' or 'state'");
    }
    rn.number("actuation_sigma", c.noise.actuation_sigma);
    rn.number("actuation_max_fraction", c.noise.actuation_max_fraction);
    rn.number("state_sigma_deg", c.noise.state_sigma, kDeg);
    rn.number("state_max_deg", c.noise.state_max, kDeg);
    rn.finish();
  }
  r.finish();
}

json write_sim(const SimConfig& c) {
  const char* kind = c.noise.kind == NoiseSpec::Kind::kNone        ? "none"
                     : c.noise.kind == NoiseSpec::Kind::kActuation ? "actuation"
                                                                    : "state";
  return {{"duration_s", c.duration},
          {"control_dt_s", c.control_dt},
          {"integrator", c.integrator == IntegratorKind::kRK45 ? "rk45" : "rk4"},
          {"abs_tol", c.abs_tol},
          {"rel_tol", c.rel_tol},
          {"rk4_substeps", c.rk4_substeps},
          {"min_step_s", c.min_step},
          {"baumgarte_gain_per_s", c.baumgarte_gain},
          {"projection_tol_m", c.projection_tol},
          {"plant_damping", c.plant_damping},
          {"noise",
           {{"kind", kind},
            {"actuation_sigma", c.noise.actuation_sigma},
            {"actuation_max_fraction", c.noise.actuation_max_fraction},
            {"state_sigma_deg", c.noise.state_sigma / kDeg},
            {"state_max_deg", c.noise.state_max / kDeg}}}};
}

void read_outputs(const json& j, OutputConfig& o) {
  Reader r(j, "outputs");
  r.boolean("trajectory", o.trajectory);
  r.integer("trajectory_stride", o.trajectory_stride);
  r.boolean("plot_data", o.plot_data);
  r.integer("plot_stride", o.plot_stride);
  r.finish();
}

json write_outputs(const OutputConfig& o) {
  return {{"trajectory", o.trajectory},
          {"trajectory_stride", o.trajectory_stride},
          {"plot_data", o.plot_data},
          {"plot_stride", o.plot_stride}};
}

// --- presets -------------------------------------------------------------

ShapeSpec builtin_spec(std::string name, ShapeParams params = {}) {
  ShapeSpec s;
  s.builtin = std::move(name);
  s.params = params;
  return s;
}

MeshConfig square_mesh(int n, const ShapeSpec& init) {
  MeshConfig m;
  m.rows = n;
  m.cols = n;
  m.init.kind = InitSurfaceSpec::Kind::kGraph;
  m.init.graph = init;
  return m;
}

// Saddle init centred on the mesh: amplitude (x - c)(y - c).
// Initial surfaces are centred on the mesh so every node starts curved; a
// flat patch is a singular configuration for the motor map.
ShapeSpec centred_paraboloid(int n, double amplitude) {
  const double centre = 0.025 * (n - 1);
  return builtin_spec("paraboloid", {amplitude, centre, centre, 1.0, 1.0, 1.0, 0.0});
}

Scenario mesh3x3() {
  Scenario s;
  s.mesh = square_mesh(3, centred_paraboloid(3, 1.0));
  s.target.shape = builtin_spec("mesh3x3_target", {0.03, 0.0, 0.0, 0.1, 0.1, 1.0, 0.0});
  s.sim.duration = 8.0;
  return s;
}

Scenario mesh8x8() {
  Scenario s;
  s.mesh = square_mesh(8, centred_paraboloid(8, 4.0));
  // A slow wave keeps the motors out of saturation; the low gain gives the
  // gradual approach of a desk-length run instead of a fast settle onto the
  // moving error floor.
  s.target.shape = builtin_spec("mesh8x8_target", {0.03, 0.0, 0.0, 0.1, 0.1, 0.1, 0.0});
  s.controller.k = 0.1;
  s.ga.seed_with_qr = true;
  s.ga.fitness_threshold = 0.0;
  s.ga.max_generations = 300;
  s.ga.stall_generations = 50;
  s.ga.sensitivity_candidates = 1;
  s.sim.duration = 15.0;
  s.outputs.trajectory_stride = 50;
  return s;
}

Scenario mesh20x20() {
  Scenario s;
  s.mesh = square_mesh(20, centred_paraboloid(20, 0.5));
  s.target.shape = builtin_spec("mesh20x20_target", {1.3, 0.475, 0.475, 1.0, 1.0, 1.0, 0.0});
  s.ga.seed_with_qr = true;
  s.ga.fitness_threshold = 0.0;
  s.ga.max_generations = 20;
  s.ga.stall_generations = 10;
  s.ga.sensitivity_candidates = 1;
  s.sim.duration = 5.0;
  s.outputs.trajectory_stride = 100;
  return s;
}

Scenario mesh4x8() {
  Scenario s;
  s.mesh.rows = 4;
  s.mesh.cols = 8;
  s.mesh.fixed_nodes = {{0, 0}, {0, 1}, {0, 2}, {0, 3}};
  s.mesh.init.kind = InitSurfaceSpec::Kind::kCylinder;
  s.mesh.init.cylinder_radius = 0.3;
  s.target.shape = builtin_spec("piecewise_4x8", {5.0 / 3.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0});
  s.ga.seed_with_qr = true;
  s.ga.fitness_threshold = 0.0;
  s.ga.max_generations = 500;
  s.ga.stall_generations = 100;
  s.sim.duration = 35.0;
  s.outputs.trajectory_stride = 50;
  return s;
}

}  // namespace

std::string ShapeSpec::source() const { return builtin.empty() ? expression : builtin_shape(builtin).source; }

ShapeExpr ShapeSpec::build() const { return scale_shift(parse_shape(source()), params); }

MeshSpec MeshConfig::to_spec() const {
  MeshSpec spec;
  spec.rows = rows;
  spec.cols = cols;
  spec.half_side = half_side;
  spec.square_length = square_length;
  spec.fixed_nodes = fixed_nodes;
  switch (init.kind) {
    case InitSurfaceSpec::Kind::kFlat:
      spec.surface = InitSurface::flat();
      break;
    case InitSurfaceSpec::Kind::kGraph:
      spec.surface = InitSurface::from_graph(init.graph.build());
      break;
    case InitSurfaceSpec::Kind::kCylinder:
      spec.surface = InitSurface::cylinder(init.cylinder_radius);
      break;
  }
  return spec;
}

void Scenario::validate() const {
  if (mesh.rows < 1 || mesh.cols < 1) fail("mesh", "n and m must be >= 1");
  if (!(mesh.half_side > 0.0) || !(mesh.square_length > 0.0)) fail("mesh", "l_m and L_m must be positive");
  if (mesh.fixed_nodes.empty()) fail("mesh.fixed_nodes", "at least one node must be fixed");
  for (const NodeId& id : mesh.fixed_nodes) {
    if (id.i < 0 || id.i >= mesh.rows || id.j < 0 || id.j >= mesh.cols) {
      fail("mesh.fixed_nodes", "node (" + std::to_string(id.i + 1) + ", " + std::to_string(id.j + 1) +
                                   ") is outside the mesh");
    }
  }
  if (mesh.init.kind == InitSurfaceSpec::Kind::kCylinder && !(mesh.init.cylinder_radius > 0.0)) {
    fail("mesh.init_surface.radius_m", "must be positive");
  }
  if (!controller.weights.empty() &&
      static_cast<int>(controller.weights.size()) != mesh.rows * mesh.cols) {
    fail("controller.weights", "expected one weight per node (" + std::to_string(mesh.rows * mesh.cols) + ")");
  }
  if (outputs.trajectory_stride < 1 || outputs.plot_stride < 1) fail("outputs", "strides must be >= 1");
  auto wrap = [](const char* section, auto&& check) {
    try {
      check();
    } catch (const Error& e) {
      fail(section, e.what());
    }
  };
  wrap("ga", [&] { ga.validate(); });
  wrap("controller", [&] { controller.validate(); });
  wrap("sim", [&] { sim.validate(); });
}

Scenario scenario_from_json(const json& j) {
  Scenario s;
  Reader r(j, "$");
  r.string("name", s.name);
  r.unsigned64("seed", s.seed);
  if (const json* v = r.find("mesh")) read_mesh(*v, s.mesh);
  if (const json* v = r.find("ga")) read_ga(*v, s);
  if (const json* v = r.find("controller")) read_controller(*v, s.controller);
  if (const json* v = r.find("target")) {
    Reader rt(*v, "target");
    const json* shape = rt.find("shape");
    if (!shape) fail("target.shape", "required");
    s.target.shape = read_shape(*shape, "target.shape");
    rt.boolean("anchor_to_fixed", s.target.anchor_to_fixed);
    rt.finish();
  } else {
    fail("target", "required");
  }
  if (const json* v = r.find("sim")) read_sim(*v, s.sim);
  if (const json* v = r.find("outputs")) read_outputs(*v, s.outputs);
  r.finish();
  apply_seed(s, s.seed);
  s.validate();
  return s;
}

json scenario_to_json(const Scenario& s) {
  return {{"name", s.name},
          {"seed", s.seed},
          {"mesh", write_mesh(s.mesh)},
          {"ga", write_ga(s)},
          {"controller", write_controller(s.controller)},
          {"target", {{"shape", write_shape(s.target.shape)}, {"anchor_to_fixed", s.target.anchor_to_fixed}}},
          {"sim", write_sim(s.sim)},
          {"outputs", write_outputs(s.outputs)}};
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kConfig, path + ": " + e.what());
  }
  return scenario_from_json(j);
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"3x3_ideal",       "3x3_actuation_noise", "8x8_ideal",
                                                 "8x8_state_noise", "20x20_short",         "4x8_ironcub_piecewise"};
  return names;
}

Scenario preset(std::string_view name) {
  Scenario s;
  if (name == "3x3_ideal") {
    s = mesh3x3();
  } else if (name == "3x3_actuation_noise") {
    s = mesh3x3();
    s.sim.noise.kind = NoiseSpec::Kind::kActuation;
    s.sim.duration = 16.0;
  } else if (name == "8x8_ideal") {
    s = mesh8x8();
  } else if (name == "8x8_state_noise") {
    s = mesh8x8();
    s.sim.noise.kind = NoiseSpec::Kind::kState;
  } else if (name == "20x20_short") {
    s = mesh20x20();
  } else if (name == "4x8_ironcub_piecewise") {
    s = mesh4x8();
  } else {
    throw Error(ErrorCode::kConfig, "unknown preset '" + std::string(name) + "'");
  }
  s.name = std::string(name);
  apply_seed(s, s.seed);
  return s;
}

std::uint64_t config_hash(const Scenario& s) { return fnv1a64(scenario_to_json(s).dump()); }

void apply_seed(Scenario& s, std::uint64_t seed) {
  s.seed = seed;
  s.ga.rng_seed = seed;
  s.sim.rng_seed = seed;
}

ShapeField target_field(const Scenario& s, const Mesh& mesh) {
  ShapeExpr expr = s.target.shape.build();
  if (s.target.anchor_to_fixed) {
    const NodeId anchor = s.mesh.fixed_nodes.front();
    expr = anchor_through(expr, mesh.state.poses[static_cast<std::size_t>(mesh.topology.node_index(anchor))].position);
  }
  return ShapeField(std::move(expr));
}

}  // namespace morphmesh
