// Command line front end: analyze | place | simulate | verify.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "morphmesh/errors.hpp"
#include "morphmesh/io.hpp"
#include "morphmesh/pipeline.hpp"
#include "morphmesh/scenario.hpp"

namespace {

using morphmesh::Error;
using morphmesh::ErrorCode;

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitConfig = 2;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string pattern;
  std::optional<double> duration;
  bool quiet = false;
};

// --config takes a file path or the name of a bundled preset.
morphmesh::Scenario resolve(const Flags& flags) {
  if (flags.config.empty()) throw Error(ErrorCode::kConfig, "--config is required (file path or preset name)");
  morphmesh::Scenario s;
  if (std::filesystem::exists(flags.config)) {
    s = morphmesh::load_scenario(flags.config);
  } else {
    s = morphmesh::preset(flags.config);
  }
  if (flags.seed) morphmesh::apply_seed(s, *flags.seed);
  if (flags.duration) s.sim.duration = *flags.duration;
  if (!flags.pattern.empty()) s.pattern_path = flags.pattern;
  if (const char* env = std::getenv("MORPHMESH_THREADS"); env && *env) {
    char* end = nullptr;
    const long threads = std::strtol(env, &end, 10);
    if (*end != '\0' || threads < 1 || threads > 1024) {
      throw Error(ErrorCode::kConfig, "MORPHMESH_THREADS must be an integer in [1, 1024]");
    }
    s.ga.threads = static_cast<int>(threads);
  }
  s.validate();
  return s;
}

int exit_code(const Error& e) { return e.code() == ErrorCode::kConfig ? kExitConfig : kExitDomain; }

void add_flags(CLI::App& cmd, Flags& flags, bool simulate_flags) {
  cmd.add_option("--config", flags.config, "Scenario JSON file or bundled preset name");
  cmd.add_option("--seed", flags.seed, "Scenario seed (unsigned 64-bit)");
  cmd.add_option("--out", flags.out, "Output directory");
  cmd.add_flag("--quiet", flags.quiet, "Suppress progress output");
  if (simulate_flags) {
    cmd.add_option("--pattern", flags.pattern, "Precomputed actuation pattern JSON");
    cmd.add_option("--duration-s", flags.duration, "Simulated duration [s]")->check(CLI::PositiveNumber);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shape control of morphing covers built from rigid nodes and spherical joints"};
  app.require_subcommand(1);
  Flags flags;

  CLI::App* analyze = app.add_subcommand("analyze", "Build the mesh and report counts, rank and dof");
  CLI::App* place = app.add_subcommand("place", "Choose actuated joint axes and write pattern.json");
  CLI::App* simulate = app.add_subcommand("simulate", "Run the closed-loop simulation");
  CLI::App* verify = app.add_subcommand("verify", "Run the invariant suite on the configured mesh");
  add_flags(*analyze, flags, false);
  add_flags(*place, flags, false);
  add_flags(*simulate, flags, true);
  add_flags(*verify, flags, false);
  place->add_option("--pattern", flags.pattern, "Also write the pattern to this path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    morphmesh::PipelineOptions options;
    options.out_dir = flags.out;
    options.log = flags.quiet ? nullptr : &std::cout;

    if (analyze->parsed()) {
      morphmesh::cmd_analyze(resolve(flags), options);
      return kExitOk;
    }
    if (place->parsed()) {
      const std::string pattern_out = flags.pattern;
      flags.pattern.clear();
      const morphmesh::Scenario s = resolve(flags);
      const morphmesh::PlaceReport report = morphmesh::cmd_place(s, options);
      if (!pattern_out.empty()) {
        const morphmesh::Mesh mesh = morphmesh::build_scenario_mesh(s);
        std::ofstream out(pattern_out, std::ios::binary);
        if (!out) throw Error(ErrorCode::kConfig, "cannot write '" + pattern_out + "'");
        out << morphmesh::pattern_to_json(report.pattern, mesh.topology, report.dof, s.seed).dump(2) << "\n";
      }
      return kExitOk;
    }
    if (simulate->parsed()) {
      morphmesh::cmd_simulate(resolve(flags), options);
      return kExitOk;
    }
    if (verify->parsed()) {
      options.log = flags.quiet ? nullptr : &std::cerr;
      const morphmesh::VerifyReport report = morphmesh::cmd_verify(resolve(flags), options);
      std::cout << morphmesh::to_json(report).dump(2) << "\n";
      return report.passed ? kExitOk : kExitDomain;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << morphmesh::to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitDomain;
}
