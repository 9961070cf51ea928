#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphmesh/mesh.hpp"

namespace morphmesh {

struct GAConfig {
  int population_size = 100;
  double crossover_prob = 0.6;
  double mutation_prob = 0.01;
  int stall_generations = 1000;
  double fitness_threshold = 1e-6;
  int max_generations = 10000;
  std::uint64_t rng_seed = 1;
  // Worker threads for fitness evaluation; results do not depend on it.
  int threads = 1;
  // Insert one pivoted-QR row choice into the first generation. Random
  // strings on large meshes are almost always singular, which leaves
  // proportionate selection with nothing to work on.
  bool seed_with_qr = false;
  // Number of distinct top-fitness candidates that get a sensitivity score.
  int sensitivity_candidates = 10;
  double probe_angle = 5.0 * kPi / 180.0;  // [rad]
  // Power applied to the joint-reward factor. The plain ratio barely
  // separates one-motor-per-joint strings from the rest; see placement_reward.
  double reward_exponent = 8.0;

  void validate() const;
};

struct ActuationPattern {
  std::vector<int> rows;  // ascending indices into the rows of Z_nu
  double fitness = 0.0;
  double determinant = 0.0;  // |det Z_act|
  double sensitivity = 0.0;
  // histogram[k]: joints carrying exactly k motors, k = 0..3.
  std::vector<int> motors_per_joint;
};

// |det| by LU with partial pivoting. Returns 0 when the smallest pivot falls
// below 1e-10 times the largest entry: for large patterns the determinant
// itself can be far below any fixed threshold while the matrix is healthy.
double abs_determinant(const MatrixXd& square);

// Joint-reward factor ((1 + single) / (1 + touched))^exponent, where touched
// counts the joints with at least one selected axis and single those with
// exactly one. Equals 1 exactly when no joint carries two motors.
double placement_reward(std::span<const int> rows, double exponent = 1.0);

// |det Z_nu(rows, :)| * reward / (1 + duplicates). Rows below 6 (father
// velocity) make the candidate invalid and give 0.
double fitness(std::span<const int> rows, const MatrixXd& z_nu, double reward_exponent = 1.0,
               int duplicates = 0);

std::vector<int> motors_per_joint(std::span<const int> rows, int joint_count);

// Greedy column-pivoted QR choice of dof independent joint rows.
std::vector<int> pivoted_qr_rows(const MatrixXd& z_nu);

struct EvolveResult {
  // Distinct candidates of the last generation, best first; fitness omits the
  // duplicate penalty since each entry is unique.
  std::vector<ActuationPattern> population;
  int generations = 0;
  bool converged = false;  // stall criterion met above the threshold
};

// Throws Error(kNoFullRankPattern) when no candidate ever reaches a nonzero
// fitness.
EvolveResult evolve(const MatrixXd& z_nu, const GAConfig& config);

// Best fitness over every dof-subset of the joint rows. Intended for small
// problems; throws kInvalidArgument above `max_subsets`.
ActuationPattern exhaustive_best(const MatrixXd& z_nu, double reward_exponent = 1.0,
                                 std::uint64_t max_subsets = 5'000'000);

// |det Z_act| with an orthonormal Z_v, from the sparse route:
// det(M^T M) = det(Z_act)^-2 for M = Z_v Z_act^-1. Returns 0 if the rows do
// not give full actuation.
double actuated_determinant(const MeshTopology& topology, std::span<const Pose> poses,
                            std::span<const int> rows);

// Drives actuator `index` alone by `angle` radians (sign included) and
// re-projects onto the joint constraints.
std::vector<Pose> probe_configuration(const MeshTopology& topology, std::span<const Pose> poses,
                                      std::span<const int> rows, int index, double angle);

// Sum over actuators of the squared central difference of |det Z_act|.
// Infinite when a probe cannot be projected back onto the constraints.
double sensitivity(std::span<const int> rows, const MeshTopology& topology, std::span<const Pose> poses,
                   double probe_angle);

// Minimum sensitivity among nonzero-fitness candidates; ties go to higher
// fitness, then to the lexicographically smaller row list. Candidates must
// already carry their sensitivity.
ActuationPattern select_pattern(std::span<const ActuationPattern> candidates);

// Scores the `config.sensitivity_candidates` fittest members and selects.
ActuationPattern place_actuators(const EvolveResult& evolved, const MeshTopology& topology,
                                 std::span<const Pose> poses, const GAConfig& config);

nlohmann::json pattern_to_json(const ActuationPattern& pattern, const MeshTopology& topology, int dof,
                               std::uint64_t seed);
// Throws Error(kConfig) on malformed input or a mesh mismatch.
ActuationPattern pattern_from_json(const nlohmann::json& j, const MeshTopology& topology, int dof);

}  // namespace morphmesh
