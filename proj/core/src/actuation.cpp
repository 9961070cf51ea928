#include "morphmesh/actuation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include "morphmesh/errors.hpp"
#include "morphmesh/random.hpp"

namespace morphmesh {

namespace {

constexpr int kFatherRows = 6;

using Candidate = std::vector<int>;

template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  threads = std::clamp(threads, 1, std::max(count, 1));
  if (threads == 1) {
    for (int k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (int k = w; k < count; k += threads) fn(k);
    });
  }
  for (auto& t : pool) t.join();
}

// Redraws duplicate genes, then sorts so equal sets compare equal.
void repair(Candidate& c, int row_count, Rng& rng) {
  std::vector<char> used(static_cast<std::size_t>(row_count), 0);
  for (int& r : c) {
    while (used[static_cast<std::size_t>(r)] || r < kFatherRows) {
      r = kFatherRows + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(row_count - kFatherRows)));
    }
    used[static_cast<std::size_t>(r)] = 1;
  }
  std::sort(c.begin(), c.end());
}

Candidate random_candidate(int dof, int row_count, Rng& rng) {
  std::vector<int> pool(static_cast<std::size_t>(row_count - kFatherRows));
  for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = kFatherRows + static_cast<int>(k);
  for (int k = 0; k < dof; ++k) {
    const auto pick = k + static_cast<int>(uniform_below(rng, pool.size() - static_cast<std::size_t>(k)));
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick)]);
  }
  Candidate c(pool.begin(), pool.begin() + dof);
  std::sort(c.begin(), c.end());
  return c;
}

std::size_t roulette(const std::vector<double>& cumulative, Rng& rng) {
  const double total = cumulative.back();
  if (!(total > 0.0)) return static_cast<std::size_t>(uniform_below(rng, cumulative.size()));
  const double r = uniform01(rng) * total;
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
  return std::min(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

ActuationPattern make_pattern(const Candidate& c, const MatrixXd& z_nu, double exponent) {
  ActuationPattern p;
  p.rows = c;
  p.determinant = abs_determinant(select_rows(z_nu, c));
  p.fitness = p.determinant * placement_reward(c, exponent);
  p.motors_per_joint = motors_per_joint(c, static_cast<int>((z_nu.rows() - kFatherRows) / 3));
  return p;
}

bool better(const ActuationPattern& a, const ActuationPattern& b) {
  if (a.fitness != b.fitness) return a.fitness > b.fitness;
  return a.rows < b.rows;
}

// Lie-group Euler step of all node poses along `nu`.
void advance(const MeshTopology& topo, std::vector<Pose>& poses, const VectorXd& nu, double h) {
  apply_displacement(topo, poses, h * nu);
}

}  // namespace

void GAConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (population_size < 2) throw Error(ErrorCode::kConfig, "ga.population_size must be >= 2");
  if (!prob(crossover_prob)) throw Error(ErrorCode::kConfig, "ga.crossover_prob must lie in [0, 1]");
  if (!prob(mutation_prob)) throw Error(ErrorCode::kConfig, "ga.mutation_prob must lie in [0, 1]");
  if (stall_generations < 1) throw Error(ErrorCode::kConfig, "ga.stall_generations must be >= 1");
  if (max_generations < 1) throw Error(ErrorCode::kConfig, "ga.max_generations must be >= 1");
  if (!(fitness_threshold >= 0.0)) throw Error(ErrorCode::kConfig, "ga.fitness_threshold must be >= 0");
  if (sensitivity_candidates < 1) throw Error(ErrorCode::kConfig, "ga.sensitivity_candidates must be >= 1");
  if (!(probe_angle > 0.0)) throw Error(ErrorCode::kConfig, "ga.probe_angle must be positive");
  if (!(reward_exponent >= 0.0)) throw Error(ErrorCode::kConfig, "ga.reward_exponent must be >= 0");
}

double abs_determinant(const MatrixXd& square) {
  if (square.rows() != square.cols()) throw Error(ErrorCode::kInvalidArgument, "determinant of a non-square matrix");
  if (square.rows() == 0) return 1.0;
  const double scale = square.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return 0.0;
  const Eigen::PartialPivLU<MatrixXd> lu(square);
  const VectorXd pivots = lu.matrixLU().diagonal().cwiseAbs();
  if (pivots.minCoeff() <= 1e-10 * scale) return 0.0;
  return pivots.prod();
}

double placement_reward(std::span<const int> rows, double exponent) {
  std::map<int, int> per_joint;
  for (int r : rows) {
    if (r >= kFatherRows) ++per_joint[(r - kFatherRows) / 3];
  }
  int single = 0;
  for (const auto& [joint, count] : per_joint) single += count == 1 ? 1 : 0;
  return std::pow((1.0 + single) / (1.0 + static_cast<double>(per_joint.size())), exponent);
}

double fitness(std::span<const int> rows, const MatrixXd& z_nu, double reward_exponent, int duplicates) {
  for (int r : rows) {
    if (r < kFatherRows || r >= z_nu.rows()) return 0.0;
  }
  if (static_cast<Eigen::Index>(rows.size()) != z_nu.cols()) return 0.0;
  const double det = abs_determinant(select_rows(z_nu, rows));
  return det * placement_reward(rows, reward_exponent) / (1.0 + duplicates);
}

std::vector<int> motors_per_joint(std::span<const int> rows, int joint_count) {
  std::vector<int> count(static_cast<std::size_t>(joint_count), 0);
  for (int r : rows) {
    if (r >= kFatherRows) ++count[static_cast<std::size_t>((r - kFatherRows) / 3)];
  }
  std::vector<int> histogram(4, 0);
  for (int c : count) ++histogram[static_cast<std::size_t>(std::min(c, 3))];
  return histogram;
}

std::vector<int> pivoted_qr_rows(const MatrixXd& z_nu) {
  const int dof = static_cast<int>(z_nu.cols());
  const MatrixXd joint_rows = z_nu.bottomRows(z_nu.rows() - kFatherRows).transpose();
  const Eigen::ColPivHouseholderQR<MatrixXd> qr(joint_rows);
  std::vector<int> out;
  for (int k = 0; k < dof; ++k) out.push_back(kFatherRows + qr.colsPermutation().indices()[k]);
  std::sort(out.begin(), out.end());
  return out;
}

EvolveResult evolve(const MatrixXd& z_nu, const GAConfig& cfg) {
  cfg.validate();
  const int dof = static_cast<int>(z_nu.cols());
  const int row_count = static_cast<int>(z_nu.rows());
  EvolveResult result;
  if (dof == 0) {
    result.population.push_back(make_pattern({}, z_nu, cfg.reward_exponent));
    result.converged = true;
    return result;
  }
  if (row_count - kFatherRows < dof) {
    throw Error(ErrorCode::kNoFullRankPattern, "fewer joint axes than degrees of freedom");
  }

  Rng rng(derive_seed(cfg.rng_seed, RngStream::kPlacement));
  const auto pop_size = static_cast<std::size_t>(cfg.population_size);
  std::vector<Candidate> pop;
  pop.reserve(pop_size);
  if (cfg.seed_with_qr) pop.push_back(pivoted_qr_rows(z_nu));
  while (pop.size() < pop_size) pop.push_back(random_candidate(dof, row_count, rng));

  std::vector<double> base(pop_size);
  auto evaluate = [&] {
    parallel_for(static_cast<int>(pop_size), cfg.threads, [&](int k) {
      base[static_cast<std::size_t>(k)] = fitness(pop[static_cast<std::size_t>(k)], z_nu, cfg.reward_exponent);
    });
  };

  Candidate best;
  double best_fitness = -1.0;
  int stall = 0;
  for (int gen = 0;; ++gen) {
    evaluate();
    bool improved = false;
    for (std::size_t k = 0; k < pop_size; ++k) {
      if (base[k] > best_fitness || (base[k] == best_fitness && pop[k] < best)) {
        improved = improved || base[k] > best_fitness;
        best_fitness = base[k];
        best = pop[k];
      }
    }
    stall = improved ? 0 : stall + 1;
    result.generations = gen;
    if (best_fitness > 0.0 && best_fitness >= cfg.fitness_threshold && stall >= cfg.stall_generations) {
      result.converged = true;
      break;
    }
    if (gen + 1 >= cfg.max_generations) break;

    // Selection weights carry the duplicate penalty.
    std::map<Candidate, int> copies;
    for (const auto& c : pop) ++copies[c];
    std::vector<double> cumulative(pop_size);
    double acc = 0.0;
    for (std::size_t k = 0; k < pop_size; ++k) {
      acc += base[k] / static_cast<double>(copies[pop[k]]);
      cumulative[k] = acc;
    }

    std::vector<Candidate> next;
    next.reserve(pop_size);
    next.push_back(best);
    while (next.size() < pop_size) {
      Candidate a = pop[roulette(cumulative, rng)];
      Candidate b = pop[roulette(cumulative, rng)];
      if (dof >= 2 && uniform01(rng) < cfg.crossover_prob) {
        const int cut = 1 + static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(dof - 1)));
        for (int k = cut; k < dof; ++k) std::swap(a[static_cast<std::size_t>(k)], b[static_cast<std::size_t>(k)]);
      }
      for (Candidate* child : {&a, &b}) {
        for (int& gene : *child) {
          if (uniform01(rng) < cfg.mutation_prob) {
            gene = kFatherRows +
                   static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(row_count - kFatherRows)));
          }
        }
        repair(*child, row_count, rng);
        if (next.size() < pop_size) next.push_back(std::move(*child));
      }
    }
    pop = std::move(next);
  }

  if (!(best_fitness > 0.0)) {
    throw Error(ErrorCode::kNoFullRankPattern,
                "no full-rank actuation pattern after " + std::to_string(result.generations + 1) + " generations");
  }
  std::map<Candidate, double> unique;
  for (std::size_t k = 0; k < pop_size; ++k) unique.emplace(pop[k], base[k]);
  unique.emplace(best, best_fitness);
  for (const auto& [c, f] : unique) {
    if (f > 0.0) result.population.push_back(make_pattern(c, z_nu, cfg.reward_exponent));
  }
  std::sort(result.population.begin(), result.population.end(), better);
  return result;
}

ActuationPattern exhaustive_best(const MatrixXd& z_nu, double reward_exponent, std::uint64_t max_subsets) {
  const int dof = static_cast<int>(z_nu.cols());
  const int rows = static_cast<int>(z_nu.rows()) - kFatherRows;
  if (dof > rows) throw Error(ErrorCode::kNoFullRankPattern, "fewer joint axes than degrees of freedom");
  double subsets = 1.0;
  for (int k = 0; k < dof; ++k) subsets = subsets * (rows - k) / (k + 1);
  if (subsets > static_cast<double>(max_subsets)) {
    throw Error(ErrorCode::kInvalidArgument, "exhaustive search over " + std::to_string(subsets) + " subsets");
  }
  Candidate c(static_cast<std::size_t>(dof));
  for (int k = 0; k < dof; ++k) c[static_cast<std::size_t>(k)] = kFatherRows + k;
  ActuationPattern best;
  best.fitness = -1.0;
  for (;;) {
    const double f = fitness(c, z_nu, reward_exponent);
    if (f > best.fitness) {
      best.fitness = f;
      best.rows = c;
    }
    int k = dof - 1;
    while (k >= 0 && c[static_cast<std::size_t>(k)] == kFatherRows + rows - dof + k) --k;
    if (k < 0) break;
    ++c[static_cast<std::size_t>(k)];
    for (int q = k + 1; q < dof; ++q) c[static_cast<std::size_t>(q)] = c[static_cast<std::size_t>(q - 1)] + 1;
  }
  if (!(best.fitness > 0.0)) throw Error(ErrorCode::kNoFullRankPattern, "every subset is singular");
  return make_pattern(best.rows, z_nu, reward_exponent);
}

double actuated_determinant(const MeshTopology& topo, std::span<const Pose> poses, std::span<const int> rows) {
  if (rows.empty()) return 1.0;
  const ActuatedVelocitySolver solver(topo, poses, rows);
  if (!solver.full_rank()) return 0.0;
  const MatrixXd m = solver.map();
  const Eigen::LLT<MatrixXd> llt(m.transpose() * m);
  if (llt.info() != Eigen::Success) return 0.0;
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return std::exp(-0.5 * log_det);
}

std::vector<Pose> probe_configuration(const MeshTopology& topo, std::span<const Pose> poses,
                                      std::span<const int> rows, int index, double angle) {
  constexpr int kSubsteps = 8;
  std::vector<Pose> state(poses.begin(), poses.end());
  VectorXd pi = VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
  pi[index] = angle >= 0.0 ? 1.0 : -1.0;
  const double h = std::abs(angle) / kSubsteps;
  for (int s = 0; s < kSubsteps; ++s) {
    const VectorXd k1 = ActuatedVelocitySolver(topo, state, rows).solve(pi);
    std::vector<Pose> mid = state;
    advance(topo, mid, k1, 0.5 * h);
    const VectorXd k2 = ActuatedVelocitySolver(topo, mid, rows).solve(pi);
    advance(topo, state, k2, h);
  }
  project_to_manifold(topo, state, 1e-10, 50);
  return state;
}

double sensitivity(std::span<const int> rows, const MeshTopology& topo, std::span<const Pose> poses,
                   double probe_angle) {
  double sum = 0.0;
  for (int k = 0; k < static_cast<int>(rows.size()); ++k) {
    try {
      const double plus = actuated_determinant(topo, probe_configuration(topo, poses, rows, k, probe_angle), rows);
      const double minus = actuated_determinant(topo, probe_configuration(topo, poses, rows, k, -probe_angle), rows);
      const double slope = (plus - minus) / (2.0 * probe_angle);
      sum += slope * slope;
    } catch (const Error& e) {
      // A probe that cannot stay on the constraints is as fragile as it gets.
      if (e.code() != ErrorCode::kInitFitFailure && e.code() != ErrorCode::kSingularActuation) throw;
      return std::numeric_limits<double>::infinity();
    }
  }
  return sum;
}

ActuationPattern select_pattern(std::span<const ActuationPattern> candidates) {
  const ActuationPattern* best = nullptr;
  for (const auto& c : candidates) {
    if (!(c.fitness > 0.0)) continue;
    if (best == nullptr || c.sensitivity < best->sensitivity ||
        (c.sensitivity == best->sensitivity &&
         (c.fitness > best->fitness || (c.fitness == best->fitness && c.rows < best->rows)))) {
      best = &c;
    }
  }
  if (best == nullptr) throw Error(ErrorCode::kNoFullRankPattern, "no candidate with nonzero fitness");
  return *best;
}

ActuationPattern place_actuators(const EvolveResult& evolved, const MeshTopology& topo,
                                 std::span<const Pose> poses, const GAConfig& cfg) {
  const auto count = std::min(evolved.population.size(), static_cast<std::size_t>(cfg.sensitivity_candidates));
  std::vector<ActuationPattern> scored(evolved.population.begin(),
                                       evolved.population.begin() + static_cast<std::ptrdiff_t>(count));
  for (auto& c : scored) {
    if (c.fitness > 0.0) c.sensitivity = sensitivity(c.rows, topo, poses, cfg.probe_angle);
  }
  return select_pattern(scored);
}

nlohmann::json pattern_to_json(const ActuationPattern& p, const MeshTopology& topo, int dof, std::uint64_t seed) {
  nlohmann::json labels = nlohmann::json::array();
  for (int r : p.rows) labels.push_back(topo.relative_row_label(r));
  return {{"mesh", {{"n", topo.rows()}, {"m", topo.cols()}}},
          {"dof", dof},
          {"rows", p.rows},
          {"joint_axis_labels", labels},
          {"fitness", p.fitness},
          {"determinant", p.determinant},
          {"sensitivity", p.sensitivity},
          {"motors_per_joint", p.motors_per_joint},
          {"seed", seed}};
}

ActuationPattern pattern_from_json(const nlohmann::json& j, const MeshTopology& topo, int dof) {
  try {
    if (j.at("mesh").at("n").get<int>() != topo.rows() || j.at("mesh").at("m").get<int>() != topo.cols()) {
      throw Error(ErrorCode::kConfig, "pattern mesh size does not match the scenario mesh");
    }
    if (j.at("dof").get<int>() != dof) {
      throw Error(ErrorCode::kConfig, "pattern dof " + std::to_string(j.at("dof").get<int>()) +
                                          " does not match mesh dof " + std::to_string(dof));
    }
    ActuationPattern p;
    p.rows = j.at("rows").get<std::vector<int>>();
    if (static_cast<int>(p.rows.size()) != dof) throw Error(ErrorCode::kConfig, "pattern rows do not match dof");
    std::sort(p.rows.begin(), p.rows.end());
    for (std::size_t k = 0; k < p.rows.size(); ++k) {
      if (p.rows[k] < kFatherRows || p.rows[k] >= topo.relative_dim() || (k > 0 && p.rows[k] == p.rows[k - 1])) {
        throw Error(ErrorCode::kConfig, "pattern row " + std::to_string(p.rows[k]) + " is invalid");
      }
    }
    p.fitness = j.value("fitness", 0.0);
    p.determinant = j.value("determinant", 0.0);
    // Written as null when infinite.
    const auto sens = j.find("sensitivity");
    p.sensitivity = sens == j.end() ? 0.0
                    : sens->is_null() ? std::numeric_limits<double>::infinity()
                                      : sens->get<double>();
    p.motors_per_joint = motors_per_joint(p.rows, topo.joint_count());
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("pattern file: ") + e.what());
  }
}

}  // namespace morphmesh
