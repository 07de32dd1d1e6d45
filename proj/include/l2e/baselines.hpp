#pragma once

#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "l2e/benchmarks.hpp"
#include "l2e/gec_solver.hpp"

namespace l2e {

enum class BaselineAlgorithm { RandomSearch, DE, PSO };

std::string_view baseline_name(BaselineAlgorithm a);
BaselineAlgorithm parse_baseline(std::string_view name);

struct BaselineConfig {
  BaselineAlgorithm algorithm = BaselineAlgorithm::DE;
  std::size_t pop = 16;
  std::size_t budget = 2000;
  double F = 0.5, CR = 0.9;                        // DE rand/1/bin
  double w = 0.729, c1 = 1.49445, c2 = 1.49445;    // PSO constriction defaults
  double velocity_clamp = 0.5;                     // fraction of (hi − lo)

  void validate() const;  // throws ConfigError
  bool operator==(const BaselineConfig&) const = default;
};

using Point = std::vector<double>;

struct DeState {
  std::vector<Point> x;
  std::vector<double> fit;
};

struct Swarm {
  std::vector<Point> x, v, pbest;
  std::vector<double> fit, pbest_fit;
  Point gbest;
  double gbest_fit = INFINITY;
};

DeState de_init(const Objective& f, std::size_t pop, std::mt19937_64& rng);
// rand/1/bin trial vector for target i, clamped to the box.
Point de_trial(const DeState& s, std::size_t i, const BaselineConfig& cfg, const Box& box, std::mt19937_64& rng,
               std::optional<std::size_t> j_rand = {});
// One synchronous generation over the first `limit` targets (all by default).
// Returns the number of evaluations used.
std::size_t de_step(DeState& s, const Objective& f, const BaselineConfig& cfg, std::mt19937_64& rng,
                    std::size_t limit = SIZE_MAX);

Swarm pso_init(const Objective& f, std::size_t pop, std::mt19937_64& rng);
std::size_t pso_step(Swarm& s, const Objective& f, const BaselineConfig& cfg, std::mt19937_64& rng,
                     std::size_t limit = SIZE_MAX);

struct BaselineResult {
  Point best_x;
  double best = INFINITY;
  std::size_t evaluations = 0;
  std::vector<StepDiagnostics> trajectory;  // one row per generation
};

BaselineResult random_search(const Objective& f, std::size_t budget, std::mt19937_64& rng,
                             std::size_t row_every = 16);

// Runs the configured algorithm for exactly cfg.budget evaluations.
BaselineResult run_baseline(const Objective& f, const BaselineConfig& cfg, std::mt19937_64& rng);

}  // namespace l2e
