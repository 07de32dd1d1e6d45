#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "l2e/baselines.hpp"
#include "l2e/meta_trainer.hpp"

namespace l2e {

struct EvalConfig {
  std::vector<Family> suite{Family::Sphere, Family::Rastrigin};
  std::size_t budget = 2000;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<BaselineAlgorithm> baselines{BaselineAlgorithm::RandomSearch, BaselineAlgorithm::DE,
                                           BaselineAlgorithm::PSO};
  bool surrogate_shift = false;

  bool operator==(const EvalConfig&) const = default;
};

struct TheoryConfig {
  std::size_t trials = 100;
  std::size_t dim = 5;
  double alpha = 0.5;
  std::size_t K = 10;
  std::vector<double> bias_alphas{0.3, 0.5, 0.7};
  std::vector<std::size_t> bias_Ks{5, 10, 15, 20, 25, 30};
  double kappa = 1.0;
  std::size_t residual_steps = 500;
  std::size_t lipschitz_pairs = 400;
  std::uint64_t seed = 0;

  bool operator==(const TheoryConfig&) const = default;
};

struct ExperimentConfig {
  MetaConfig meta;
  EvalConfig eval;
  TheoryConfig theory;
  std::string out_dir = "runs";

  void validate() const;  // throws ConfigError
  bool operator==(const ExperimentConfig&) const = default;
};

// Flat `key=value` text, one pair per line, `#` starts a comment. Unknown or
// repeated keys and malformed lines throw ParseError with the line number.
// Keys not present keep their defaults. The result is validated.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig read_config(const std::filesystem::path& file);

// Every key in a fixed order; parse_config(format_config(c)) == c.
std::string format_config(const ExperimentConfig& cfg);
void write_config(const std::filesystem::path& file, const ExperimentConfig& cfg);

// FNV-1a of format_config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace l2e
