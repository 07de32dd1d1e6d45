#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "l2e/baselines.hpp"
#include "l2e/config.hpp"
#include "l2e/meta_trainer.hpp"
#include "l2e/theory_checks.hpp"

namespace l2e {

struct RunRecord {
  std::string run_id;
  std::string method;    // "l2e" or a baseline name
  std::string function;  // FunctionDescriptor text
  std::uint64_t seed = 0;
  std::string config_text;
  std::string config_hash;
  std::string trajectory_path;
  double final_best = 0;
  double final_error = 0;  // final_best − f_opt
  double wall_time = 0;
  std::size_t evaluations = 0;
  std::size_t gradient_queries = 0;
  std::size_t budget = 0;
  // (evaluation index, best error so far) at every improvement, 1-based.
  std::vector<std::pair<std::size_t, double>> history;
  std::vector<StepDiagnostics> trajectory;  // persisted as trajectory.csv

  std::string to_json() const;
  static RunRecord from_json(std::string_view text);
};

std::string make_run_id(std::string_view config_text, std::string_view method, std::string_view function,
                        std::uint64_t seed);

// Held-out instance for (family, seed) under the evaluation settings.
FunctionDescriptor eval_descriptor(const ExperimentConfig& cfg, Family family, std::uint64_t seed);
ObjectiveFunction eval_objective(const ExperimentConfig& cfg, const FunctionDescriptor& d);

// 2 gate-candidate evaluations and 1 post-update evaluation per individual
// per step.
inline std::size_t evaluations_per_unroll(std::size_t pop, std::size_t K) { return 3 * pop * K; }
// Initial population plus one unroll.
std::size_t minimum_budget(const MetaConfig& cfg);

// Initial population, then warm-started K-step unrolls; the last one is
// truncated to the steps that still fit and fewer than 3·pop leftover
// evaluations go to uniform samples. Spends exactly eval.budget.
RunRecord run_l2e(const ParamStore& params, const ExperimentConfig& cfg, Family family, std::uint64_t seed);
RunRecord run_baseline_record(const ExperimentConfig& cfg, BaselineAlgorithm algorithm, Family family,
                              std::uint64_t seed);

// Every (function, seed) for the learned optimizer and, optionally, the
// configured baselines. Jobs run on cfg.meta.threads workers; output order is
// fixed (method, function, seed).
std::vector<RunRecord> run_eval(const ParamStore& params, const ExperimentConfig& cfg, bool with_baselines = true);

// Re-executes a record from its own config text, method, function and seed.
RunRecord rerun(const RunRecord& record, const ParamStore* params);

// <root>/<run_id>/{config.txt, trajectory.csv, record.json}; sets
// trajectory_path. Returns the run directory.
std::filesystem::path save_run(const std::filesystem::path& root, RunRecord& record);
RunRecord load_run(const std::filesystem::path& run_dir);
std::vector<RunRecord> load_runs(const std::filesystem::path& root);

// --- training artifacts ---------------------------------------------------------

// Hash of the settings that determine trained parameters (the meta section).
std::string training_hash(const ExperimentConfig& cfg);

// <dir>/train.csv (iteration, meta_loss, grad_norm, wall_time, spectral_max,
// gamma, validation) and <dir>/best.ckpt with a manifest holding config_hash
// and training_hash. Returns the checkpoint path.
inline constexpr const char* kTrainHeader = "iteration,meta_loss,grad_norm,wall_time,spectral_max,gamma,validation";
std::string format_train_csv(const TrainRecord& rec);
std::filesystem::path save_training(const std::filesystem::path& dir, const ExperimentConfig& cfg, TrainResult& res);
// Throws ConfigError when the checkpoint was trained under a different meta
// section than cfg.
ParamStore load_trained(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg);

// --- theory suite -----------------------------------------------------------------

// Contraction bound, bias decay per α, KM residual convergence on the affine
// testbed, and the Lipschitz estimate of every learned block of `params`
// (freshly initialized when null).
std::vector<CheckReport> theory_suite(const ExperimentConfig& cfg, const ParamStore* params = nullptr);
std::string theory_report_json(const std::vector<CheckReport>& reports);

// --- ablations ---------------------------------------------------------------

enum class AblationVariant { Full, NoProxyGrad, NoSoftGate, NoMamba, Shared, Unshared };

std::string_view variant_name(AblationVariant v);
AblationVariant parse_variant(std::string_view name);  // throws ConfigError
MetaConfig apply_variant(MetaConfig cfg, AblationVariant v);

struct AblationRow {
  AblationVariant variant;
  std::vector<Family> functions;
  std::vector<std::vector<double>> errors;  // [function][seed]
  std::vector<double> mean, stddev;         // per function
  std::vector<double> meta_loss;            // training curve
};

struct SignTest {
  std::size_t wins = 0, losses = 0, ties = 0;  // wins: first strictly better
  double p_value = 1.0;                        // two-sided exact binomial
};

SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b);

struct Comparison {
  AblationVariant baseline, variant;
  std::size_t functions_not_worse = 0;  // baseline mean ≤ variant mean
  SignTest paired;                      // over all (function, seed) pairs
};

Comparison compare(const AblationRow& base, const AblationRow& variant);

// Trains `variant` under cfg (same seeds) and evaluates it on eval.suite ×
// eval.seeds.
AblationRow run_ablation(AblationVariant variant, const ExperimentConfig& cfg, const TrainHooks& hooks = {});
AblationRow evaluate_variant(AblationVariant variant, const ParamStore& params, const ExperimentConfig& cfg);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

// --- ECDF -------------------------------------------------------------------

struct EcdfCurve {
  std::vector<double> targets;
  std::size_t budget = 0;
  std::vector<std::size_t> evaluations;  // step positions, ascending
  std::vector<double> values;            // proportion solved at and after each step

  double at(std::size_t evaluation) const;
  std::string to_json() const;
};

// Proportion of (record, target) pairs whose best error reaches the target
// within the first e evaluations.
EcdfCurve compute_ecdf(const std::vector<RunRecord>& records, const std::vector<double>& targets);
std::vector<double> log_targets(double hi = 1e2, double lo = 1e-8, std::size_t per_decade = 1);

}  // namespace l2e
