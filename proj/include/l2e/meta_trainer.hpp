#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "l2e/benchmarks.hpp"
#include "l2e/gec_solver.hpp"
#include "l2e/neural_operator.hpp"
#include "l2e/param_store.hpp"

namespace l2e {

enum class Sharing { Shared, Unshared };
enum class OptimizerKind { PlainGd, Momentum };

std::string_view sharing_name(Sharing s);
Sharing parse_sharing(std::string_view name);
std::string_view optimizer_name(OptimizerKind o);
OptimizerKind parse_optimizer(std::string_view name);

inline constexpr double kMetaEps = 1e-8;

struct MetaConfig {
  std::size_t T = 200;
  double gamma = 0.01;
  std::size_t tasks_per_batch = 8;
  std::size_t pop = 16;
  InnerConfig inner;
  OperatorConfig op;  // op.dim must equal the task dimension
  TaskDistribution tasks;
  Sharing sharing = Sharing::Unshared;
  OptimizerKind optimizer = OptimizerKind::Momentum;
  double momentum = 0.9;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
  std::size_t threads = 0;       // 0: hardware concurrency
  std::size_t eval_every = 10;   // validation cadence for best-checkpoint selection
  int max_halvings = 3;

  void validate() const;  // throws ConfigError
  bool operator==(const MetaConfig&) const = default;
  std::size_t num_blocks() const { return sharing == Sharing::Shared ? 1 : inner.K; }
};

// Engine seeded through seed_seq from (seed, stream, index). Streams: 0 init,
// 1 training batches, 2 held-out batch, 3 evaluation population, 4 baselines,
// 5 evaluation instance seeds.
std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

std::string block_prefix(std::size_t k);

// Fresh, spectrally normalized parameters for every block.
ParamStore init_params(const MetaConfig& cfg);
std::vector<OperatorBlockParams> block_views(const ParamStore& store, const MetaConfig& cfg);

struct TaskSample {
  ObjectiveFunction f;
  Population x0;
};

// Tasks and initial populations from a seed derived from (master seed, stream, index).
std::vector<TaskSample> sample_batch(const MetaConfig& cfg, std::uint64_t stream, std::uint64_t index);
// The fixed held-out batch used for validation and for T-vs-T comparisons.
std::vector<TaskSample> heldout_batch(const MetaConfig& cfg, std::size_t n_tasks = 0);

// −mean over trajectories of (f̄(x⁰) − f̄(x^K)) / (|f̄(x⁰)| + ε). All
// trajectories must share one tape (or none).
Tensor meta_loss(const std::vector<Trajectory>& trajectories, double eps = kMetaEps);

using FrozenRun = std::vector<std::vector<StepConstants>>;  // per task

struct MetaGradient {
  double loss = 0;
  GradientMap grads;
  FrozenRun constants;
};

// Mean meta-loss and its BPTT gradient over `tasks`, one tape per task,
// reduced in task order.
MetaGradient meta_gradient(const ParamStore& store, const std::vector<TaskSample>& tasks, const MetaConfig& cfg,
                           const FrozenRun* replay = nullptr);

double evaluate_meta_loss(const ParamStore& store, const std::vector<TaskSample>& tasks, const MetaConfig& cfg,
                          const FrozenRun* replay = nullptr);

struct ParamIndex {
  std::string path;
  std::size_t index = 0;
};

// Central differences of the mean meta-loss with task sampling, initial
// populations and every stop-gradient constant frozen to `frozen`.
std::vector<double> finite_difference_meta_grad(const ParamStore& store, const std::vector<TaskSample>& tasks,
                                                const MetaConfig& cfg, const FrozenRun& frozen,
                                                const std::vector<ParamIndex>& subset, double h);

struct OptimizerState {
  GradientMap velocity;
};

// Clip to cfg.clip_norm, descend (optionally with momentum), re-normalize
// spectra. Returns the pre-clip global norm.
double meta_step(ParamStore& store, const GradientMap& grads, const MetaConfig& cfg, double gamma,
                 OptimizerState& state);

struct TrainRecord {
  std::vector<double> meta_loss;
  std::vector<double> grad_norm;
  std::vector<double> wall_time;  // seconds since start; excluded from equality
  std::vector<double> spectral_max;
  std::vector<double> gamma;
  std::vector<std::pair<std::size_t, double>> validation;  // (iteration, held-out meta-loss)
  std::size_t best_iteration = 0;
  double best_validation = 0;
  int halvings = 0;
  std::string checkpoint_path;

  bool same_values(const TrainRecord& other) const;
};

struct TrainResult {
  ParamStore params;  // best by held-out meta-loss
  ParamStore final_params;
  TrainRecord record;
};

struct TrainHooks {
  std::function<void(std::size_t iteration, double loss)> progress;
  // Sees each iteration's meta-gradient before the update (fault injection in tests).
  std::function<void(std::size_t iteration, MetaGradient&)> gradient;
};

TrainResult train(const MetaConfig& cfg, const TrainHooks& hooks = {});

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure by index order.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace l2e
