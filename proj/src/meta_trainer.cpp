#include "l2e/meta_trainer.hpp"

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

#include "l2e/errors.hpp"
#include "l2e/ops.hpp"

namespace l2e {
namespace {

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

struct TaskResult {
  double loss = 0;
  GradientMap grads;
  std::vector<StepConstants> constants;
};

}  // namespace

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::string_view sharing_name(Sharing s) { return s == Sharing::Shared ? "shared" : "unshared"; }

Sharing parse_sharing(std::string_view name) {
  if (name == "shared") return Sharing::Shared;
  if (name == "unshared") return Sharing::Unshared;
  throw ConfigError("unknown sharing mode '" + std::string(name) + "'");
}

std::string_view optimizer_name(OptimizerKind o) { return o == OptimizerKind::PlainGd ? "plain-gd" : "momentum"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "plain-gd") return OptimizerKind::PlainGd;
  if (name == "momentum") return OptimizerKind::Momentum;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void MetaConfig::validate() const {
  if (T < 1) throw ConfigError("T must be at least 1");
  if (!(gamma > 0)) throw ConfigError("gamma must be positive");
  if (tasks_per_batch == 0) throw ConfigError("tasks_per_batch must be positive");
  if (pop < 2) throw ConfigError("pop must be at least 2");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (max_halvings < 0) throw ConfigError("max_halvings must be non-negative");
  inner.validate();
  op.validate();
  tasks.validate();
  for (auto d : tasks.dims)
    if (d != op.dim)
      throw ConfigError("task dimension " + std::to_string(d) + " differs from operator dimension " +
                        std::to_string(op.dim));
}

std::string block_prefix(std::size_t k) { return "block" + std::to_string(k) + "."; }

ParamStore init_params(const MetaConfig& cfg) {
  cfg.validate();
  ParamStore store;
  auto rng = derived_rng(cfg.seed, 0, 0);
  for (std::size_t k = 0; k < cfg.num_blocks(); ++k) add_operator_params(store, block_prefix(k), cfg.op, rng);
  return store;
}

std::vector<OperatorBlockParams> block_views(const ParamStore& store, const MetaConfig& cfg) {
  std::vector<OperatorBlockParams> out;
  for (std::size_t k = 0; k < cfg.num_blocks(); ++k)
    out.push_back(OperatorBlockParams::view(store, block_prefix(k), cfg.op));
  return out;
}

std::vector<TaskSample> sample_batch(const MetaConfig& cfg, std::uint64_t stream, std::uint64_t index) {
  auto rng = derived_rng(cfg.seed, stream, index);
  std::vector<TaskSample> out;
  for (std::size_t i = 0; i < cfg.tasks_per_batch; ++i) {
    const ObjectiveFunction f = prepare_objective(sample_task(cfg.tasks, rng), cfg.inner);
    Population x0 = initial_population(f, 1, cfg.pop, rng);
    out.push_back(TaskSample{f, std::move(x0)});
  }
  return out;
}

std::vector<TaskSample> heldout_batch(const MetaConfig& cfg, std::size_t n_tasks) {
  MetaConfig c = cfg;
  if (n_tasks) c.tasks_per_batch = n_tasks;
  return sample_batch(c, 2, 0);
}

Tensor meta_loss(const std::vector<Trajectory>& trajectories, double eps) {
  if (trajectories.empty()) throw ContractError("meta_loss needs at least one trajectory");
  if (!(eps > 0)) throw ContractError("meta_loss epsilon must be positive");
  Tensor total = Tensor::scalar(0.0);
  for (const auto& t : trajectories) {
    double f0 = 0;
    for (double v : t.fit.front().data()) f0 += v;
    f0 /= static_cast<double>(t.fit.front().size());
    const Tensor fk = mean(t.fit.back());
    total = add(total, scale(add_scalar(neg(fk), f0), 1.0 / (std::abs(f0) + eps)));
  }
  return scale(total, -1.0 / static_cast<double>(trajectories.size()));
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

MetaGradient meta_gradient(const ParamStore& store, const std::vector<TaskSample>& tasks, const MetaConfig& cfg,
                           const FrozenRun* replay) {
  if (tasks.empty()) throw ContractError("meta_gradient needs at least one task");
  if (replay && replay->size() != tasks.size()) throw ContractError("frozen run does not match the task batch");
  std::vector<TaskResult> results(tasks.size());
  parallel_for(tasks.size(), cfg.threads, [&](std::size_t i) {
    Tape tape;
    const ParamStore bound = store.bind(tape);
    UnrollOptions opt;
    if (replay) opt.replay = &(*replay)[i];
    Trajectory traj = unroll(tasks[i].x0, tasks[i].f, block_views(bound, cfg), cfg.inner, opt);
    const Tensor loss = meta_loss({traj});
    results[i].loss = loss.item();
    results[i].grads = backward(loss, bound);
    results[i].constants = std::move(traj.constants);
  });

  MetaGradient out;
  const double inv = 1.0 / static_cast<double>(tasks.size());
  for (auto& r : results) {
    out.loss += r.loss * inv;
    for (const auto& [path, g] : r.grads) {
      auto it = out.grads.find(path);
      if (it == out.grads.end())
        out.grads.emplace(path, scale(g, inv));
      else
        it->second = add(it->second, scale(g, inv));
    }
    out.constants.push_back(std::move(r.constants));
  }
  return out;
}

double evaluate_meta_loss(const ParamStore& store, const std::vector<TaskSample>& tasks, const MetaConfig& cfg,
                          const FrozenRun* replay) {
  if (tasks.empty()) throw ContractError("evaluate_meta_loss needs at least one task");
  if (replay && replay->size() != tasks.size()) throw ContractError("frozen run does not match the task batch");
  std::vector<double> losses(tasks.size());
  const auto views = block_views(store, cfg);
  parallel_for(tasks.size(), cfg.threads, [&](std::size_t i) {
    UnrollOptions opt;
    if (replay) opt.replay = &(*replay)[i];
    losses[i] = meta_loss({unroll(tasks[i].x0, tasks[i].f, views, cfg.inner, opt)}).item();
  });
  double total = 0;
  for (double l : losses) total += l / static_cast<double>(tasks.size());
  return total;
}

std::vector<double> finite_difference_meta_grad(const ParamStore& store, const std::vector<TaskSample>& tasks,
                                                const MetaConfig& cfg, const FrozenRun& frozen,
                                                const std::vector<ParamIndex>& subset, double h) {
  if (!(h > 0)) throw ContractError("finite-difference step must be positive");
  std::vector<double> out;
  for (const auto& pi : subset) {
    const Tensor& base = store.get(pi.path);
    if (pi.index >= base.size()) throw DimensionError("index out of range for " + pi.path);
    ParamStore plus = store, minus = store;
    Tensor tp = base.detached(), tm = base.detached();
    tp.mutable_data()[pi.index] += h;
    tm.mutable_data()[pi.index] -= h;
    plus.set(pi.path, tp);
    minus.set(pi.path, tm);
    out.push_back((evaluate_meta_loss(plus, tasks, cfg, &frozen) - evaluate_meta_loss(minus, tasks, cfg, &frozen)) /
                  (2 * h));
  }
  return out;
}

double meta_step(ParamStore& store, const GradientMap& grads, const MetaConfig& cfg, double gamma,
                 OptimizerState& state) {
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    const auto it = grads.find(e.path);
    if (it == grads.end()) throw ContractError("missing gradient for " + e.path);
    if (!it->second.all_finite()) throw NumericError("non-finite gradient for " + e.path);
  }
  const double gnorm = global_norm(grads);
  const double factor = gnorm > cfg.clip_norm ? cfg.clip_norm / gnorm : 1.0;
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    Tensor step = scale(grads.at(e.path), factor);
    if (cfg.optimizer == OptimizerKind::Momentum) {
      auto v = state.velocity.find(e.path);
      if (v == state.velocity.end())
        v = state.velocity.emplace(e.path, Tensor(step.shape(), 0.0)).first;
      v->second = add(scale(v->second, cfg.momentum), step);
      step = v->second;
    }
    store.set(e.path, sub(e.value, scale(step, gamma)));
  }
  normalize_spectra(store);
  return gnorm;
}

bool TrainRecord::same_values(const TrainRecord& o) const {
  return same_bits(meta_loss, o.meta_loss) && same_bits(grad_norm, o.grad_norm) &&
         same_bits(spectral_max, o.spectral_max) && same_bits(gamma, o.gamma) && validation == o.validation &&
         best_iteration == o.best_iteration && best_validation == o.best_validation && halvings == o.halvings;
}

TrainResult train(const MetaConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult res;
  ParamStore store = init_params(cfg);
  const auto val = heldout_batch(cfg);
  TrainRecord& rec = res.record;

  ParamStore best = store;
  double best_val = evaluate_meta_loss(store, val, cfg);
  rec.validation.emplace_back(0, best_val);
  rec.best_iteration = 0;

  double gamma = cfg.gamma;
  OptimizerState opt;
  for (std::size_t t = 0; t < cfg.T; ++t) {
    const auto tasks = sample_batch(cfg, 1, t);
    double loss = NAN, gnorm = NAN;
    try {
      MetaGradient mg = meta_gradient(store, tasks, cfg);
      if (hooks.gradient) hooks.gradient(t + 1, mg);
      if (!std::isfinite(mg.loss)) throw NumericError("non-finite meta-loss at iteration " + std::to_string(t + 1));
      gnorm = meta_step(store, mg.grads, cfg, gamma, opt);
      loss = mg.loss;
    } catch (const NumericError& e) {
      if (++rec.halvings > cfg.max_halvings)
        throw NumericError(std::string("meta-training diverged after ") + std::to_string(cfg.max_halvings) +
                           " step-size halvings: " + e.what());
      store = best;
      gamma *= 0.5;
      opt = OptimizerState{};
      loss = NAN;
      gnorm = NAN;
    }
    rec.meta_loss.push_back(loss);
    rec.grad_norm.push_back(gnorm);
    rec.spectral_max.push_back(max_spectral_norm(store));
    rec.gamma.push_back(gamma);
    rec.wall_time.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.T) {
      double v = NAN;
      try {
        v = evaluate_meta_loss(store, val, cfg);
      } catch (const NumericError&) {
      }
      rec.validation.emplace_back(t + 1, v);
      if (v < best_val) {
        best_val = v;
        best = store;
        rec.best_iteration = t + 1;
      }
    }
    if (hooks.progress) hooks.progress(t + 1, loss);
  }
  rec.best_validation = best_val;
  res.params = std::move(best);
  res.final_params = std::move(store);
  return res;
}

}  // namespace l2e
