// Acceptance suite: one PASS/FAIL line per criterion. Exit status 0 iff all pass.
// Usage: acceptance [criterion numbers...]
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>

#include "l2e/harness.hpp"

using namespace l2e;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1-3: convergence theory on synthetic operators ----------------------------

Outcome contraction_bound() {
  const double alpha = 0.5, bound = std::pow(1 - alpha, 10);
  double worst = 0, worst_norm = 0;
  bool ok = bound == 9.765625e-4;
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto rng = derived_rng(i, 0, 0);
    const auto op = affine_contraction(5, alpha, rng);
    worst_norm = std::max(worst_norm, spectral_norm_svd(op.Q, op.dim));
    for (std::size_t t = 0; t < 10; ++t) {
      Vec x0(op.dim);
      double n = 0;
      for (double& v : x0) n += (v = std::normal_distribution<double>()(rng)) * v;
      for (std::size_t j = 0; j < x0.size(); ++j) x0[j] = (*op.fixed_point)[j] + x0[j] / std::sqrt(n);
      worst = std::max(worst, vec_distance(km_sequence(op, x0, alpha, 10).back(), *op.fixed_point));
    }
    ok = ok && check_contraction_bound(op, alpha, 10, 10, i).passed;
  }
  ok = ok && worst <= bound + 1e-9 && worst_norm <= 1 + 1e-12;
  return {ok, fmt("100 operators x 10 starts, max ||Q|| %.12f, max terminal error %.6e <= %.6e + 1e-9", worst_norm,
                  worst, bound)};
}

Outcome bias_decay() {
  bool ok = true;
  std::string d;
  for (double a : {0.3, 0.5, 0.7}) {
    auto rng = derived_rng(0, 1, 0);
    const auto op = affine_contraction(5, a, rng);
    const auto t = bias_vs_K(op, a, {5, 10, 15, 20, 25, 30}, 0);
    const auto r = check_bias_decay(t, a, 0.1);
    ok = ok && r.passed;
    d += fmt("alpha %.1f slope %.5f vs %.5f; ", a, t.slope, 2 * std::log(1 - a));
  }
  return {ok, d + "tolerance 10%"};
}

Outcome residual_convergence() {
  auto rng = derived_rng(0, 2, 0);
  const auto op = affine_contraction(5, 0.5, rng);
  Vec x0(5);
  for (double& v : x0) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto r = km_residuals(op, x0, 1.0, 500);
  double worst_increase = 0;
  for (std::size_t k = 1; k < r.size(); ++k) worst_increase = std::max(worst_increase, r[k] - r[k - 1]);
  const bool ok = check_residual_convergence(r).passed && worst_increase <= 1e-12 && r[500] < 1e-3;
  return {ok, fmt("kappa 1, r[0] %.3e, r[500] %.3e < 1e-3, max increase %.1e <= 1e-12", r[0], r[500], worst_increase)};
}

// --- shared 200-iteration training run -------------------------------------------

ExperimentConfig efficacy_config() {
  ExperimentConfig c;
  c.meta.tasks.weights = {{Family::Sphere, 0.5}, {Family::Rastrigin, 0.5}};
  c.meta.T = 200;
  c.eval.suite = {Family::Sphere, Family::Rastrigin};
  c.eval.budget = 2000;
  c.eval.baselines = {BaselineAlgorithm::RandomSearch};
  return c;
}

const TrainResult& trained() {
  static const TrainResult res = train(efficacy_config().meta);
  return res;
}

Outcome lipschitz_enforcement() {
  const TrainResult& res = trained();
  const MetaConfig& m = efficacy_config().meta;
  double worst_sn = 0;
  for (double s : res.record.spectral_max) worst_sn = std::max(worst_sn, s);
  const bool every_step = res.record.spectral_max.size() == m.T;
  double worst_L = 0;
  for (const ParamStore* p : {&res.final_params, &res.params}) {
    auto store = std::make_shared<const ParamStore>(*p);
    for (std::size_t k = 0; k < m.num_blocks(); ++k) {
      auto rng = derived_rng(0, 3, k);
      const auto op = learned_block_operator(store, block_prefix(k), m.op, m.pop, rng);
      worst_L = std::max(worst_L, estimate_lipschitz(op, 400, k));
    }
  }
  return {every_step && worst_sn <= 1 + 1e-6 && worst_L <= 1.05,
          fmt("%zu meta-steps, max spectral norm %.9f <= 1 + 1e-6; max block Lipschitz %.4f <= 1.05",
              res.record.spectral_max.size(), worst_sn, worst_L)};
}

// --- 5-6: meta-gradient and meta-loss ------------------------------------------------

MetaConfig toy_config() {
  MetaConfig c;
  c.tasks_per_batch = 2;
  c.pop = 4;
  c.inner.K = 3;
  c.op.d_model = 8;
  c.op.heads = 2;
  c.op.router_hidden = 4;
  c.tasks.weights = {{Family::Sphere, 1.0}};
  c.tasks.dims = {2};
  c.seed = 17;
  return c;
}

Outcome bptt_correctness() {
  const MetaConfig cfg = toy_config();
  const ParamStore store = init_params(cfg);
  const auto tasks = sample_batch(cfg, 1, 0);
  const MetaGradient mg = meta_gradient(store, tasks, cfg);
  std::mt19937_64 rng(5);
  std::vector<ParamIndex> subset;
  while (subset.size() < 50) {
    const auto& e = store.entries()[rng() % store.entries().size()];
    subset.push_back({e.path, static_cast<std::size_t>(rng() % e.value.size())});
  }
  const auto fd = finite_difference_meta_grad(store, tasks, cfg, mg.constants, subset, 1e-5);
  double worst = 0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const double b = mg.grads.at(subset[i].path)[subset[i].index];
    const double err = std::abs(b - fd[i]), scale = std::max(std::abs(b), std::abs(fd[i]));
    if (err > 1e-3 * scale + 1e-8) ++bad;
    if (scale > 1e-8) worst = std::max(worst, err / scale);
  }
  return {bad == 0, fmt("50 sampled parameters, %zu outside tolerance, max relative error %.2e (rel-tol 1e-3)", bad,
                        worst)};
}

Outcome scale_invariance() {
  const MetaConfig cfg = efficacy_config().meta;
  const ParamStore store = init_params(cfg);
  const auto blocks = block_views(store, cfg);
  double worst = 0, min_f0 = INFINITY;
  std::size_t n = 0;
  for (std::uint64_t b = 0; b < 5; ++b)
    for (const auto& task : sample_batch(cfg, 1, b)) {
      const Trajectory t = unroll(task.x0, task.f, blocks, cfg.inner);
      Trajectory a, s;
      for (std::size_t k : {std::size_t{0}, t.fit.size() - 1}) {
        const Tensor f = t.fit[k].detached();
        std::vector<double> scaled = f.values();
        for (double& v : scaled) v *= 100;
        a.fit.push_back(f);
        s.fit.push_back(Tensor(f.shape(), scaled));
      }
      double f0 = 0;
      for (double v : a.fit[0].values()) f0 += v / static_cast<double>(a.fit[0].size());
      min_f0 = std::min(min_f0, std::abs(f0));
      worst = std::max(worst, std::abs(meta_loss({a}).item() - meta_loss({s}).item()));
      ++n;
    }
  return {worst < 1e-9, fmt("%zu trajectories, min |mean f(x0)| / eps = %.1e, max |L(f) - L(100 f)| = %.2e < 1e-9", n,
                            min_f0 / kMetaEps, worst)};
}

// --- 7: training efficacy ----------------------------------------------------------------

Outcome training_efficacy() {
  const ExperimentConfig cfg = efficacy_config();
  MetaConfig one = cfg.meta;
  one.T = 1;
  const auto val = heldout_batch(cfg.meta);
  const double l1 = evaluate_meta_loss(train(one).final_params, val, cfg.meta);
  const double l200 = evaluate_meta_loss(trained().final_params, val, cfg.meta);

  const auto records = run_eval(trained().params, cfg);
  const std::size_t ns = cfg.eval.seeds.size(), nf = cfg.eval.suite.size();
  std::size_t wins = 0;
  std::string per_seed;
  for (std::size_t s = 0; s < ns; ++s) {
    double l2e = 0, rs = 0;
    for (std::size_t f = 0; f < nf; ++f) {
      l2e += records[f * ns + s].final_error / static_cast<double>(nf);
      rs += records[(nf + f) * ns + s].final_error / static_cast<double>(nf);
    }
    if (l2e < rs) ++wins;
    per_seed += l2e < rs ? 'W' : 'L';
  }
  return {l200 < l1 && wins >= 8,
          fmt("held-out meta-loss T=1 %.5f, T=200 %.5f; beats random search on %zu/10 seeds (%s), need >= 8; "
              "budget %zu",
              l1, l200, wins, per_seed.c_str(), cfg.eval.budget)};
}

// --- 8: ablation direction --------------------------------------------------------------

Outcome ablation_direction() {
  ExperimentConfig cfg;
  const std::vector<Family> smooth{Family::Sphere, Family::Ellipsoidal, Family::Rosenbrock, Family::Discus};
  cfg.meta.tasks.weights.clear();
  for (Family f : smooth) cfg.meta.tasks.weights.emplace_back(f, 0.25);
  cfg.eval.suite = smooth;
  const AblationRow full = run_ablation(AblationVariant::Full, cfg);
  std::string d;
  bool ok = false;
  for (auto v : {AblationVariant::NoProxyGrad, AblationVariant::NoSoftGate, AblationVariant::NoMamba}) {
    const Comparison c = compare(full, run_ablation(v, cfg));
    if (v == AblationVariant::NoProxyGrad) ok = c.functions_not_worse >= 3;
    d += fmt("%s %zu/4 (sign %zu-%zu, p=%.3g)%s; ", std::string(variant_name(v)).c_str(), c.functions_not_worse,
             c.paired.wins, c.paired.losses, c.paired.p_value, v == AblationVariant::NoProxyGrad ? " [asserted]" : "");
  }
  return {ok, "full not worse than: " + d + "need >= 3/4 for no-proxygrad"};
}

// --- 9: determinism and budget accounting ------------------------------------------

Outcome determinism_and_budget() {
  ExperimentConfig cfg = efficacy_config();
  cfg.eval.baselines = {BaselineAlgorithm::RandomSearch, BaselineAlgorithm::DE, BaselineAlgorithm::PSO};
  cfg.eval.budget = 1234;
  const auto& params = trained().params;
  const auto records = run_eval(params, cfg);
  std::size_t budget_ok = 0, exact = 0;
  for (const auto& r : records) {
    if (r.evaluations == cfg.eval.budget && r.history.back().first <= r.evaluations) ++budget_ok;
    const RunRecord again = rerun(RunRecord::from_json(r.to_json()), &params);
    if (again.final_best == r.final_best && again.history == r.history && again.run_id == r.run_id &&
        format_trajectory_csv(again.trajectory) == format_trajectory_csv(r.trajectory))
      ++exact;
  }
  // per-unroll accounting against an independent counter
  auto f = eval_objective(cfg, eval_descriptor(cfg, Family::Sphere, 0));
  CountingObjective counted(f);
  auto rng = derived_rng(0, 3, 0);
  const Population x0 = initial_population(counted, 1, cfg.meta.pop, rng);
  const std::size_t before = counted.evaluations();
  const Trajectory t = unroll(x0, counted, block_views(params, cfg.meta), cfg.meta.inner);
  const std::size_t per = counted.evaluations() - before;
  const std::size_t n = records.size();
  return {budget_ok == n && exact == n && per == 480 && t.evaluations == 480,
          fmt("%zu/%zu runs at exactly budget %zu, %zu/%zu re-runs bit-exact, one unroll = %zu evaluations (480)",
              budget_ok, n, cfg.eval.budget, exact, n, per)};
}

struct Criterion {
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"contraction bound", 10, contraction_bound},
      {"bias decay", 30, bias_decay},
      {"residual convergence", 30, residual_convergence},
      {"Lipschitz enforcement", 300, lipschitz_enforcement},
      {"BPTT correctness", 120, bptt_correctness},
      {"meta-loss scale invariance", 60, scale_invariance},
      {"training efficacy", 900, training_efficacy},
      {"ablation direction", 1800, ablation_direction},
      {"determinism and budget accounting", 600, determinism_and_budget},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= all[i].limit_s) {
      o.passed = false;
      o.detail += fmt("; runtime limit %.0f s exceeded", all[i].limit_s);
    }
    std::printf("%s [%zu] %s: %s (%.1f s)\n", o.passed ? "PASS" : "FAIL", i + 1, all[i].name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.passed) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
