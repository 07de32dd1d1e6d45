#include "l2e/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "l2e/errors.hpp"

namespace l2e {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

void fill_from_counter(RunRecord& r, const CountingObjective& counted, double f_opt) {
  r.final_best = counted.best();
  r.final_error = counted.best() - f_opt;
  r.evaluations = counted.evaluations();
  r.gradient_queries = counted.gradient_calls();
  for (const auto& [e, v] : counted.history()) r.history.emplace_back(e, v - f_opt);
}

RunRecord new_record(const ExperimentConfig& cfg, std::string method, const FunctionDescriptor& d,
                     std::uint64_t seed) {
  RunRecord r;
  r.method = std::move(method);
  r.function = d.to_string();
  r.seed = seed;
  r.config_text = format_config(cfg);
  r.config_hash = config_hash(cfg);
  r.budget = cfg.eval.budget;
  r.run_id = make_run_id(r.config_text, r.method, r.function, seed);
  return r;
}

double binomial_tail(std::size_t n, std::size_t k) {
  // P(X ≤ k), X ~ Bin(n, 1/2)
  double term = std::pow(0.5, static_cast<double>(n)), sum = 0;
  for (std::size_t i = 0; i <= k; ++i) {
    sum += term;
    term *= static_cast<double>(n - i) / static_cast<double>(i + 1);
  }
  return sum;
}

}  // namespace

// --- records ------------------------------------------------------------------

std::string RunRecord::to_json() const {
  nlohmann::json j;
  j["run_id"] = run_id;
  j["method"] = method;
  j["function"] = function;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["config"] = config_text;
  j["trajectory_path"] = trajectory_path;
  j["final_best"] = final_best;
  j["final_error"] = final_error;
  j["wall_time"] = wall_time;
  j["evaluations"] = evaluations;
  j["gradient_queries"] = gradient_queries;
  j["budget"] = budget;
  j["history"] = history;
  return j.dump(2);
}

RunRecord RunRecord::from_json(std::string_view text) {
  RunRecord r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.run_id = j.at("run_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.function = j.at("function").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config_text = j.at("config").get<std::string>();
    r.trajectory_path = j.at("trajectory_path").get<std::string>();
    r.final_best = j.at("final_best").get<double>();
    r.final_error = j.at("final_error").get<double>();
    r.wall_time = j.at("wall_time").get<double>();
    r.evaluations = j.at("evaluations").get<std::size_t>();
    r.gradient_queries = j.at("gradient_queries").get<std::size_t>();
    r.budget = j.at("budget").get<std::size_t>();
    r.history = j.at("history").get<std::vector<std::pair<std::size_t, double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run record: ") + e.what());
  }
  return r;
}

std::string make_run_id(std::string_view config_text, std::string_view method, std::string_view function,
                        std::uint64_t seed) {
  std::string key(config_text);
  key += '|';
  key += method;
  key += '|';
  key += function;
  key += '|' + std::to_string(seed);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return buf;
}

FunctionDescriptor eval_descriptor(const ExperimentConfig& cfg, Family family, std::uint64_t seed) {
  FunctionDescriptor d;
  d.family = family;
  d.dim = cfg.meta.op.dim;
  d.seed = derived_rng(seed, 5, static_cast<std::uint64_t>(family))();
  d.rotate = cfg.meta.tasks.rotate;
  d.shift_range = cfg.meta.tasks.shift_range;
  d.surrogate_shift = cfg.eval.surrogate_shift;
  return d;
}

ObjectiveFunction eval_objective(const ExperimentConfig& cfg, const FunctionDescriptor& d) {
  return prepare_objective(ObjectiveFunction::make(d), cfg.meta.inner);
}

std::size_t minimum_budget(const MetaConfig& cfg) { return cfg.pop + evaluations_per_unroll(cfg.pop, cfg.inner.K); }

RunRecord run_l2e(const ParamStore& params, const ExperimentConfig& cfg, Family family, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const MetaConfig& m = cfg.meta;
  const std::size_t budget = cfg.eval.budget;
  if (budget < minimum_budget(m))
    throw ConfigError("budget " + std::to_string(budget) + " is too small for one unroll; minimum feasible budget is " +
                      std::to_string(minimum_budget(m)));
  const FunctionDescriptor d = eval_descriptor(cfg, family, seed);
  const ObjectiveFunction f = eval_objective(cfg, d);
  CountingObjective counted(f);
  auto rng = derived_rng(seed, 3, static_cast<std::uint64_t>(family));
  RunRecord r = new_record(cfg, "l2e", d, seed);

  Population pop = initial_population(counted, 1, m.pop, rng);
  const auto blocks = block_views(params, m);
  const std::size_t per = evaluations_per_unroll(m.pop, m.inner.K);
  std::size_t step = 0;
  const std::size_t per_step = per / m.inner.K;
  while (budget - counted.evaluations() >= per_step) {
    // the last chunk may be a truncated unroll over the leading blocks
    InnerConfig inner = m.inner;
    inner.K = std::min(m.inner.K, (budget - counted.evaluations()) / per_step);
    std::vector<OperatorBlockParams> used = blocks;
    if (used.size() > 1) used.resize(inner.K);
    const Trajectory t = unroll(pop, counted, used, inner);
    for (std::size_t i = r.trajectory.empty() ? 0 : 1; i < t.diagnostics.size(); ++i) {
      r.trajectory.push_back(t.diagnostics[i]);
      r.trajectory.back().step = step++;
    }
    pop.x = t.x.back().detached();
    pop.fit = t.fit.back().detached();
  }

  const Box& box = f.bounds();
  double tail_sum = 0;
  std::size_t tail = 0;
  while (counted.evaluations() < budget) {
    std::vector<double> x(box.dim());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::uniform_real_distribution<double>(box.lo[i], box.hi[i])(rng);
    tail_sum += counted.value(x);
    ++tail;
  }
  if (tail) {
    StepDiagnostics row;
    row.step = step;
    row.best_fit = counted.best();
    row.mean_fit = tail_sum / static_cast<double>(tail);
    r.trajectory.push_back(row);
  }
  fill_from_counter(r, counted, f.f_opt());
  r.wall_time = seconds_since(t0);
  return r;
}

RunRecord run_baseline_record(const ExperimentConfig& cfg, BaselineAlgorithm algorithm, Family family,
                              std::uint64_t seed) {
  const auto t0 = Clock::now();
  const FunctionDescriptor d = eval_descriptor(cfg, family, seed);
  const ObjectiveFunction f = eval_objective(cfg, d);
  CountingObjective counted(f);
  BaselineConfig bc;
  bc.algorithm = algorithm;
  bc.pop = cfg.meta.pop;
  bc.budget = cfg.eval.budget;
  auto rng = derived_rng(seed, 4, static_cast<std::uint64_t>(family) * 16 + static_cast<std::uint64_t>(algorithm));
  RunRecord r = new_record(cfg, std::string(baseline_name(algorithm)), d, seed);
  r.trajectory = run_baseline(counted, bc, rng).trajectory;
  fill_from_counter(r, counted, f.f_opt());
  r.wall_time = seconds_since(t0);
  return r;
}

std::vector<RunRecord> run_eval(const ParamStore& params, const ExperimentConfig& cfg, bool with_baselines) {
  cfg.validate();
  if (cfg.eval.budget < minimum_budget(cfg.meta))
    throw ConfigError("budget " + std::to_string(cfg.eval.budget) +
                      " is too small for one unroll; minimum feasible budget is " +
                      std::to_string(minimum_budget(cfg.meta)));
  struct Job {
    std::optional<BaselineAlgorithm> baseline;
    Family family;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  std::vector<std::optional<BaselineAlgorithm>> methods{std::nullopt};
  if (with_baselines)
    for (auto b : cfg.eval.baselines) methods.emplace_back(b);
  for (const auto& m : methods)
    for (Family fam : cfg.eval.suite)
      for (std::uint64_t s : cfg.eval.seeds) jobs.push_back({m, fam, s});
  std::vector<RunRecord> out(jobs.size());
  parallel_for(jobs.size(), cfg.meta.threads, [&](std::size_t i) {
    const Job& j = jobs[i];
    out[i] = j.baseline ? run_baseline_record(cfg, *j.baseline, j.family, j.seed) : run_l2e(params, cfg, j.family, j.seed);
  });
  return out;
}

RunRecord rerun(const RunRecord& record, const ParamStore* params) {
  const ExperimentConfig cfg = parse_config(record.config_text);
  const FunctionDescriptor d = FunctionDescriptor::parse(record.function);
  if (record.method == "l2e") {
    if (!params) throw ContractError("re-running an l2e record needs its parameters");
    return run_l2e(*params, cfg, d.family, record.seed);
  }
  return run_baseline_record(cfg, parse_baseline(record.method), d.family, record.seed);
}

std::filesystem::path save_run(const std::filesystem::path& root, RunRecord& record) {
  const auto dir = root / record.run_id;
  std::filesystem::create_directories(dir);
  write_file(dir / "config.txt", record.config_text);
  write_trajectory_csv(dir / "trajectory.csv", record.trajectory);
  record.trajectory_path = (dir / "trajectory.csv").string();
  write_file(dir / "record.json", record.to_json());
  return dir;
}

RunRecord load_run(const std::filesystem::path& run_dir) {
  RunRecord r = RunRecord::from_json(read_file(run_dir / "record.json"));
  r.trajectory = read_trajectory_csv(run_dir / "trajectory.csv");
  return r;
}

std::vector<RunRecord> load_runs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw ConfigError("not a directory: " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "record.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunRecord> out;
  for (const auto& d : dirs) out.push_back(load_run(d));
  return out;
}

// --- training artifacts -----------------------------------------------------------

std::string training_hash(const ExperimentConfig& cfg) {
  ExperimentConfig only;
  only.meta = cfg.meta;
  only.meta.threads = 0;
  return config_hash(only);
}

std::string format_train_csv(const TrainRecord& rec) {
  std::string out = std::string(kTrainHeader) + "\n";
  std::size_t v = 0;
  char buf[256];
  for (std::size_t i = 0; i < rec.meta_loss.size(); ++i) {
    while (v < rec.validation.size() && rec.validation[v].first < i + 1) ++v;
    const double val = v < rec.validation.size() && rec.validation[v].first == i + 1 ? rec.validation[v].second : NAN;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.6f,%.17g,%.17g,%.17g\n", i + 1, rec.meta_loss[i],
                  rec.grad_norm[i], rec.wall_time[i], rec.spectral_max[i], rec.gamma[i], val);
    out += buf;
  }
  return out;
}

std::filesystem::path save_training(const std::filesystem::path& dir, const ExperimentConfig& cfg, TrainResult& res) {
  std::filesystem::create_directories(dir);
  write_file(dir / "config.txt", format_config(cfg));
  write_file(dir / "train.csv", format_train_csv(res.record));
  const auto ckpt = dir / "best.ckpt";
  save_checkpoint(ckpt, res.params,
                  {{"config_hash", config_hash(cfg)},
                   {"training_hash", training_hash(cfg)},
                   {"best_iteration", std::to_string(res.record.best_iteration)},
                   {"T", std::to_string(cfg.meta.T)}});
  res.record.checkpoint_path = ckpt.string();
  return ckpt;
}

ParamStore load_trained(const std::filesystem::path& checkpoint, const ExperimentConfig& cfg) {
  Checkpoint ck = load_checkpoint(checkpoint);
  const auto it = ck.manifest.find("training_hash");
  if (it == ck.manifest.end()) throw ConfigError(checkpoint.string() + ": manifest has no training_hash");
  if (it->second != training_hash(cfg))
    throw ConfigError(checkpoint.string() + " was trained under a different meta configuration (training_hash " +
                      it->second + ", config gives " + training_hash(cfg) + ")");
  return std::move(ck.params);
}

// --- theory suite -------------------------------------------------------------------

std::vector<CheckReport> theory_suite(const ExperimentConfig& cfg, const ParamStore* params) {
  const TheoryConfig& t = cfg.theory;
  std::vector<CheckReport> out;
  {
    auto rng = derived_rng(t.seed, 0, 0);
    const auto op = affine_contraction(t.dim, t.alpha, rng);
    out.push_back(check_contraction_bound(op, t.alpha, t.K, t.trials, t.seed));
  }
  for (double a : t.bias_alphas) {
    auto rng = derived_rng(t.seed, 1, 0);
    const auto op = affine_contraction(t.dim, a, rng);
    CheckReport r = check_bias_decay(bias_vs_K(op, a, t.bias_Ks, t.seed), a);
    char buf[32];
    std::snprintf(buf, sizeof buf, "_alpha=%g", a);
    r.name += buf;
    out.push_back(std::move(r));
  }
  {
    auto rng = derived_rng(t.seed, 2, 0);
    const auto op = affine_contraction(t.dim, t.alpha, rng);
    Vec x0(t.dim);
    for (double& v : x0) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    CheckReport r = check_residual_convergence(km_residuals(op, x0, t.kappa, t.residual_steps));
    r.seeds = {t.seed};
    out.push_back(std::move(r));
  }
  {
    auto store = std::make_shared<const ParamStore>(params ? *params : init_params(cfg.meta));
    CheckReport r;
    r.name = "learned_block_lipschitz";
    r.seeds = {t.seed};
    for (std::size_t k = 0; k < cfg.meta.num_blocks(); ++k) {
      auto rng = derived_rng(t.seed, 3, k);
      const auto op = learned_block_operator(store, block_prefix(k), cfg.meta.op, cfg.meta.pop, rng);
      const double L = estimate_lipschitz(op, t.lipschitz_pairs, t.seed + k);
      r.values.emplace_back(block_prefix(k), L);
      r.worst_ratio = std::max(r.worst_ratio, L / (1.0 + kLipschitzSlack));
    }
    r.passed = r.worst_ratio <= 1.0;
    out.push_back(std::move(r));
  }
  return out;
}

std::string theory_report_json(const std::vector<CheckReport>& reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) j.push_back(nlohmann::json::parse(r.to_json()));
  return j.dump(2);
}

// --- ablations ------------------------------------------------------------------

std::string_view variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::Full: return "full";
    case AblationVariant::NoProxyGrad: return "no-proxygrad";
    case AblationVariant::NoSoftGate: return "no-softgate";
    case AblationVariant::NoMamba: return "no-mamba";
    case AblationVariant::Shared: return "shared";
    case AblationVariant::Unshared: return "unshared";
  }
  return "unknown";
}

AblationVariant parse_variant(std::string_view name) {
  for (auto v : {AblationVariant::Full, AblationVariant::NoProxyGrad, AblationVariant::NoSoftGate,
                 AblationVariant::NoMamba, AblationVariant::Shared, AblationVariant::Unshared})
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
}

MetaConfig apply_variant(MetaConfig cfg, AblationVariant v) {
  switch (v) {
    case AblationVariant::Full: break;
    case AblationVariant::NoProxyGrad: cfg.inner.gate = GateMode::Zero; break;
    case AblationVariant::NoSoftGate: cfg.inner.gate = GateMode::Half; break;
    case AblationVariant::NoMamba: cfg.op.feed_forward_stream = true; break;
    case AblationVariant::Shared: cfg.sharing = Sharing::Shared; break;
    case AblationVariant::Unshared: cfg.sharing = Sharing::Unshared; break;
  }
  return cfg;
}

SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractError("sign test needs paired samples");
  SignTest t;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) ++t.wins;
    else if (a[i] > b[i]) ++t.losses;
    else ++t.ties;
  }
  const std::size_t n = t.wins + t.losses;
  t.p_value = n == 0 ? 1.0 : std::min(1.0, 2.0 * binomial_tail(n, std::min(t.wins, t.losses)));
  return t;
}

Comparison compare(const AblationRow& base, const AblationRow& variant) {
  if (base.functions != variant.functions || base.errors.size() != variant.errors.size())
    throw ContractError("ablation rows cover different functions");
  Comparison c{base.variant, variant.variant, 0, {}};
  std::vector<double> a, b;
  for (std::size_t i = 0; i < base.functions.size(); ++i) {
    if (base.mean[i] <= variant.mean[i]) ++c.functions_not_worse;
    a.insert(a.end(), base.errors[i].begin(), base.errors[i].end());
    b.insert(b.end(), variant.errors[i].begin(), variant.errors[i].end());
  }
  c.paired = sign_test(a, b);
  return c;
}

AblationRow evaluate_variant(AblationVariant variant, const ParamStore& params, const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.meta = apply_variant(cfg.meta, variant);
  c.validate();
  AblationRow row;
  row.variant = variant;
  row.functions = c.eval.suite;
  const std::size_t nf = c.eval.suite.size(), ns = c.eval.seeds.size();
  std::vector<double> flat(nf * ns);
  parallel_for(flat.size(), c.meta.threads, [&](std::size_t i) {
    flat[i] = run_l2e(params, c, c.eval.suite[i / ns], c.eval.seeds[i % ns]).final_error;
  });
  for (std::size_t f = 0; f < nf; ++f) {
    std::vector<double> e(flat.begin() + static_cast<std::ptrdiff_t>(f * ns),
                          flat.begin() + static_cast<std::ptrdiff_t>((f + 1) * ns));
    double mean = 0, var = 0;
    for (double v : e) mean += v;
    mean /= static_cast<double>(ns);
    for (double v : e) var += (v - mean) * (v - mean);
    row.mean.push_back(mean);
    row.stddev.push_back(ns > 1 ? std::sqrt(var / static_cast<double>(ns - 1)) : 0.0);
    row.errors.push_back(std::move(e));
  }
  return row;
}

AblationRow run_ablation(AblationVariant variant, const ExperimentConfig& cfg, const TrainHooks& hooks) {
  const MetaConfig m = apply_variant(cfg.meta, variant);
  const TrainResult tr = train(m, hooks);
  AblationRow row = evaluate_variant(variant, tr.params, cfg);
  row.meta_loss = tr.record.meta_loss;
  return row;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,function,mean_error,std_error,seeds\n";
  char buf[128];
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.functions.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6e,%.6e,%zu", r.mean[i], r.stddev[i], r.errors[i].size());
      os << variant_name(r.variant) << ',' << family_name(r.functions[i]) << ',' << buf << '\n';
    }
  return os.str();
}

// --- ECDF -------------------------------------------------------------------------

double EcdfCurve::at(std::size_t evaluation) const {
  const auto it = std::upper_bound(evaluations.begin(), evaluations.end(), evaluation);
  if (it == evaluations.begin()) return 0.0;
  return values[static_cast<std::size_t>(it - evaluations.begin()) - 1];
}

std::string EcdfCurve::to_json() const {
  nlohmann::json j;
  j["targets"] = targets;
  j["budget"] = budget;
  j["evaluations"] = evaluations;
  j["values"] = values;
  return j.dump(2);
}

EcdfCurve compute_ecdf(const std::vector<RunRecord>& records, const std::vector<double>& targets) {
  if (records.empty()) throw ContractError("compute_ecdf needs at least one record");
  if (targets.empty()) throw ContractError("compute_ecdf needs at least one target");
  EcdfCurve c;
  c.targets = targets;
  c.budget = records.front().budget;
  std::vector<std::size_t> hits;
  for (const auto& r : records) {
    if (r.budget != c.budget) throw ContractError("ECDF records must share a budget");
    for (double t : targets) {
      const auto it = std::find_if(r.history.begin(), r.history.end(), [t](const auto& h) { return h.second <= t; });
      if (it != r.history.end() && it->first <= c.budget) hits.push_back(it->first);
    }
  }
  std::sort(hits.begin(), hits.end());
  const double total = static_cast<double>(records.size() * targets.size());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (i + 1 < hits.size() && hits[i + 1] == hits[i]) continue;
    c.evaluations.push_back(hits[i]);
    c.values.push_back(static_cast<double>(i + 1) / total);
  }
  return c;
}

std::vector<double> log_targets(double hi, double lo, std::size_t per_decade) {
  if (!(hi > lo && lo > 0) || per_decade == 0) throw ConfigError("log_targets needs hi > lo > 0");
  std::vector<double> out;
  const double step = 1.0 / static_cast<double>(per_decade);
  for (double e = std::log10(hi); e >= std::log10(lo) - 1e-9; e -= step) out.push_back(std::pow(10.0, e));
  return out;
}

}  // namespace l2e
