#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "l2e/errors.hpp"
#include "l2e/harness.hpp"

namespace fs = std::filesystem;
using namespace l2e;

namespace {

constexpr int kOk = 0, kCheckFailed = 1, kConfigError = 2;

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

void progress(std::size_t it, double loss) {
  if (it % 10 == 0) std::fprintf(stderr, "iter %zu meta-loss %.6f\n", it, loss);
}

int meta_train(const std::string& config_path) {
  const ExperimentConfig cfg = read_config(config_path);
  TrainResult res = train(cfg.meta, {progress, {}});
  const fs::path dir = fs::path(cfg.out_dir) / "train" / config_hash(cfg);
  const auto ckpt = save_training(dir, cfg, res);
  std::printf("best iteration %zu, held-out meta-loss %.6f\n", res.record.best_iteration,
              res.record.best_validation);
  std::printf("checkpoint %s\n", ckpt.c_str());
  return kOk;
}

int evaluate(const std::string& checkpoint, const std::string& config_path) {
  const ExperimentConfig cfg = read_config(config_path);
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint);
  const ParamStore params = load_trained(checkpoint, cfg);
  auto records = run_eval(params, cfg);
  std::printf("method,function,seed,final_error,evaluations,run_id\n");
  for (auto& r : records) {
    save_run(cfg.out_dir, r);
    std::printf("%s,%s,%llu,%.6e,%zu,%s\n", r.method.c_str(), r.function.c_str(),
                static_cast<unsigned long long>(r.seed), r.final_error, r.evaluations, r.run_id.c_str());
    if (r.evaluations > r.budget) return kCheckFailed;
  }
  return kOk;
}

int ablate(const std::string& variant_text, const std::string& config_path) {
  const ExperimentConfig cfg = read_config(config_path);
  const AblationVariant variant = parse_variant(variant_text);
  std::vector<AblationRow> rows{run_ablation(AblationVariant::Full, cfg, {progress, {}})};
  if (variant != AblationVariant::Full) rows.push_back(run_ablation(variant, cfg, {progress, {}}));
  const std::string table = format_ablation_table(rows);
  std::fputs(table.c_str(), stdout);
  write_text(fs::path(cfg.out_dir) / "ablation" / (std::string(variant_name(variant)) + ".csv"), table);
  if (rows.size() == 2) {
    const Comparison c = compare(rows[0], rows[1]);
    std::printf("full not worse on %zu/%zu functions; sign test %zu-%zu (%zu ties), p = %.4g\n",
                c.functions_not_worse, rows[0].functions.size(), c.paired.wins, c.paired.losses, c.paired.ties,
                c.paired.p_value);
  }
  return kOk;
}

int verify_theory(const std::string& config_path, const std::string& checkpoint) {
  const ExperimentConfig cfg = read_config(config_path);
  std::optional<ParamStore> params;
  if (!checkpoint.empty()) params = load_trained(checkpoint, cfg);
  const auto reports = theory_suite(cfg, params ? &*params : nullptr);
  const std::string json = theory_report_json(reports);
  std::puts(json.c_str());
  write_text(fs::path(cfg.out_dir) / "theory" / (config_hash(cfg) + ".json"), json);
  for (const auto& r : reports)
    if (!r.passed) return kCheckFailed;
  return kOk;
}

int ecdf(const std::string& records_dir, double hi, double lo, std::size_t per_decade, const std::string& method) {
  std::vector<RunRecord> records;
  for (auto& r : load_runs(records_dir))
    if (method.empty() || r.method == method) records.push_back(std::move(r));
  if (records.empty()) throw ConfigError("no run records in " + records_dir);
  const EcdfCurve c = compute_ecdf(records, log_targets(hi, lo, per_decade));
  std::puts(c.to_json().c_str());
  for (std::size_t i = 1; i < c.values.size(); ++i)
    if (c.values[i] < c.values[i - 1]) return kCheckFailed;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned evolutionary optimizer toolkit"};
  app.require_subcommand(1);

  std::string config, checkpoint, variant, records_dir, method;
  double hi = 1e2, lo = 1e-8;
  std::size_t per_decade = 1;

  auto* train_cmd = app.add_subcommand("meta-train", "Meta-train the learned operator");
  train_cmd->add_option("config", config, "Config file")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint and the baselines");
  eval_cmd->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("config", config, "Config file")->required();

  auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate an ablation variant against full");
  ablate_cmd->add_option("variant", variant, "full|no-proxygrad|no-softgate|no-mamba|shared|unshared")->required();
  ablate_cmd->add_option("config", config, "Config file")->required();

  auto* theory_cmd = app.add_subcommand("verify-theory", "Run the convergence checks, print a JSON report");
  theory_cmd->add_option("config", config, "Config file")->required();
  theory_cmd->add_option("--checkpoint", checkpoint, "Check this checkpoint's blocks instead of fresh ones");

  auto* ecdf_cmd = app.add_subcommand("ecdf", "ECDF over saved run records");
  ecdf_cmd->add_option("records-dir", records_dir, "Directory of runs")->required();
  ecdf_cmd->add_option("--hi", hi, "Loosest target");
  ecdf_cmd->add_option("--lo", lo, "Tightest target");
  ecdf_cmd->add_option("--per-decade", per_decade, "Targets per decade");
  ecdf_cmd->add_option("--method", method, "Only records of this method");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train_cmd) return meta_train(config);
    if (*eval_cmd) return evaluate(checkpoint, config);
    if (*ablate_cmd) return ablate(variant, config);
    if (*theory_cmd) return verify_theory(config, checkpoint);
    if (*ecdf_cmd) return ecdf(records_dir, hi, lo, per_decade, method);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  }
  return kOk;
}
