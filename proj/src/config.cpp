#include "l2e/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "l2e/errors.hpp"

namespace l2e {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

template <class T>
T to_unsigned(const std::string& s) {
  T v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("not a non-negative integer: '" + s + "'");
  return v;
}

int to_int(const std::string& s) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

std::string_view gate_name(GateMode g) {
  switch (g) {
    case GateMode::Soft: return "soft";
    case GateMode::Zero: return "zero";
    case GateMode::Half: return "half";
    case GateMode::One: return "one";
  }
  return "soft";
}

GateMode parse_gate(const std::string& s) {
  if (s == "soft") return GateMode::Soft;
  if (s == "zero") return GateMode::Zero;
  if (s == "half") return GateMode::Half;
  if (s == "one") return GateMode::One;
  throw ConfigError("unknown gate mode '" + s + "'");
}

GradientMode parse_gradient_mode(const std::string& s) {
  if (s == "analytic") return GradientMode::Analytic;
  if (s == "finite-difference") return GradientMode::FiniteDifference;
  throw ConfigError("unknown gradient mode '" + s + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::string(f(v[i]));
  return out;
}

template <class T, class F>
std::vector<T> parse_list(const std::string& s, F f) {
  std::vector<T> out;
  for (const auto& item : split(s, ',')) out.push_back(f(item));
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define L2E_SIZE(key, member)                                                 \
  Field {                                                                     \
    key, [](const ExperimentConfig& c) { return std::to_string(c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = to_unsigned<std::size_t>(v); } \
  }
#define L2E_U64(key, member)                                                  \
  Field {                                                                     \
    key, [](const ExperimentConfig& c) { return std::to_string(c.member); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = to_unsigned<std::uint64_t>(v); } \
  }
#define L2E_DOUBLE(key, member)                                              \
  Field {                                                                    \
    key, [](const ExperimentConfig& c) { return fmt_double(c.member); },    \
        [](ExperimentConfig& c, const std::string& v) { c.member = to_double(v); } \
  }
#define L2E_BOOL(key, member)                                                         \
  Field {                                                                             \
    key, [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](ExperimentConfig& c, const std::string& v) { c.member = to_bool(v); }     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      // meta-training
      L2E_SIZE("T", meta.T),
      L2E_DOUBLE("gamma", meta.gamma),
      L2E_SIZE("tasks_per_batch", meta.tasks_per_batch),
      L2E_SIZE("pop", meta.pop),
      {"sharing", [](const ExperimentConfig& c) { return std::string(sharing_name(c.meta.sharing)); },
       [](ExperimentConfig& c, const std::string& v) { c.meta.sharing = parse_sharing(v); }},
      {"optimizer", [](const ExperimentConfig& c) { return std::string(optimizer_name(c.meta.optimizer)); },
       [](ExperimentConfig& c, const std::string& v) { c.meta.optimizer = parse_optimizer(v); }},
      L2E_DOUBLE("momentum", meta.momentum),
      L2E_DOUBLE("clip_norm", meta.clip_norm),
      L2E_U64("seed", meta.seed),
      L2E_SIZE("threads", meta.threads),
      L2E_SIZE("eval_every", meta.eval_every),
      {"max_halvings", [](const ExperimentConfig& c) { return std::to_string(c.meta.max_halvings); },
       [](ExperimentConfig& c, const std::string& v) { c.meta.max_halvings = to_int(v); }},
      // inner solver
      L2E_SIZE("K", meta.inner.K),
      L2E_DOUBLE("alpha", meta.inner.alpha),
      L2E_DOUBLE("tau", meta.inner.tau),
      L2E_DOUBLE("kappa", meta.inner.kappa),
      {"preconditioner",
       [](const ExperimentConfig& c) { return std::string(preconditioner_name(c.meta.inner.preconditioner)); },
       [](ExperimentConfig& c, const std::string& v) { c.meta.inner.preconditioner = parse_preconditioner(v); }},
      {"gradient_mode",
       [](const ExperimentConfig& c) {
         return std::string(c.meta.inner.gradient_mode == GradientMode::Analytic ? "analytic" : "finite-difference");
       },
       [](ExperimentConfig& c, const std::string& v) { c.meta.inner.gradient_mode = parse_gradient_mode(v); }},
      L2E_DOUBLE("smoothing_sigma", meta.inner.smoothing_sigma),
      {"gate", [](const ExperimentConfig& c) { return std::string(gate_name(c.meta.inner.gate)); },
       [](ExperimentConfig& c, const std::string& v) { c.meta.inner.gate = parse_gate(v); }},
      // operator
      L2E_SIZE("dim", meta.op.dim),
      L2E_SIZE("d_model", meta.op.d_model),
      L2E_SIZE("heads", meta.op.heads),
      L2E_SIZE("router_hidden", meta.op.router_hidden),
      L2E_BOOL("feed_forward_stream", meta.op.feed_forward_stream),
      // task distribution
      {"task_weights",
       [](const ExperimentConfig& c) {
         return join(c.meta.tasks.weights,
                     [](const auto& w) { return std::string(family_name(w.first)) + ":" + fmt_double(w.second); });
       },
       [](ExperimentConfig& c, const std::string& v) {
         c.meta.tasks.weights = parse_list<std::pair<Family, double>>(v, [](const std::string& item) {
           const auto colon = item.find(':');
           if (colon == std::string::npos) return std::pair{parse_family(item), 1.0};
           return std::pair{parse_family(trim(item.substr(0, colon))), to_double(trim(item.substr(colon + 1)))};
         });
       }},
      {"task_dims", [](const ExperimentConfig& c) { return join(c.meta.tasks.dims, [](auto d) { return std::to_string(d); }); },
       [](ExperimentConfig& c, const std::string& v) {
         c.meta.tasks.dims = parse_list<std::size_t>(v, to_unsigned<std::size_t>);
       }},
      L2E_DOUBLE("shift_range", meta.tasks.shift_range),
      L2E_BOOL("rotate", meta.tasks.rotate),
      // evaluation
      {"suite", [](const ExperimentConfig& c) { return join(c.eval.suite, family_name); },
       [](ExperimentConfig& c, const std::string& v) { c.eval.suite = parse_list<Family>(v, parse_family); }},
      L2E_SIZE("budget", eval.budget),
      {"seeds", [](const ExperimentConfig& c) { return join(c.eval.seeds, [](auto s) { return std::to_string(s); }); },
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.seeds = parse_list<std::uint64_t>(v, to_unsigned<std::uint64_t>);
       }},
      {"baselines", [](const ExperimentConfig& c) { return join(c.eval.baselines, baseline_name); },
       [](ExperimentConfig& c, const std::string& v) {
         c.eval.baselines = parse_list<BaselineAlgorithm>(v, [](const std::string& s) { return parse_baseline(s); });
       }},
      L2E_BOOL("surrogate_shift", eval.surrogate_shift),
      // theory checks
      L2E_SIZE("theory_trials", theory.trials),
      L2E_SIZE("theory_dim", theory.dim),
      L2E_DOUBLE("theory_alpha", theory.alpha),
      L2E_SIZE("theory_K", theory.K),
      {"theory_bias_alphas",
       [](const ExperimentConfig& c) { return join(c.theory.bias_alphas, fmt_double); },
       [](ExperimentConfig& c, const std::string& v) { c.theory.bias_alphas = parse_list<double>(v, to_double); }},
      {"theory_bias_Ks",
       [](const ExperimentConfig& c) { return join(c.theory.bias_Ks, [](auto k) { return std::to_string(k); }); },
       [](ExperimentConfig& c, const std::string& v) {
         c.theory.bias_Ks = parse_list<std::size_t>(v, to_unsigned<std::size_t>);
       }},
      L2E_DOUBLE("theory_kappa", theory.kappa),
      L2E_SIZE("theory_residual_steps", theory.residual_steps),
      L2E_SIZE("theory_lipschitz_pairs", theory.lipschitz_pairs),
      L2E_U64("theory_seed", theory.seed),
      // output
      {"out_dir", [](const ExperimentConfig& c) { return c.out_dir; },
       [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
  };
  return f;
}

#undef L2E_SIZE
#undef L2E_U64
#undef L2E_DOUBLE
#undef L2E_BOOL

}  // namespace

void ExperimentConfig::validate() const {
  meta.validate();
  if (eval.suite.empty()) throw ConfigError("suite must name at least one function");
  if (eval.seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (eval.budget == 0) throw ConfigError("budget must be positive");
  if (theory.trials == 0 || theory.dim == 0) throw ConfigError("theory_trials and theory_dim must be positive");
  if (!(theory.alpha > 0 && theory.alpha < 1)) throw ConfigError("theory_alpha must lie in (0, 1)");
  for (double a : theory.bias_alphas)
    if (!(a > 0 && a < 1)) throw ConfigError("theory_bias_alphas must lie in (0, 1)");
  if (theory.bias_Ks.size() < 2) throw ConfigError("theory_bias_Ks needs at least two values");
  if (!(theory.kappa > 0 && theory.kappa <= 1)) throw ConfigError("theory_kappa must lie in (0, 1]");
  if (theory.residual_steps < 500) throw ConfigError("theory_residual_steps must be at least 500");
  if (theory.lipschitz_pairs < 100) throw ConfigError("theory_lipschitz_pairs must be at least 100");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key=value, got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ParseError(lineno, "empty key");
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (key == f.key) field = &f;
    if (!field) throw ParseError(lineno, "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ParseError(lineno, "duplicate key '" + key + "'");
    try {
      field->set(cfg, value);
    } catch (const ParseError&) {
      throw;
    } catch (const ConfigError& e) {
      throw ParseError(lineno, key + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig read_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(cfg) + "\n";
  return out;
}

void write_config(const std::filesystem::path& file, const ExperimentConfig& cfg) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << format_config(cfg);
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(format_config(cfg))));
  return buf;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.emplace_back(f.key);
  return k;
}

}  // namespace l2e
