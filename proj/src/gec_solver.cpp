#include "l2e/gec_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "l2e/errors.hpp"
#include "l2e/ops.hpp"

namespace l2e {
namespace {

Tensor evo_scale(const Box& box) {
  std::vector<double> s(box.dim());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = kEvoStepFraction * (box.hi[i] - box.lo[i]);
  const std::size_t n = s.size();
  return Tensor(Shape{n}, std::move(s));
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_of(const Tensor& t) {
  double s = 0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.size());
}

}  // namespace

void InnerConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(kappa > 0.0)) throw ConfigError("kappa must be positive");
  if (!(smoothing_sigma >= 0.0 && smoothing_sigma < 1.0)) throw ConfigError("smoothing_sigma must lie in [0, 1)");
}

std::string_view preconditioner_name(Preconditioner p) {
  return p == Preconditioner::Identity ? "identity" : "diagonal-adagrad";
}

Preconditioner parse_preconditioner(std::string_view name) {
  if (name == "identity") return Preconditioner::Identity;
  if (name == "diagonal-adagrad") return Preconditioner::DiagonalAdagrad;
  throw ConfigError("unknown preconditioner '" + std::string(name) + "'");
}

ObjectiveFunction prepare_objective(const ObjectiveFunction& f, const InnerConfig& cfg) {
  return f.with_gradient_mode(cfg.gradient_mode);
}

Population initial_population(const Objective& f, std::size_t batch, std::size_t pop, std::mt19937_64& rng) {
  if (batch == 0 || pop == 0) throw ConfigError("population needs positive batch and size");
  const Box& box = f.bounds();
  const std::size_t d = f.dim();
  std::vector<double> x(batch * pop * d);
  for (std::size_t r = 0; r < batch * pop; ++r)
    for (std::size_t i = 0; i < d; ++i)
      x[r * d + i] = std::uniform_real_distribution<double>(box.lo[i], box.hi[i])(rng);
  Population p;
  p.x = Tensor(Shape{batch, pop, d}, std::move(x));
  p.fit = evaluate(f, p.x);
  p.bounds = box;
  return p;
}

Tensor numerical_operator(const Tensor& x, const Box& box, double sigma) {
  Tensor y = clamp(x, box.lo_tensor(), box.hi_tensor());
  if (sigma > 0.0) y = add(scale(y, 1.0 - sigma), scale(mean(y, 1, true), sigma));
  return y;
}

Tensor km_relax(const Tensor& x, const Tensor& ox, double alpha) {
  if (alpha == 1.0) return ox;
  return add(scale(x, 1.0 - alpha), scale(ox, alpha));
}

KmStep km_step(const Tensor& x, const Tensor& fit, const InnerConfig& cfg, const OperatorBlockParams& p,
               const Box& box, const std::vector<RouterStats>* stats) {
  const Tensor y = numerical_operator(x, box, cfg.smoothing_sigma);
  Proposal prop = propose(y, fit, p, &box, stats);
  const Tensor oy = add(y, mul(prop.delta, evo_scale(box)));
  return KmStep{km_relax(x, oy, cfg.alpha), std::move(prop)};
}

Tensor preconditioner_diagonal(const Tensor& g, Preconditioner kind, AdagradState& state) {
  if (kind == Preconditioner::Identity) return Tensor(g.shape(), 1.0);
  if (state.sum_sq.empty()) state.sum_sq.assign(g.size(), 0.0);
  if (state.sum_sq.size() != g.size()) throw DimensionError("adagrad state does not match gradient shape");
  std::vector<double> p(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    state.sum_sq[i] += g[i] * g[i];
    p[i] = std::sqrt(state.sum_sq[i]) + kAdagradEps;
  }
  return Tensor(g.shape(), std::move(p));
}

Tensor proxy_grad_direction(const Tensor& x, const Objective& f, std::size_t k, const InnerConfig& cfg,
                            AdagradState& state, Tensor* precond_out, const Tensor* precond) {
  const Tensor g = gradient_on_tape(f, x);
  if (!g.all_finite()) throw NumericError("non-finite gradient at inner step " + std::to_string(k));
  const Tensor p = precond ? *precond : preconditioner_diagonal(g.detached(), cfg.preconditioner, state);
  if (precond_out) *precond_out = p;
  return sub(x, scale(div(g, p), step_size(k, cfg.kappa)));
}

Tensor soft_gate(const Tensor& fit_ol, const Tensor& fit_il, double tau) {
  if (fit_ol.shape() != fit_il.shape())
    throw DimensionError("gate fitness shapes differ: " + to_string(fit_ol.shape()) + " vs " +
                         to_string(fit_il.shape()));
  if (!(tau > 0)) throw ContractError("gate temperature must be positive");
  std::vector<double> m(fit_ol.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = -(fit_ol[i] - fit_il[i]) / tau;
    if (std::isnan(a)) throw NumericError("gate argument is NaN");
    const double s = a >= 0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
    m[i] = std::clamp(s, kGateFloor, 1.0 - kGateFloor);
  }
  Shape shape = fit_ol.shape();
  shape.push_back(1);
  return Tensor(shape, std::move(m));
}

Tensor gate_blend(const Tensor& d_ol, const Tensor& d_il, const Tensor& gate) {
  return add(mul(gate, d_ol), mul(add_scalar(neg(gate), 1.0), d_il));
}

Tensor composite_update(const Tensor& d_ol, const Tensor& d_il, const Tensor& gate, const Box& box) {
  return clamp(gate_blend(d_ol, d_il, gate), box.lo_tensor(), box.hi_tensor());
}

Trajectory unroll(const Population& x0, const Objective& f, const std::vector<OperatorBlockParams>& blocks,
                  const InnerConfig& cfg, const UnrollOptions& options) {
  cfg.validate();
  if (x0.x.rank() != 3) throw DimensionError("population must be (batch × pop × dim)");
  if (x0.x.extent(2) != f.dim()) throw DimensionError("population dim does not match objective");
  if (cfg.K > 0 && blocks.size() != 1 && blocks.size() != cfg.K)
    throw ConfigError("unroll needs 1 or K=" + std::to_string(cfg.K) + " operator blocks, got " +
                      std::to_string(blocks.size()));
  if (options.replay && options.replay->size() != cfg.K) throw ContractError("replay constants must cover K steps");
  const Box& box = f.bounds();
  const std::size_t rows = x0.x.extent(0) * x0.x.extent(1);

  Trajectory t;
  t.x.push_back(x0.x);
  t.fit.push_back(x0.fit);
  StepDiagnostics d0;
  d0.best_fit = *std::min_element(x0.fit.data().begin(), x0.fit.data().end());
  d0.mean_fit = mean_of(x0.fit);
  t.diagnostics.push_back(d0);

  AdagradState adagrad;
  Tensor x = x0.x, fit = x0.fit;
  for (std::size_t k = 0; k < cfg.K; ++k) {
    const OperatorBlockParams& p = blocks.size() == 1 ? blocks[0] : blocks[k];
    StepConstants c;
    if (options.replay) {
      c = (*options.replay)[k];
    } else {
      c.fit_in = fit.detached();
      c.stats = population_stats(x, c.fit_in);
    }

    const KmStep km = km_step(x, c.fit_in, cfg, p, box, &c.stats);
    const Tensor fit_il = evaluate(f, km.x.detached());
    const Tensor d_ol = proxy_grad_direction(x, f, k, cfg, adagrad, &c.precond, options.replay ? &c.precond : nullptr);
    const Tensor fit_ol = evaluate(f, d_ol.detached());
    for (const Tensor* v : {&fit_il, &fit_ol})
      for (double e : v->data())
        if (std::isnan(e)) throw NumericError("NaN candidate fitness at inner step " + std::to_string(k + 1));

    if (!options.replay) {
      switch (cfg.gate) {
        case GateMode::Soft: c.gate = soft_gate(fit_ol, fit_il, cfg.tau); break;
        case GateMode::Zero: c.gate = Tensor(Shape{x.extent(0), x.extent(1), 1}, 0.0); break;
        case GateMode::Half: c.gate = Tensor(Shape{x.extent(0), x.extent(1), 1}, 0.5); break;
        case GateMode::One: c.gate = Tensor(Shape{x.extent(0), x.extent(1), 1}, 1.0); break;
      }
    }
    const Tensor blend = gate_blend(d_ol, km.x, c.gate);
    const Tensor x_new = clamp(blend, box.lo_tensor(), box.hi_tensor());
    const Tensor fit_new = evaluate_on_tape(f, x_new);

    StepDiagnostics d;
    d.step = k + 1;
    d.best_fit = *std::min_element(fit_new.data().begin(), fit_new.data().end());
    d.mean_fit = mean_of(fit_new);
    d.gate_mean = mean_of(c.gate);
    double ls = 0;
    const std::size_t b = km.proposal.lambda.extent(0);
    for (std::size_t i = 0; i < b; ++i) ls += km.proposal.lambda[2 * i];
    d.lambda_ssm = ls / static_cast<double>(b);
    d.lambda_attn = 1.0 - d.lambda_ssm;
    d.residual_norm = norm(sub(km.x.detached(), x.detached()));
    if (!x_new.all_finite() || !fit_new.all_finite()) {
      std::ostringstream os;
      os << "non-finite state at inner step " << k + 1 << " (block " << (blocks.size() == 1 ? 0 : k)
         << "): gate_mean=" << d.gate_mean << " lambda_ssm=" << d.lambda_ssm << " residual=" << d.residual_norm
         << " max|delta|=" << max_abs(km.proposal.delta);
      throw NumericError(os.str());
    }

    t.d_il.push_back(km.x.detached());
    t.d_ol.push_back(d_ol.detached());
    t.blend.push_back(blend.detached());
    t.constants.push_back(std::move(c));
    t.x.push_back(x_new);
    t.fit.push_back(fit_new);
    t.diagnostics.push_back(d);
    t.evaluations += 3 * rows;
    t.gradient_queries += rows;
    x = x_new;
    fit = fit_new;
  }
  return t;
}

std::vector<Tensor> km_iterate(const Tensor& x0, const std::function<Tensor(const Tensor&)>& op, double alpha,
                               std::size_t K) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
  std::vector<Tensor> xs{x0};
  for (std::size_t k = 0; k < K; ++k) xs.push_back(km_relax(xs.back(), op(xs.back()), alpha));
  return xs;
}

std::string format_trajectory_csv(const std::vector<StepDiagnostics>& rows) {
  std::ostringstream os;
  os << kTrajectoryHeader << '\n';
  for (const auto& r : rows)
    os << r.step << ',' << fmt(r.best_fit) << ',' << fmt(r.mean_fit) << ',' << fmt(r.gate_mean) << ','
       << fmt(r.lambda_ssm) << ',' << fmt(r.lambda_attn) << ',' << fmt(r.residual_norm) << '\n';
  return os.str();
}

void write_trajectory_csv(const std::filesystem::path& file, const std::vector<StepDiagnostics>& rows) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << format_trajectory_csv(rows);
}

std::vector<StepDiagnostics> read_trajectory_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read " + file.string());
  std::string line;
  std::getline(in, line);
  if (line != kTrajectoryHeader) throw ParseError(1, "unexpected trajectory header: " + line);
  std::vector<StepDiagnostics> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw ParseError(lineno, "expected 7 columns");
    StepDiagnostics r;
    try {
      r.step = std::stoul(cells[0]);
    } catch (const std::logic_error&) {
      throw ParseError(lineno, "bad step value '" + cells[0] + "'");
    }
    double* fields[] = {&r.best_fit, &r.mean_fit, &r.gate_mean, &r.lambda_ssm, &r.lambda_attn, &r.residual_norm};
    for (int i = 0; i < 6; ++i) {
      char* end = nullptr;
      *fields[i] = std::strtod(cells[i + 1].c_str(), &end);
      if (end == cells[i + 1].c_str()) throw ParseError(lineno, "bad number '" + cells[i + 1] + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace l2e
