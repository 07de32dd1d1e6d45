#include "l2e/neural_operator.hpp"

#include <algorithm>
#include <cmath>

#include "l2e/errors.hpp"
#include "l2e/ops.hpp"

namespace l2e {
namespace {

void add_linear(ParamStore& store, const std::string& path, std::size_t out, std::size_t in, std::mt19937_64& rng,
                bool bias = true) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(out * in);
  for (auto& v : w) v = u(rng);
  store.add(path + ".weight", Tensor(Shape{out, in}, std::move(w)));
  if (bias) store.add(path + ".bias", Tensor(Shape{out}, 0.0));
}

LinearMap linear_view(const ParamStore& store, const std::string& path) {
  return LinearMap{store.get(path + ".weight"), store.get(path + ".bias")};
}

bool is_weight(const ParamEntry& e, const std::string& prefix) {
  const std::string_view p = e.path;
  return e.value.rank() == 2 && p.starts_with(prefix) && p.ends_with("weight");
}

std::uint64_t path_seed(const std::string& path) { return fnv1a(path); }

void check_population(const Tensor& x, const Tensor& fit) {
  if (x.rank() != 3) throw DimensionError("population must be (batch × pop × dim), got " + to_string(x.shape()));
  if (fit.shape() != Shape{x.extent(0), x.extent(1)})
    throw DimensionError("fitness shape " + to_string(fit.shape()) + " does not match population " +
                         to_string(x.shape()));
  if (x.extent(1) < 2) throw ContractError("population statistics need at least 2 individuals");
}

}  // namespace

void OperatorConfig::validate() const {
  if (dim == 0) throw ConfigError("operator dim must be positive");
  if (d_model < 2) throw ConfigError("d_model must be at least 2");
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  if (router_hidden == 0) throw ConfigError("router hidden width must be positive");
}

Tensor LinearMap::apply(const Tensor& x) const { return linear(x, weight, bias); }

OperatorBlockParams OperatorBlockParams::view(const ParamStore& store, const std::string& prefix,
                                              const OperatorConfig& cfg) {
  cfg.validate();
  OperatorBlockParams p;
  p.config = cfg;
  p.embed = linear_view(store, prefix + "embed");
  p.proj = linear_view(store, prefix + "ssm.proj");
  p.gate_z = linear_view(store, prefix + "ssm.gate_z");
  p.input_path = linear_view(store, prefix + "ssm.input_path");
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string head = prefix + "attn.head" + std::to_string(h);
    p.wq.push_back(store.get(head + ".q.weight"));
    p.wk.push_back(store.get(head + ".k.weight"));
    p.wv.push_back(store.get(head + ".v.weight"));
  }
  p.attn_out = linear_view(store, prefix + "attn.out");
  p.router_hidden = linear_view(store, prefix + "router.hidden");
  p.router_out = linear_view(store, prefix + "router.out");
  p.head_m = linear_view(store, prefix + "head_m");
  p.head_a = linear_view(store, prefix + "head_a");
  p.ln_gain = store.get(prefix + "ln.gain");
  p.ln_bias = store.get(prefix + "ln.bias");
  if (cfg.feed_forward_stream) {
    p.ff_hidden = linear_view(store, prefix + "ff.hidden");
    p.ff_out = linear_view(store, prefix + "ff.out");
  }
  if (p.embed.weight.shape() != Shape{cfg.d_model, cfg.dim + 1})
    throw DimensionError("stored embedding " + to_string(p.embed.weight.shape()) + " does not match config");
  return p;
}

void add_operator_params(ParamStore& store, const std::string& prefix, const OperatorConfig& cfg,
                         std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t dm = cfg.d_model, hw = dm / cfg.heads;
  add_linear(store, prefix + "embed", dm, cfg.dim + 1, rng);
  add_linear(store, prefix + "ssm.proj", 3 * dm, dm, rng);
  add_linear(store, prefix + "ssm.gate_z", dm, dm, rng);
  add_linear(store, prefix + "ssm.input_path", dm, dm, rng);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string head = prefix + "attn.head" + std::to_string(h);
    add_linear(store, head + ".q", hw, dm, rng, false);
    add_linear(store, head + ".k", hw, dm, rng, false);
    add_linear(store, head + ".v", hw, dm, rng, false);
  }
  add_linear(store, prefix + "attn.out", dm, dm, rng);
  add_linear(store, prefix + "router.hidden", cfg.router_hidden, 3, rng);
  add_linear(store, prefix + "router.out", 2, cfg.router_hidden, rng);
  add_linear(store, prefix + "head_m", cfg.dim, dm, rng);
  add_linear(store, prefix + "head_a", cfg.dim, dm, rng);
  store.add(prefix + "ln.gain", Tensor(Shape{dm}, 1.0));
  store.add(prefix + "ln.bias", Tensor(Shape{dm}, 0.0));
  if (cfg.feed_forward_stream) {
    add_linear(store, prefix + "ff.hidden", dm, dm, rng);
    add_linear(store, prefix + "ff.out", dm, dm, rng);
  }
  normalize_spectra(store, prefix);
}

void normalize_spectra(ParamStore& store, const std::string& prefix, int iters) {
  for (const auto& e : store.entries()) {
    if (!is_weight(e, prefix)) continue;
    const double s = spectral_norm(e.value, iters, path_seed(e.path));
    if (s > 1.0) store.set(e.path, scale(e.value.detached(), 1.0 / s));
  }
}

double max_spectral_norm(const ParamStore& store, const std::string& prefix, int iters) {
  double worst = 0;
  for (const auto& e : store.entries())
    if (is_weight(e, prefix)) worst = std::max(worst, spectral_norm(e.value, iters, path_seed(e.path)));
  return worst;
}

std::vector<RouterStats> population_stats(const Tensor& x, const Tensor& fit) {
  check_population(x, fit);
  const std::size_t b = x.extent(0), n = x.extent(1), d = x.extent(2);
  std::vector<RouterStats> out(b);
  const auto xs = x.data();
  const auto fs = fit.data();
  for (std::size_t k = 0; k < b; ++k) {
    const auto f = fs.subspan(k * n, n);
    double mean = 0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : f) var += (v - mean) * (v - mean);
    const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
    double dist = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = xs[(k * n + i) * d + c] - xs[(k * n + j) * d + c];
          s += diff * diff;
        }
        dist += std::sqrt(s);
      }
    out[k].fitness_std = std::sqrt(var / static_cast<double>(n));
    out[k].fitness_range = *hi - *lo;
    out[k].diversity = dist / (static_cast<double>(n * (n - 1) / 2) * std::sqrt(static_cast<double>(d)));
    if (!std::isfinite(out[k].fitness_std) || !std::isfinite(out[k].fitness_range) ||
        !std::isfinite(out[k].diversity))
      throw NumericError("non-finite population statistics");
  }
  return out;
}

Tensor embed(const Tensor& x, const Tensor& fit, const OperatorBlockParams& p) {
  check_population(x, fit);
  const std::size_t b = x.extent(0), n = x.extent(1);
  if (x.extent(2) != p.config.dim)
    throw DimensionError("population dim " + std::to_string(x.extent(2)) + " does not match operator dim " +
                         std::to_string(p.config.dim));
  std::vector<double> z(b * n);
  const auto fs = fit.data();
  for (std::size_t k = 0; k < b; ++k) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < n; ++i) mean += fs[k * n + i];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (fs[k * n + i] - mean) * (fs[k * n + i] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) z[k * n + i] = (fs[k * n + i] - mean) / (sd + kFitnessEps);
  }
  const Tensor zf(Shape{b, n, 1}, std::move(z));
  return tanh(p.embed(concat({x, zf}, -1)));
}

SsmOutput ssm_stream(const Tensor& e, const OperatorBlockParams& p) {
  const std::size_t dm = p.config.d_model;
  const Tensor dbc = p.proj(e);
  const Tensor delta = softplus(slice(dbc, -1, 0, dm));
  const Tensor bgate = tanh(slice(dbc, -1, dm, 2 * dm));
  return SsmOutput{mul(mul(delta, bgate), e), slice(dbc, -1, 2 * dm, 3 * dm)};
}

Tensor gated_fusion(const Tensor& m_s, const Tensor& e, const OperatorBlockParams& p) {
  if (m_s.shape() != e.shape())
    throw DimensionError("gated_fusion shapes differ: " + to_string(m_s.shape()) + " vs " + to_string(e.shape()));
  const Tensor z = sigmoid(p.gate_z(e));
  const Tensor u = p.input_path(e);
  const Tensor one_minus_z = add_scalar(neg(z), 1.0);
  return layer_norm(add(mul(z, m_s), mul(one_minus_z, u)), p.ln_gain, p.ln_bias);
}

std::vector<Tensor> attention_weights(const Tensor& e, const OperatorBlockParams& p) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(p.config.d_model / p.config.heads));
  std::vector<Tensor> out;
  for (std::size_t h = 0; h < p.config.heads; ++h) {
    const Tensor q = matmul(e, transpose(p.wq[h]));
    const Tensor k = matmul(e, transpose(p.wk[h]));
    out.push_back(softmax(scale(matmul(q, transpose(k)), inv), -1));
  }
  return out;
}

Tensor mhsa(const Tensor& e, const OperatorBlockParams& p) {
  if (p.config.heads == 0 || p.config.d_model % p.config.heads != 0)
    throw ConfigError("d_model must be divisible by the head count");
  const auto weights = attention_weights(e, p);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < p.config.heads; ++h) heads.push_back(matmul(weights[h], matmul(e, transpose(p.wv[h]))));
  return add(p.attn_out(concat(heads, -1)), e);
}

Tensor route(const std::vector<RouterStats>& stats, const OperatorBlockParams& p) {
  std::vector<double> s;
  for (const auto& r : stats) {
    if (!(r.fitness_std >= 0) || !(r.fitness_range >= 0) || !(r.diversity >= 0) || !std::isfinite(r.fitness_std) ||
        !std::isfinite(r.fitness_range) || !std::isfinite(r.diversity))
      throw ContractError("router statistics must be finite and non-negative");
    s.insert(s.end(), {std::log1p(r.fitness_std), std::log1p(r.fitness_range), std::log1p(r.diversity)});
  }
  const Tensor in(Shape{stats.size(), 3}, std::move(s));
  return softmax(p.router_out(tanh(p.router_hidden(in))), -1);
}

Proposal propose(const Tensor& x, const Tensor& fit, const OperatorBlockParams& p, const Box* box,
                 const std::vector<RouterStats>* stats) {
  check_population(x, fit);
  const std::size_t b = x.extent(0), d = x.extent(2);
  Tensor xin = x;
  if (box) {
    if (box->dim() != d) throw DimensionError("box dimension does not match population");
    std::vector<double> mid(d), half(d);
    for (std::size_t i = 0; i < d; ++i) {
      mid[i] = 0.5 * (box->lo[i] + box->hi[i]);
      half[i] = 0.5 * (box->hi[i] - box->lo[i]);
    }
    xin = div(sub(x, Tensor(Shape{d}, mid)), Tensor(Shape{d}, half));
  }
  const Tensor e = embed(xin, stop_gradient(fit), p);

  Tensor h_mamba;
  if (p.config.feed_forward_stream) {
    h_mamba = layer_norm(p.ff_out(tanh(p.ff_hidden(e))), p.ln_gain, p.ln_bias);
  } else {
    const SsmOutput s = ssm_stream(e, p);
    h_mamba = mul(gated_fusion(s.m_s, e, p), sigmoid(s.c));
  }
  const Tensor h_attn = mhsa(e, p);
  const Tensor lambda = route(stats ? *stats : population_stats(x, fit), p);
  const Tensor lam_s = reshape(slice(lambda, -1, 0, 1), Shape{b, 1, 1});
  const Tensor lam_a = reshape(slice(lambda, -1, 1, 2), Shape{b, 1, 1});
  const Tensor mix = add(mul(lam_s, tanh(p.head_m(h_mamba))), mul(lam_a, tanh(p.head_a(h_attn))));
  // saturated tanh rounds to ±1 in f64
  return Proposal{scale(mix, kProposalShrink), lambda};
}

}  // namespace l2e
