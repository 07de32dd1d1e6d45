#pragma once

#include <random>
#include <string>
#include <vector>

#include "l2e/benchmarks.hpp"
#include "l2e/param_store.hpp"
#include "l2e/tensor.hpp"

namespace l2e {

struct OperatorConfig {
  std::size_t dim = 2;
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t router_hidden = 16;
  // Replaces the gated-SSM stream by a two-layer feed-forward map (ablation).
  bool feed_forward_stream = false;

  void validate() const;  // throws ConfigError
  bool operator==(const OperatorConfig&) const = default;
};

inline constexpr int kSpectralIters = 20;
inline constexpr double kFitnessEps = 1e-8;
// Keeps |Δ_evo| strictly below 1 after f64 rounding.
inline constexpr double kProposalShrink = 1.0 - 1e-12;

struct LinearMap {
  Tensor weight, bias;  // (out × in), (out)
  Tensor operator()(const Tensor& x) const { return apply(x); }
  Tensor apply(const Tensor& x) const;
};

// Tensors of one operator block, read from a ParamStore (bound or not).
struct OperatorBlockParams {
  OperatorConfig config;
  LinearMap embed, proj, gate_z, input_path;
  std::vector<Tensor> wq, wk, wv;  // per head, (head_width × d_model), no bias
  LinearMap attn_out;
  LinearMap router_hidden, router_out;
  LinearMap head_m, head_a;
  Tensor ln_gain, ln_bias;
  LinearMap ff_hidden, ff_out;  // only with feed_forward_stream

  static OperatorBlockParams view(const ParamStore& store, const std::string& prefix, const OperatorConfig& cfg);
};

// Adds freshly initialized, spectrally normalized parameters under `prefix`
// (e.g. "block0.").
void add_operator_params(ParamStore& store, const std::string& prefix, const OperatorConfig& cfg,
                         std::mt19937_64& rng);

// W ← W / max(1, σ̂(W)) for every rank-2 "*weight" entry whose path starts
// with `prefix`.
void normalize_spectra(ParamStore& store, const std::string& prefix = "", int iters = kSpectralIters);
double max_spectral_norm(const ParamStore& store, const std::string& prefix = "", int iters = kSpectralIters);

struct RouterStats {
  double fitness_std = 0;
  double fitness_range = 0;
  double diversity = 0;  // mean pairwise distance / √dim
};

// Per population of x (B × N × D) and fit (B × N).
std::vector<RouterStats> population_stats(const Tensor& x, const Tensor& fit);

// z-scores fitness per population; fitness is treated as a constant.
Tensor embed(const Tensor& x, const Tensor& fit, const OperatorBlockParams& p);

struct SsmOutput {
  Tensor m_s;
  Tensor c;  // per-feature output scale logits
};
SsmOutput ssm_stream(const Tensor& e, const OperatorBlockParams& p);

Tensor gated_fusion(const Tensor& m_s, const Tensor& e, const OperatorBlockParams& p);

// Per-head attention weights (B × N × N each).
std::vector<Tensor> attention_weights(const Tensor& e, const OperatorBlockParams& p);
Tensor mhsa(const Tensor& e, const OperatorBlockParams& p);

// (B × 2) routing weights [λ_ssm, λ_attn].
Tensor route(const std::vector<RouterStats>& stats, const OperatorBlockParams& p);

struct Proposal {
  Tensor delta;   // B × N × D, entries in (−1, 1)
  Tensor lambda;  // B × 2
};

// Δ_evo for population x with fitness fit. When `box` is given, coordinates
// are mapped to [−1, 1] before the embedding. `stats` replaces the router
// statistics computed from (x, fit).
Proposal propose(const Tensor& x, const Tensor& fit, const OperatorBlockParams& p, const Box* box = nullptr,
                 const std::vector<RouterStats>* stats = nullptr);

}  // namespace l2e
