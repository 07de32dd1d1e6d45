#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "l2e/neural_operator.hpp"
#include "l2e/param_store.hpp"

namespace l2e {

using Vec = std::vector<double>;

enum class OperatorKind { AffineContraction, Rotation, Scaling, Identity, LearnedBlock };

// O: R^dim → R^dim with an optional known fixed point. Affine kinds are
// O(x) = x* + Q(x − x*) with Q stored row-major.
struct SyntheticOperator {
  OperatorKind kind = OperatorKind::Identity;
  std::size_t dim = 0;
  double lipschitz_target = 1.0;
  std::vector<double> Q;
  std::optional<Vec> fixed_point;
  std::function<Vec(const Vec&)> apply;

  Vec operator()(const Vec& x) const { return apply(x); }
};

SyntheticOperator affine_operator(std::vector<double> Q, Vec fixed_point, OperatorKind kind, double lipschitz_target);
// Symmetric negative semidefinite Q = −U diag(σ) Uᵀ with σ_0 = 0 and the
// remaining σ_i uniform on [0, min(1, 2(1−α)/α)], so that the relaxed map
// (1−α)I + αQ has spectral norm exactly 1−α. This is the regime in which
// ‖x^K − x*‖ ≤ (1−α)^K D₀ holds.
SyntheticOperator affine_contraction(std::size_t dim, double alpha, std::mt19937_64& rng);
SyntheticOperator rotation_operator(std::size_t dim, std::mt19937_64& rng, double scale = 1.0);
SyntheticOperator scaling_operator(std::size_t dim, double s);
SyntheticOperator identity_operator(std::size_t dim);
// x̂ ↦ Δ_evo for a population of n points (flattened n·dim), with fitness
// and router statistics frozen at values drawn from `rng`.
SyntheticOperator learned_block_operator(std::shared_ptr<const ParamStore> store, const std::string& prefix,
                                         const OperatorConfig& cfg, std::size_t n, std::mt19937_64& rng);

// Largest singular value of a row-major dim×dim matrix (Eigen JacobiSVD).
double spectral_norm_svd(const std::vector<double>& Q, std::size_t dim);

struct CheckReport {
  std::string name;
  bool passed = true;
  double worst_ratio = 0;  // max observed / bound
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> failing_seed;
  std::vector<std::pair<std::string, double>> values;

  std::string to_json() const;
};

inline constexpr double kBoundSlack = 1e-9;
inline constexpr double kLipschitzSlack = 0.05;
inline constexpr double kResidualSlack = 1e-12;

double vec_distance(const Vec& a, const Vec& b);

// x ← (1−α)x + α·O(x), returning x^0 … x^K.
std::vector<Vec> km_sequence(const SyntheticOperator& op, const Vec& x0, double alpha, std::size_t K);

// Draws x⁰ on the sphere of radius d0 around x* for each trial and asserts
// ‖x^K − x*‖ ≤ (1−α)^K d0 + kBoundSlack.
CheckReport check_contraction_bound(const SyntheticOperator& op, double alpha, std::size_t K, std::size_t trials,
                                    std::uint64_t seed, double d0 = 1.0);

// Max ‖O(u) − O(v)‖ / ‖u − v‖ over `pairs` pairs: half drawn independently in
// [−1, 1]^dim, half as local perturbations of scale 1e-4.
double estimate_lipschitz(const SyntheticOperator& op, std::size_t pairs, std::uint64_t seed);

struct BiasTable {
  std::vector<std::size_t> K;
  std::vector<double> squared_error;
  double slope = 0;  // least-squares d log(err²) / dK
};
BiasTable bias_vs_K(const SyntheticOperator& op, double alpha, const std::vector<std::size_t>& Ks,
                    std::uint64_t seed, double d0 = 1.0);
// Asserts the fitted slope is within `rel` of 2·ln(1−α).
CheckReport check_bias_decay(const BiasTable& t, double alpha, double rel = 0.1);

// Relaxed iteration x^{k+1} = x^k + s_k (O(x^k) − x^k), s_k = κ/(k+1);
// returns ‖O(x^k) − x^k‖ for k = 0 … steps.
std::vector<double> km_residuals(const SyntheticOperator& op, const Vec& x0, double kappa, std::size_t steps);
// Non-increasing within kResidualSlack, r[200] ≤ r[10], and r[500] < 1e-3.
CheckReport check_residual_convergence(const std::vector<double>& residuals);

}  // namespace l2e
