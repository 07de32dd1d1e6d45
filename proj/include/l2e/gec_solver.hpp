#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "l2e/benchmarks.hpp"
#include "l2e/neural_operator.hpp"
#include "l2e/tensor.hpp"

namespace l2e {

enum class Preconditioner { Identity, DiagonalAdagrad };

// Replaces the soft gate by a constant (ablations and oracle tests).
enum class GateMode { Soft, Zero, Half, One };

inline constexpr double kAdagradEps = 1e-8;
inline constexpr double kGateFloor = 1e-12;
inline constexpr double kEvoStepFraction = 0.1;

struct InnerConfig {
  std::size_t K = 10;
  double alpha = 0.5;
  double tau = 1.0;
  double kappa = 0.3;
  Preconditioner preconditioner = Preconditioner::Identity;
  GradientMode gradient_mode = GradientMode::Analytic;
  double smoothing_sigma = 0.0;
  GateMode gate = GateMode::Soft;

  void validate() const;  // throws ConfigError
  bool operator==(const InnerConfig&) const = default;
};

std::string_view preconditioner_name(Preconditioner p);
Preconditioner parse_preconditioner(std::string_view name);

// Objective with the configured gradient mode applied.
ObjectiveFunction prepare_objective(const ObjectiveFunction& f, const InnerConfig& cfg);

struct Population {
  Tensor x;    // batch × pop × dim
  Tensor fit;  // batch × pop
  Box bounds;
};

// Uniform initial population in the box, evaluated.
Population initial_population(const Objective& f, std::size_t batch, std::size_t pop, std::mt19937_64& rng);

// Box projection, then y = (1−σ)·y + σ·mean_pop(y).
Tensor numerical_operator(const Tensor& x, const Box& box, double sigma);

// (1−α)·x + α·ox.
Tensor km_relax(const Tensor& x, const Tensor& ox, double alpha);

struct KmStep {
  Tensor x;  // d_IL
  Proposal proposal;
};

// d_IL = (1−α)x + α·O_evo(O_num(x)), O_evo(y) = y + Δ_evo·0.1·(hi−lo).
// `stats` overrides the router statistics (frozen replay).
KmStep km_step(const Tensor& x, const Tensor& fit, const InnerConfig& cfg, const OperatorBlockParams& p,
               const Box& box, const std::vector<RouterStats>* stats = nullptr);

inline double step_size(std::size_t k, double kappa) { return kappa / static_cast<double>(k + 1); }

// Running Σ g² for the diagonal-adagrad preconditioner.
struct AdagradState {
  std::vector<double> sum_sq;
};

// Preconditioner diagonal for gradient g (constant on the tape). Adagrad
// accumulates g into `state` first, so P includes the current step.
Tensor preconditioner_diagonal(const Tensor& g, Preconditioner kind, AdagradState& state);

// d_OL = x − s_k·P⁻¹·∇f(x) with k counted from 0. `precond` overrides the
// diagonal (frozen replay).
Tensor proxy_grad_direction(const Tensor& x, const Objective& f, std::size_t k, const InnerConfig& cfg,
                            AdagradState& state, Tensor* precond_out = nullptr, const Tensor* precond = nullptr);

// σ(−(fit_ol − fit_il)/τ) as a batch × pop × 1 constant, clamped into the
// open interval.
Tensor soft_gate(const Tensor& fit_ol, const Tensor& fit_il, double tau);

// Blend M·d_OL + (1−M)·d_IL before projection.
Tensor gate_blend(const Tensor& d_ol, const Tensor& d_il, const Tensor& gate);
// clamp(gate_blend(...), box).
Tensor composite_update(const Tensor& d_ol, const Tensor& d_il, const Tensor& gate, const Box& box);

struct StepDiagnostics {
  std::size_t step = 0;
  double best_fit = 0, mean_fit = 0;
  double gate_mean = NAN, lambda_ssm = NAN, lambda_attn = NAN, residual_norm = NAN;
};

// Stop-gradient inputs of one step; replaying them makes an unroll a
// deterministic function of the parameters.
struct StepConstants {
  Tensor fit_in;  // fitness fed to the operator
  std::vector<RouterStats> stats;
  Tensor gate;
  Tensor precond;
};

struct Trajectory {
  std::vector<Tensor> x;    // x^0 … x^K
  std::vector<Tensor> fit;  // f(x^k); the entries for k ≥ 1 are on the tape
  std::vector<StepDiagnostics> diagnostics;  // rows for steps 0 … K
  std::vector<StepConstants> constants;      // K entries
  std::vector<Tensor> d_ol, d_il, blend;     // detached, K entries
  std::size_t evaluations = 0;
  std::size_t gradient_queries = 0;
};

struct UnrollOptions {
  const std::vector<StepConstants>* replay = nullptr;
};

// K-step unroll. `blocks` holds K blocks (unshared) or one (shared).
Trajectory unroll(const Population& x0, const Objective& f, const std::vector<OperatorBlockParams>& blocks,
                  const InnerConfig& cfg, const UnrollOptions& options = {});

// Generic KM iteration x ← (1−α)x + α·op(x), returning x^0 … x^K.
std::vector<Tensor> km_iterate(const Tensor& x0, const std::function<Tensor(const Tensor&)>& op, double alpha,
                               std::size_t K);

inline constexpr const char* kTrajectoryHeader = "step,best_fit,mean_fit,gate_mean,lambda_ssm,lambda_attn,residual_norm";

std::string format_trajectory_csv(const std::vector<StepDiagnostics>& rows);
void write_trajectory_csv(const std::filesystem::path& file, const std::vector<StepDiagnostics>& rows);
std::vector<StepDiagnostics> read_trajectory_csv(const std::filesystem::path& file);

}  // namespace l2e
