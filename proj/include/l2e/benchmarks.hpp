#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "l2e/tensor.hpp"

namespace l2e {

enum class Family { Sphere, Ellipsoidal, Rastrigin, Rosenbrock, BentCigar, Discus, SharpRidge, LunacekBiRastrigin };

std::string_view family_name(Family f);
Family parse_family(std::string_view name);  // throws ConfigError
const std::vector<Family>& all_families();
bool has_analytic_gradient(Family f);

enum class GradientMode { Analytic, FiniteDifference };

// Axis-aligned box [lo, hi]^dim.
struct Box {
  std::vector<double> lo, hi;

  static Box uniform(std::size_t dim, double lo, double hi);
  std::size_t dim() const { return lo.size(); }
  Tensor lo_tensor() const { return Tensor(Shape{lo.size()}, lo); }
  Tensor hi_tensor() const { return Tensor(Shape{hi.size()}, hi); }
  bool contains(std::span<const double> x) const;
  bool operator==(const Box&) const = default;
};

// Black-box objective over R^dim.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dim() const = 0;
  virtual const Box& bounds() const = 0;
  virtual double f_opt() const = 0;
  virtual double value(std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> g) const = 0;
  // Hessian times v; used by the reverse sweep through proxy-gradient steps.
  virtual void hessian_vector(std::span<const double> x, std::span<const double> v, std::span<double> out) const = 0;
};

// Replayable text identity of a benchmark instance.
struct FunctionDescriptor {
  Family family = Family::Sphere;
  std::size_t dim = 2;
  std::uint64_t seed = 0;
  double f_opt = 0.0;
  bool rotate = true;
  double shift_range = 4.0;
  bool surrogate_shift = false;

  std::string to_string() const;
  static FunctionDescriptor parse(std::string_view text);
  bool operator==(const FunctionDescriptor&) const = default;
};

// Plain (unwarped) BBOB-style function f(x) = g(z) + f_opt, z = R(x − shift).
// Immutable after construction.
class ObjectiveFunction : public Objective {
 public:
  ObjectiveFunction(Family family, std::vector<double> shift, std::vector<double> rotation, double f_opt,
                    Box bounds = {}, GradientMode mode = GradientMode::Analytic);

  static ObjectiveFunction make(const FunctionDescriptor& d, GradientMode mode = GradientMode::Analytic);

  std::size_t dim() const override { return shift_.size(); }
  const Box& bounds() const override { return bounds_; }
  double f_opt() const override { return f_opt_; }
  double value(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> g) const override;
  void hessian_vector(std::span<const double> x, std::span<const double> v, std::span<double> out) const override;

  Family family() const { return family_; }
  GradientMode gradient_mode() const { return mode_; }
  const std::vector<double>& shift() const { return shift_; }
  const std::vector<double>& rotation() const { return rotation_; }  // row-major dim×dim
  // Location of the global minimum (the shift for every family here).
  const std::vector<double>& optimizer() const { return shift_; }
  const FunctionDescriptor& descriptor() const { return descriptor_; }

  ObjectiveFunction with_gradient_mode(GradientMode mode) const;
  // Adds a low-amplitude cosine field (surrogate-shift evaluation mode).
  ObjectiveFunction with_surrogate_shift(std::uint64_t seed) const;

 private:
  double base_value(std::span<const double> x) const;
  bool analytic() const { return mode_ == GradientMode::Analytic && has_analytic_gradient(family_); }
  void analytic_gradient(std::span<const double> x, std::span<double> g) const;
  void fd_gradient(std::span<const double> x, std::span<double> g) const;
  void to_z(std::span<const double> x, std::vector<double>& z) const;

  Family family_;
  std::vector<double> shift_, rotation_;
  double f_opt_;
  Box bounds_;
  GradientMode mode_;
  double z_scale_ = 1.0, z_offset_ = 0.0;
  // surrogate field: amplitude · mean_i cos(2π (x_i − phase_i) / period)
  double field_amplitude_ = 0.0;
  std::vector<double> field_phase_;
  FunctionDescriptor descriptor_;
};

// Counts evaluations and tracks best-so-far for any objective.
class CountingObjective : public Objective {
 public:
  explicit CountingObjective(const Objective& inner) : inner_(inner) {}

  std::size_t dim() const override { return inner_.dim(); }
  const Box& bounds() const override { return inner_.bounds(); }
  double f_opt() const override { return inner_.f_opt(); }
  double value(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> g) const override;
  void hessian_vector(std::span<const double> x, std::span<const double> v, std::span<double> out) const override {
    inner_.hessian_vector(x, v, out);
  }

  std::size_t evaluations() const { return evaluations_; }
  std::size_t gradient_calls() const { return gradient_calls_; }
  double best() const { return best_; }
  // (evaluation index, best value) at every improvement, 1-based indices.
  const std::vector<std::pair<std::size_t, double>>& history() const { return history_; }

 private:
  const Objective& inner_;
  mutable std::size_t evaluations_ = 0;
  mutable std::size_t gradient_calls_ = 0;
  mutable double best_ = INFINITY;
  mutable std::vector<std::pair<std::size_t, double>> history_;
};

struct TaskDistribution {
  std::vector<std::pair<Family, double>> weights{{Family::Sphere, 1.0}};
  std::vector<std::size_t> dims{2};
  double shift_range = 4.0;
  bool rotate = true;

  void validate() const;  // throws ConfigError
  bool operator==(const TaskDistribution&) const = default;
};

FunctionDescriptor sample_descriptor(const TaskDistribution& dist, std::mt19937_64& rng);
ObjectiveFunction sample_task(const TaskDistribution& dist, std::mt19937_64& rng);

// Population-level evaluation: x is (..., dim), result drops the last axis.
Tensor evaluate(const Objective& f, const Tensor& x);
Tensor gradient(const Objective& f, const Tensor& x);

// Recorded on the tape of x: values with gradient backward, and gradients
// with Hessian-vector backward.
Tensor evaluate_on_tape(const Objective& f, const Tensor& x);
Tensor gradient_on_tape(const Objective& f, const Tensor& x);

}  // namespace l2e
