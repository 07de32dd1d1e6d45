#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "l2e/ops.hpp"

namespace l2e::testing {

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& e : v) e = u(rng);
  return Tensor(shape, std::move(v));
}

inline bool close_rel(double a, double b, double rtol, double atol) {
  return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b)) + atol;
}

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Reverse-mode gradients of sum(f(inputs) ⊙ R) against central differences.
inline void check_gradients(const TensorFn& f, std::vector<Tensor> inputs, std::uint64_t seed = 7,
                            double h = 1e-6, double rtol = 1e-4, double atol = 1e-7) {
  std::mt19937_64 rng(seed);
  const Tensor probe = f(inputs);
  const Tensor weights = random_tensor(probe.shape(), rng, 0.5, 1.5);
  auto scalar_loss = [&](const std::vector<Tensor>& in) { return sum(mul(f(in), weights)).item(); };

  Tape tape;
  std::vector<Tensor> tracked;
  for (const auto& t : inputs) tracked.push_back(tape.watch(t));
  const Tensor loss = sum(mul(f(tracked), weights));
  const Gradients g = tape.backward(loss);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = g.of(tracked[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[k].mutable_data()[i] += h;
      minus[k].mutable_data()[i] -= h;
      const double fd = (scalar_loss(plus) - scalar_loss(minus)) / (2 * h);
      INFO("input " << k << " element " << i << ": tape " << analytic[i] << " vs fd " << fd);
      CHECK(close_rel(analytic[i], fd, rtol, atol));
    }
  }
}

}  // namespace l2e::testing
