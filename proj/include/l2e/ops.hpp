#pragma once

#include <cstdint>
#include <vector>

#include "l2e/tensor.hpp"

// Differentiable tensor operations. Every function records a backward rule
// on the tape of its tracked operands; with untracked operands it is a plain
// numeric function.
namespace l2e {

// Element-wise binary ops with leading-dimension (numpy) broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor log1p(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

// Matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
// x · Wᵀ + bias over the last axis of x; W is (out × in), bias is (out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

inline constexpr double kLayerNormEps = 1e-5;
// Normalizes the last axis to mean 0 / variance 1, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);

// Component-wise clamp into [lo, hi]; lo/hi broadcast against x.
Tensor clamp(const Tensor& x, const Tensor& lo, const Tensor& hi);

inline Tensor stop_gradient(const Tensor& x) { return x.detached(); }

// Frobenius norm of the values (not recorded).
double norm(const Tensor& x);
double max_abs(const Tensor& x);

// Largest singular value of a matrix by power iteration on WᵀW from a start
// vector seeded by `seed`. Returns 0 for the zero matrix.
double spectral_norm(const Tensor& w, int iters, std::uint64_t seed = 0);

}  // namespace l2e
