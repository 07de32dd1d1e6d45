#include "l2e/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>

namespace l2e {
namespace {

std::size_t norm_axis(const Shape& shape, int axis, std::string_view op) {
  const int r = static_cast<int>(shape.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape));
  return static_cast<std::size_t>(a);
}

// outer × n × inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;  // flat operand offset for each output element
};

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da == db || db == 1)
      out[i] = da;
    else if (da == 1)
      out[i] = db;
    else
      throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
  }
  return out;
}

// Flat offsets into an operand of shape `in` for every element of `out`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + (r - in.size());
    stride[oi] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t total = numel(out);
  std::vector<std::size_t> idx(total);
  std::vector<std::size_t> counter(r, 0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < total; ++k) {
    idx[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      off += stride[d];
      if (counter[d] < out[d]) break;
      off -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

std::shared_ptr<const BroadcastPlan> plan(const Shape& a, const Shape& b, std::string_view op) {
  auto p = std::make_shared<BroadcastPlan>();
  if (a == b) {
    p->out = a;
    p->same = true;
    return p;
  }
  p->out = broadcast_shape(a, b, op);
  p->ia = broadcast_index(a, p->out);
  p->ib = broadcast_index(b, p->out);
  return p;
}

template <class F, class DA, class DB>
Tensor binary(std::string_view name, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  auto p = plan(a.shape(), b.shape(), name);
  const std::size_t n = numel(p->out);
  std::vector<double> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  if (p->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[p->ia[i]], bv[p->ib[i]]);
  }
  Tensor ac = a.detached(), bc = b.detached();
  return record_op(name, {&a, &b}, Tensor(p->out, std::move(out)),
                   [p, ac, bc, dfa, dfb](std::span<const double> g, GradSlots gin) {
                     const auto av = ac.data();
                     const auto bv = bc.data();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const std::size_t ia = p->same ? i : p->ia[i];
                       const std::size_t ib = p->same ? i : p->ib[i];
                       if (!gin[0].empty()) gin[0][ia] += g[i] * dfa(av[ia], bv[ib]);
                       if (!gin[1].empty()) gin[1][ib] += g[i] * dfb(av[ia], bv[ib]);
                     }
                   });
}

// dfdx receives (x, y).
template <class F, class D>
Tensor unary(std::string_view name, const Tensor& x, F f, D dfdx) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor y(x.shape(), std::move(out));
  Tensor xc = x.detached(), yc = y;
  return record_op(name, {&x}, std::move(y), [xc, yc, dfdx](std::span<const double> g, GradSlots gin) {
    const auto xv = xc.data();
    const auto yv = yc.data();
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double stable_softplus(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double s) {
  return unary(
      "scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(
      "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x) {
  return unary("softplus", x, stable_softplus, [](double v, double) { return stable_sigmoid(v); });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor log1p(const Tensor& x) {
  return unary(
      "log1p", x, [](double v) { return std::log1p(v); }, [](double v, double) { return 1.0 / (1.0 + v); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  const std::size_t m = a.extent(-2), k = a.extent(-1);
  const std::size_t k2 = b.extent(-2), n = b.extent(-1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions differ for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape(abatch, bbatch, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch dimensions of " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " do not broadcast");
  }
  auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(abatch, batch));
  auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(bbatch, batch));
  const std::size_t nb = ia->size();
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(nb * m * n, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t t = 0; t < nb; ++t) {
    const double* A = av.data() + (*ia)[t] * m * k;
    const double* B = bv.data() + (*ib)[t] * k * n;
    double* C = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aip * B[p * n + j];
      }
  }
  Tensor ac = a.detached(), bc = b.detached();
  return record_op("matmul", {&a, &b}, Tensor(out_shape, std::move(out)),
                   [ac, bc, ia, ib, m, k, n](std::span<const double> g, GradSlots gin) {
                     const auto av = ac.data();
                     const auto bv = bc.data();
                     for (std::size_t t = 0; t < ia->size(); ++t) {
                       const double* A = av.data() + (*ia)[t] * m * k;
                       const double* B = bv.data() + (*ib)[t] * k * n;
                       const double* G = g.data() + t * m * n;
                       if (!gin[0].empty()) {
                         double* GA = gin[0].data() + (*ia)[t] * m * k;
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double s = 0;
                             for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
                             GA[i * k + p] += s;
                           }
                       }
                       if (!gin[1].empty()) {
                         double* GB = gin[1].data() + (*ib)[t] * k * n;
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = A[i * k + p];
                             for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
                           }
                       }
                     }
                   });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be a matrix, got " + to_string(weight.shape()));
  const std::size_t out_f = weight.extent(0), in_f = weight.extent(1);
  if (x.rank() < 1 || x.extent(-1) != in_f)
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  if (bias.size() != out_f)
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  const std::size_t rows = x.size() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<double> out(rows * out_f);
  const auto xv = x.data();
  const auto wv = weight.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * in_f;
    for (std::size_t o = 0; o < out_f; ++o) {
      const double* wr = wv.data() + o * in_f;
      double s = bv[o];
      for (std::size_t i = 0; i < in_f; ++i) s += xr[i] * wr[i];
      out[r * out_f + o] = s;
    }
  }
  Tensor xc = x.detached(), wc = weight.detached();
  return record_op("linear", {&x, &weight, &bias}, Tensor(out_shape, std::move(out)),
                   [xc, wc, rows, in_f, out_f](std::span<const double> g, GradSlots gin) {
                     const auto xv = xc.data();
                     const auto wv = wc.data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* gr = g.data() + r * out_f;
                       const double* xr = xv.data() + r * in_f;
                       if (!gin[0].empty()) {
                         double* gx = gin[0].data() + r * in_f;
                         for (std::size_t o = 0; o < out_f; ++o) {
                           const double go = gr[o];
                           const double* wr = wv.data() + o * in_f;
                           for (std::size_t i = 0; i < in_f; ++i) gx[i] += go * wr[i];
                         }
                       }
                       if (!gin[1].empty()) {
                         for (std::size_t o = 0; o < out_f; ++o) {
                           const double go = gr[o];
                           double* gw = gin[1].data() + o * in_f;
                           for (std::size_t i = 0; i < in_f; ++i) gw[i] += go * xr[i];
                         }
                       }
                       if (!gin[2].empty())
                         for (std::size_t o = 0; o < out_f; ++o) gin[2][o] += gr[o];
                     }
                   });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(x.shape()));
  const std::size_t m = x.extent(-2), n = x.extent(-1);
  const std::size_t nb = x.size() / (m * n);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t t = 0; t < nb; ++t)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[t * m * n + j * m + i] = xv[t * m * n + i * n + j];
  return record_op("transpose", {&x}, Tensor(out_shape, std::move(out)),
                   [nb, m, n](std::span<const double> g, GradSlots gin) {
                     for (std::size_t t = 0; t < nb; ++t)
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           gin[0][t * m * n + i * n + j] += g[t * m * n + j * m + i];
                   });
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor y = x.reshaped(std::move(shape));
  return record_op("reshape", {&x}, std::move(y), [](std::span<const double> g, GradSlots gin) {
    for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t a = norm_axis(x.shape(), axis, "slice");
  if (begin >= end || end > x.shape()[a])
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                         to_string(x.shape()));
  const AxisSplit s = split_at(x.shape(), a);
  const std::size_t w = end - begin;
  Shape out_shape = x.shape();
  out_shape[a] = w;
  std::vector<double> out(s.outer * w * s.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < w; ++i)
      std::copy_n(xv.data() + (o * s.n + begin + i) * s.inner, s.inner, out.data() + (o * w + i) * s.inner);
  return record_op("slice", {&x}, Tensor(out_shape, std::move(out)),
                   [s, w, begin](std::span<const double> g, GradSlots gin) {
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t i = 0; i < w; ++i)
                         for (std::size_t q = 0; q < s.inner; ++q)
                           gin[0][(o * s.n + begin + i) * s.inner + q] += g[(o * w + i) * s.inner + q];
                   });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const std::size_t a = norm_axis(parts[0].shape(), axis, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[a] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d)
      if (d != a && p.shape()[d] != parts[0].shape()[d])
        throw DimensionError("concat: " + to_string(p.shape()) + " vs " + to_string(parts[0].shape()));
    widths.push_back(p.shape()[a]);
    out_shape[a] += p.shape()[a];
  }
  const AxisSplit s = split_at(out_shape, a);
  std::vector<double> out(numel(out_shape));
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    const std::size_t w = widths[k];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.data() + o * w * s.inner, w * s.inner, out.data() + (o * s.n + off) * s.inner);
    off += w;
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  Tape* tape = nullptr;
  for (auto* p : ptrs)
    if (p->tracked()) tape = p->tape();
  Tensor value(out_shape, std::move(out));
  if (!tape) return value;
  return tape->record("concat", std::span<const Tensor* const>(ptrs.data(), ptrs.size()), std::move(value),
                      [s, widths](std::span<const double> g, GradSlots gin) {
                        std::size_t off = 0;
                        for (std::size_t k = 0; k < widths.size(); ++k) {
                          const std::size_t w = widths[k];
                          if (!gin[k].empty())
                            for (std::size_t o = 0; o < s.outer; ++o)
                              for (std::size_t q = 0; q < w * s.inner; ++q)
                                gin[k][o * w * s.inner + q] += g[(o * s.n + off) * s.inner + q];
                          off += w;
                        }
                      });
}

Tensor sum(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v;
  return record_op("sum", {&x}, Tensor::scalar(s), [](std::span<const double> g, GradSlots gin) {
    for (auto& v : gin[0]) v += g[0];
  });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const std::size_t a = norm_axis(x.shape(), axis, "sum");
  const AxisSplit s = split_at(x.shape(), a);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[a] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(a));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t q = 0; q < s.inner; ++q) out[o * s.inner + q] += xv[(o * s.n + i) * s.inner + q];
  return record_op("sum_axis", {&x}, Tensor(out_shape, std::move(out)),
                   [s](std::span<const double> g, GradSlots gin) {
                     for (std::size_t o = 0; o < s.outer; ++o)
                       for (std::size_t i = 0; i < s.n; ++i)
                         for (std::size_t q = 0; q < s.inner; ++q)
                           gin[0][(o * s.n + i) * s.inner + q] += g[o * s.inner + q];
                   });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const double n = static_cast<double>(x.extent(axis));
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t a = norm_axis(x.shape(), axis, "softmax");
  const AxisSplit s = split_at(x.shape(), a);
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t q = 0; q < s.inner; ++q) {
      double mx = -INFINITY;
      for (std::size_t i = 0; i < s.n; ++i) mx = std::max(mx, xv[(o * s.n + i) * s.inner + q]);
      double z = 0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const std::size_t k = (o * s.n + i) * s.inner + q;
        out[k] = std::exp(xv[k] - mx);
        z += out[k];
      }
      for (std::size_t i = 0; i < s.n; ++i) out[(o * s.n + i) * s.inner + q] /= z;
    }
  Tensor y(x.shape(), std::move(out));
  Tensor yc = y;
  return record_op("softmax", {&x}, std::move(y), [yc, s](std::span<const double> g, GradSlots gin) {
    const auto yv = yc.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t q = 0; q < s.inner; ++q) {
        double dot = 0;
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = (o * s.n + i) * s.inner + q;
          dot += g[k] * yv[k];
        }
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t k = (o * s.n + i) * s.inner + q;
          gin[0][k] += yv[k] * (g[k] - dot);
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm needs rank >= 1");
  const std::size_t n = x.extent(-1);
  if (n < 2) throw DimensionError("layer_norm over an extent-1 axis is undefined, shape " + to_string(x.shape()));
  if (gain.size() != n || bias.size() != n)
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(n) + " entries");
  const std::size_t rows = x.size() / n;
  std::vector<double> xhat(x.size()), inv(rows), out(x.size());
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(n);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[r * n + i] = (xr[i] - mu) * inv[r];
      out[r * n + i] = xhat[r * n + i] * gv[i] + bv[i];
    }
  }
  Tensor gc = gain.detached();
  auto saved = std::make_shared<std::pair<std::vector<double>, std::vector<double>>>(std::move(xhat), std::move(inv));
  return record_op("layer_norm", {&x, &gain, &bias}, Tensor(x.shape(), std::move(out)),
                   [saved, gc, rows, n](std::span<const double> g, GradSlots gin) {
                     const auto& xhat = saved->first;
                     const auto& inv = saved->second;
                     const auto gv = gc.data();
                     const double dn = static_cast<double>(n);
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double* gr = g.data() + r * n;
                       const double* xh = xhat.data() + r * n;
                       if (!gin[0].empty()) {
                         double m1 = 0, m2 = 0;
                         for (std::size_t i = 0; i < n; ++i) {
                           const double gx = gr[i] * gv[i];
                           m1 += gx;
                           m2 += gx * xh[i];
                         }
                         m1 /= dn;
                         m2 /= dn;
                         for (std::size_t i = 0; i < n; ++i)
                           gin[0][r * n + i] += inv[r] * (gr[i] * gv[i] - m1 - xh[i] * m2);
                       }
                       if (!gin[1].empty())
                         for (std::size_t i = 0; i < n; ++i) gin[1][i] += gr[i] * xh[i];
                       if (!gin[2].empty())
                         for (std::size_t i = 0; i < n; ++i) gin[2][i] += gr[i];
                     }
                   });
}

Tensor clamp(const Tensor& x, const Tensor& lo, const Tensor& hi) {
  const auto pl = plan(x.shape(), lo.shape(), "clamp");
  const auto ph = plan(x.shape(), hi.shape(), "clamp");
  if (pl->out != x.shape() || ph->out != x.shape())
    throw DimensionError("clamp: bounds must broadcast to " + to_string(x.shape()));
  const auto xv = x.data();
  const auto lv = lo.data();
  const auto hv = hi.data();
  std::vector<double> out(x.size());
  auto pass = std::make_shared<std::vector<char>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double l = lv[pl->same ? i : pl->ib[i]];
    const double h = hv[ph->same ? i : ph->ib[i]];
    const double v = xv[i];
    out[i] = std::clamp(v, l, h);
    (*pass)[i] = (v >= l && v <= h) ? 1 : 0;
  }
  return record_op("clamp", {&x}, Tensor(x.shape(), std::move(out)), [pass](std::span<const double> g, GradSlots gin) {
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*pass)[i]) gin[0][i] += g[i];
  });
}

double norm(const Tensor& x) {
  double s = 0;
  for (double v : x.data()) s += v * v;
  return std::sqrt(s);
}

double max_abs(const Tensor& x) {
  double m = 0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  return m;
}

double spectral_norm(const Tensor& w, int iters, std::uint64_t seed) {
  if (w.rank() != 2) throw DimensionError("spectral_norm needs a matrix, got " + to_string(w.shape()));
  if (iters < 1) throw ContractError("spectral_norm needs iters >= 1");
  const std::size_t m = w.extent(0), n = w.extent(1);
  const auto wv = w.data();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<double> v(n), u(m);
  auto normalize = [](std::vector<double>& a) {
    double s = 0;
    for (double e : a) s += e * e;
    s = std::sqrt(s);
    if (s == 0) return 0.0;
    for (double& e : a) e /= s;
    return s;
  };
  for (double& e : v) e = gauss(rng);
  normalize(v);
  double sigma = 0;
  for (int it = 0; it < iters; ++it) {
    // u = W v, sigma = |u|, v = Wᵀ u / |Wᵀ u|
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += wv[i * n + j] * v[j];
      u[i] = s;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < m; ++i) s += wv[i * n + j] * u[i];
      v[j] = s;
    }
    if (normalize(v) == 0) return 0.0;
  }
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += wv[i * n + j] * v[j];
    u[i] = s;
  }
  sigma = normalize(u);
  return sigma;
}

}  // namespace l2e
