#include "l2e/theory_checks.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "l2e/errors.hpp"
#include "l2e/ops.hpp"

namespace l2e {
namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat random_orthogonal(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat g(dim, dim);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR();
  for (std::size_t j = 0; j < dim; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

std::vector<double> to_vector(const Mat& m) { return {m.data(), m.data() + m.size()}; }

Vec random_direction(std::size_t dim, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(dim);
  double s = 0;
  for (double& e : v) {
    e = n(rng);
    s += e * e;
  }
  for (double& e : v) e *= radius / std::sqrt(s);
  return v;
}

Vec random_point(std::size_t dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(dim);
  for (double& e : v) e = u(rng);
  return v;
}

void require_fixed_point(const SyntheticOperator& op) {
  if (!op.fixed_point && op.kind != OperatorKind::Identity) throw ContractError("operator has no known fixed point");
}

Vec reference_point(const SyntheticOperator& op) { return op.fixed_point ? *op.fixed_point : Vec(op.dim, 0.0); }

}  // namespace

SyntheticOperator affine_operator(std::vector<double> Q, Vec fixed_point, OperatorKind kind, double lipschitz_target) {
  const std::size_t d = fixed_point.size();
  if (Q.size() != d * d) throw DimensionError("Q must be dim × dim");
  SyntheticOperator op;
  op.kind = kind;
  op.dim = d;
  op.lipschitz_target = lipschitz_target;
  op.Q = Q;
  op.fixed_point = fixed_point;
  op.apply = [Q = std::move(Q), c = std::move(fixed_point), d](const Vec& x) {
    Vec y(c);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) y[i] += Q[i * d + j] * (x[j] - c[j]);
    return y;
  };
  return op;
}

SyntheticOperator affine_contraction(std::size_t dim, double alpha, std::mt19937_64& rng) {
  if (!(alpha > 0 && alpha <= 1)) throw ConfigError("alpha must lie in (0, 1]");
  const double smax = std::min(1.0, 2.0 * (1.0 - alpha) / alpha);
  std::uniform_real_distribution<double> u(0.0, smax);
  Eigen::VectorXd sigma(dim);
  for (std::size_t i = 0; i < dim; ++i) sigma[i] = i == 0 ? 0.0 : u(rng);
  const Mat U = random_orthogonal(dim, rng);
  const Mat Q = -(U * sigma.asDiagonal() * U.transpose());
  Vec c = random_point(dim, rng);
  return affine_operator(to_vector(Q), std::move(c), OperatorKind::AffineContraction, 1.0);
}

SyntheticOperator rotation_operator(std::size_t dim, std::mt19937_64& rng, double scale) {
  Mat R = random_orthogonal(dim, rng) * scale;
  return affine_operator(to_vector(R), Vec(dim, 0.0), OperatorKind::Rotation, scale);
}

SyntheticOperator scaling_operator(std::size_t dim, double s) {
  Mat Q = Mat::Identity(dim, dim) * s;
  return affine_operator(to_vector(Q), Vec(dim, 0.0), OperatorKind::Scaling, std::abs(s));
}

SyntheticOperator identity_operator(std::size_t dim) {
  SyntheticOperator op = scaling_operator(dim, 1.0);
  op.kind = OperatorKind::Identity;
  op.fixed_point.reset();
  return op;
}

SyntheticOperator learned_block_operator(std::shared_ptr<const ParamStore> store, const std::string& prefix,
                                         const OperatorConfig& cfg, std::size_t n, std::mt19937_64& rng) {
  const std::size_t d = cfg.dim;
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> f(n), raw(n * d);
  for (double& v : f) v = g(rng);
  for (double& v : raw) v = std::uniform_real_distribution<double>(-5.0, 5.0)(rng);
  const Tensor fit(Shape{1, n}, f);
  const auto stats = population_stats(Tensor(Shape{1, n, d}, raw), fit);
  const OperatorBlockParams params = OperatorBlockParams::view(*store, prefix, cfg);

  SyntheticOperator op;
  op.kind = OperatorKind::LearnedBlock;
  op.dim = n * d;
  op.lipschitz_target = 1.0 + kLipschitzSlack;
  op.apply = [store, params, fit, stats, n, d](const Vec& x) {
    return propose(Tensor(Shape{1, n, d}, x), fit, params, nullptr, &stats).delta.values();
  };
  return op;
}

double spectral_norm_svd(const std::vector<double>& Q, std::size_t dim) {
  if (Q.size() != dim * dim) throw DimensionError("Q must be dim × dim");
  const Eigen::Map<const Mat> m(Q.data(), dim, dim);
  return Eigen::JacobiSVD<Mat>(m).singularValues()[0];
}

std::string CheckReport::to_json() const {
  nlohmann::json j;
  j["check"] = name;
  j["passed"] = passed;
  j["worst_ratio"] = worst_ratio;
  j["seeds"] = seeds;
  j["failing_seed"] = failing_seed ? nlohmann::json(*failing_seed) : nlohmann::json(nullptr);
  nlohmann::json v = nlohmann::json::object();
  for (const auto& [k, x] : values) v[k] = std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
  j["values"] = v;
  return j.dump();
}

double vec_distance(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw DimensionError("vector sizes differ");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<Vec> km_sequence(const SyntheticOperator& op, const Vec& x0, double alpha, std::size_t K) {
  if (!(alpha > 0 && alpha <= 1)) throw ConfigError("alpha must lie in (0, 1]");
  std::vector<Vec> xs{x0};
  for (std::size_t k = 0; k < K; ++k) {
    const Vec& x = xs.back();
    const Vec ox = op(x);
    Vec next(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) next[i] = (1.0 - alpha) * x[i] + alpha * ox[i];
    xs.push_back(std::move(next));
  }
  return xs;
}

CheckReport check_contraction_bound(const SyntheticOperator& op, double alpha, std::size_t K, std::size_t trials,
                                    std::uint64_t seed, double d0) {
  require_fixed_point(op);
  CheckReport r;
  r.name = "contraction_bound";
  const double bound = std::pow(1.0 - alpha, static_cast<double>(K)) * d0;
  double worst = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t s = seed + t;
    std::mt19937_64 rng(s);
    Vec x0 = random_direction(op.dim, d0, rng);
    const Vec ref = reference_point(op);
    for (std::size_t i = 0; i < op.dim; ++i) x0[i] += ref[i];
    // under the identity every point is fixed, x⁰ included
    const Vec& target = op.kind == OperatorKind::Identity ? x0 : ref;
    const double err = vec_distance(km_sequence(op, x0, alpha, K).back(), target);
    r.seeds.push_back(s);
    worst = std::max(worst, err);
    r.worst_ratio = std::max(r.worst_ratio, bound > 0 ? err / bound : (err > 0 ? INFINITY : 0.0));
    if (err > bound + kBoundSlack && r.passed) {
      r.passed = false;
      r.failing_seed = s;
    }
  }
  r.values = {{"bound", bound}, {"worst_error", worst}, {"alpha", alpha}, {"K", static_cast<double>(K)}};
  return r;
}

double estimate_lipschitz(const SyntheticOperator& op, std::size_t pairs, std::uint64_t seed) {
  if (pairs < 100) throw ConfigError("estimate_lipschitz needs at least 100 pairs");
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const Vec u = random_point(op.dim, rng);
    Vec v;
    if (p % 2 == 0) {
      v = random_point(op.dim, rng);
    } else {
      v = random_direction(op.dim, 1e-4, rng);
      for (std::size_t i = 0; i < op.dim; ++i) v[i] += u[i];
    }
    const double den = vec_distance(u, v);
    if (den == 0) continue;
    worst = std::max(worst, vec_distance(op(u), op(v)) / den);
  }
  return worst;
}

BiasTable bias_vs_K(const SyntheticOperator& op, double alpha, const std::vector<std::size_t>& Ks,
                    std::uint64_t seed, double d0) {
  require_fixed_point(op);
  if (Ks.size() < 2) throw ConfigError("bias_vs_K needs at least two values of K");
  std::mt19937_64 rng(seed);
  Vec x0 = random_direction(op.dim, d0, rng);
  for (std::size_t i = 0; i < op.dim; ++i) x0[i] += (*op.fixed_point)[i];
  const auto xs = km_sequence(op, x0, alpha, *std::max_element(Ks.begin(), Ks.end()));
  BiasTable t;
  t.K = Ks;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t K : Ks) {
    const double e = vec_distance(xs[K], *op.fixed_point);
    t.squared_error.push_back(e * e);
    const double x = static_cast<double>(K), y = std::log(e * e);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double m = static_cast<double>(Ks.size());
  t.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return t;
}

CheckReport check_bias_decay(const BiasTable& t, double alpha, double rel) {
  CheckReport r;
  r.name = "bias_vs_K";
  const double target = 2.0 * std::log(1.0 - alpha);
  r.worst_ratio = std::abs(t.slope - target) / std::abs(target);
  r.passed = std::isfinite(t.slope) && r.worst_ratio <= rel;
  r.values = {{"alpha", alpha}, {"slope", t.slope}, {"target_slope", target}};
  for (std::size_t i = 0; i < t.K.size(); ++i)
    r.values.emplace_back("sq_error_K" + std::to_string(t.K[i]), t.squared_error[i]);
  return r;
}

std::vector<double> km_residuals(const SyntheticOperator& op, const Vec& x0, double kappa, std::size_t steps) {
  if (!(kappa > 0 && kappa <= 1)) throw ConfigError("kappa must lie in (0, 1] for a KM schedule");
  std::vector<double> res;
  Vec x = x0;
  for (std::size_t k = 0;; ++k) {
    const Vec ox = op(x);
    res.push_back(vec_distance(ox, x));
    if (k == steps) break;
    const double s = kappa / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += s * (ox[i] - x[i]);
  }
  return res;
}

CheckReport check_residual_convergence(const std::vector<double>& residuals) {
  CheckReport r;
  r.name = "residual_convergence";
  if (residuals.size() <= 500) throw ContractError("residual check needs at least 501 entries");
  double worst_increase = 0;
  for (std::size_t k = 1; k < residuals.size(); ++k)
    worst_increase = std::max(worst_increase, residuals[k] - residuals[k - 1]);
  const bool monotone = worst_increase <= kResidualSlack;
  const bool trend = residuals[200] <= residuals[10];
  const bool small = residuals[500] < 1e-3;
  r.passed = monotone && trend && small;
  r.worst_ratio = residuals[500] / 1e-3;
  r.values = {{"r0", residuals[0]},
              {"r10", residuals[10]},
              {"r200", residuals[200]},
              {"r500", residuals[500]},
              {"worst_increase", worst_increase}};
  return r;
}

}  // namespace l2e
