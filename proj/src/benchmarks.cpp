#include "l2e/benchmarks.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "l2e/errors.hpp"

namespace l2e {
namespace {

constexpr std::array<std::pair<Family, std::string_view>, 8> kNames{{
    {Family::Sphere, "Sphere"},
    {Family::Ellipsoidal, "Ellipsoidal"},
    {Family::Rastrigin, "Rastrigin"},
    {Family::Rosenbrock, "Rosenbrock"},
    {Family::BentCigar, "BentCigar"},
    {Family::Discus, "Discus"},
    {Family::SharpRidge, "SharpRidge"},
    {Family::LunacekBiRastrigin, "LunacekBiRastrigin"},
}};

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kLunacekMu0 = 2.5;
constexpr double kLunacekD = 1.0;

bool is_quadratic(Family f) {
  return f == Family::Sphere || f == Family::Ellipsoidal || f == Family::BentCigar || f == Family::Discus;
}

// Diagonal weights w of Σ w_i z_i² for the quadratic families.
double quad_weight(Family f, std::size_t i, std::size_t dim) {
  switch (f) {
    case Family::Ellipsoidal:
      return dim == 1 ? 1.0 : std::pow(10.0, 6.0 * static_cast<double>(i) / static_cast<double>(dim - 1));
    case Family::BentCigar:
      return i == 0 ? 1.0 : 1e6;
    case Family::Discus:
      return i == 0 ? 1e6 : 1.0;
    default:
      return 1.0;
  }
}

double lunacek_s(std::size_t dim) { return 1.0 - 1.0 / (2.0 * std::sqrt(static_cast<double>(dim) + 20.0) - 8.2); }

void check_dim(std::size_t expected, std::size_t got) {
  if (expected != got)
    throw DimensionError("objective has dimension " + std::to_string(expected) + ", input has " +
                         std::to_string(got));
}

// Orthogonal matrix from QR of a Gaussian matrix, diagonal of R made positive.
std::vector<double> random_rotation(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd g(dim, dim);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) g(i, j) = n(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR();
  for (std::size_t j = 0; j < dim; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  std::vector<double> out(dim * dim);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) out[i * dim + j] = q(i, j);
  return out;
}

std::vector<double> identity(std::size_t dim) {
  std::vector<double> out(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) out[i * dim + i] = 1.0;
  return out;
}

}  // namespace

std::string_view family_name(Family f) {
  for (const auto& [fam, name] : kNames)
    if (fam == f) return name;
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (const auto& [fam, n] : kNames)
    if (n == name) return fam;
  throw ConfigError("unknown benchmark family '" + std::string(name) + "'");
}

const std::vector<Family>& all_families() {
  static const std::vector<Family> v = [] {
    std::vector<Family> out;
    for (const auto& [fam, name] : kNames) out.push_back(fam);
    return out;
  }();
  return v;
}

bool has_analytic_gradient(Family f) { return is_quadratic(f) || f == Family::Rosenbrock; }

Box Box::uniform(std::size_t dim, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("box needs lo < hi");
  return Box{std::vector<double>(dim, lo), std::vector<double>(dim, hi)};
}

bool Box::contains(std::span<const double> x) const {
  if (x.size() != lo.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < lo[i] || x[i] > hi[i]) return false;
  return true;
}

// ---------------------------------------------------------------------------

std::string FunctionDescriptor::to_string() const {
  char fopt[64];
  std::snprintf(fopt, sizeof fopt, "%.17g", f_opt);
  char range[64];
  std::snprintf(range, sizeof range, "%.17g", shift_range);
  std::ostringstream os;
  os << "family=" << family_name(family) << " dim=" << dim << " seed=" << seed << " f_opt=" << fopt
     << " rotate=" << (rotate ? 1 : 0) << " shift_range=" << range << " surrogate=" << (surrogate_shift ? 1 : 0);
  return os.str();
}

FunctionDescriptor FunctionDescriptor::parse(std::string_view text) {
  FunctionDescriptor d;
  std::istringstream is{std::string(text)};
  std::string tok;
  bool saw_family = false, saw_dim = false;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("descriptor token without '=': " + tok);
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    try {
      if (key == "family") {
        d.family = parse_family(val);
        saw_family = true;
      } else if (key == "dim") {
        d.dim = std::stoul(val);
        saw_dim = true;
      } else if (key == "seed") {
        d.seed = std::stoull(val);
      } else if (key == "f_opt") {
        d.f_opt = std::stod(val);
      } else if (key == "rotate") {
        d.rotate = val == "1" || val == "true";
      } else if (key == "shift_range") {
        d.shift_range = std::stod(val);
      } else if (key == "surrogate") {
        d.surrogate_shift = val == "1" || val == "true";
      } else {
        throw ConfigError("unknown descriptor key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad descriptor value for '" + key + "': " + val);
    }
  }
  if (!saw_family || !saw_dim) throw ConfigError("descriptor needs family and dim");
  if (d.dim == 0) throw ConfigError("descriptor dim must be positive");
  return d;
}

// ---------------------------------------------------------------------------

ObjectiveFunction::ObjectiveFunction(Family family, std::vector<double> shift, std::vector<double> rotation,
                                     double f_opt, Box bounds, GradientMode mode)
    : family_(family),
      shift_(std::move(shift)),
      rotation_(std::move(rotation)),
      f_opt_(f_opt),
      bounds_(std::move(bounds)),
      mode_(mode) {
  const std::size_t d = shift_.size();
  if (d == 0) throw DimensionError("objective dimension must be positive");
  if (rotation_.empty()) rotation_ = identity(d);
  if (rotation_.size() != d * d) throw DimensionError("rotation must be dim×dim");
  if (bounds_.lo.empty()) bounds_ = Box::uniform(d, -5.0, 5.0);
  check_dim(d, bounds_.dim());
  if (family_ == Family::Rosenbrock) {
    z_scale_ = std::max(1.0, std::sqrt(static_cast<double>(d)) / 8.0);
    z_offset_ = 1.0;
  }
  descriptor_.family = family_;
  descriptor_.dim = d;
  descriptor_.f_opt = f_opt_;
}

ObjectiveFunction ObjectiveFunction::make(const FunctionDescriptor& d, GradientMode mode) {
  if (d.dim == 0) throw ConfigError("descriptor dim must be positive");
  std::mt19937_64 rng(d.seed);
  std::uniform_real_distribution<double> u(-d.shift_range, d.shift_range);
  std::vector<double> shift(d.dim);
  for (auto& s : shift) s = u(rng);
  std::vector<double> rot = d.rotate ? random_rotation(d.dim, rng) : identity(d.dim);
  ObjectiveFunction f(d.family, std::move(shift), std::move(rot), d.f_opt, {}, mode);
  if (d.surrogate_shift) f = f.with_surrogate_shift(d.seed ^ 0x5eed5eed5eed5eedULL);
  f.descriptor_ = d;
  return f;
}

ObjectiveFunction ObjectiveFunction::with_gradient_mode(GradientMode mode) const {
  ObjectiveFunction f = *this;
  f.mode_ = mode;
  return f;
}

ObjectiveFunction ObjectiveFunction::with_surrogate_shift(std::uint64_t seed) const {
  ObjectiveFunction f = *this;
  f.field_amplitude_ = 0.0;
  std::mt19937_64 rng(seed);
  const std::size_t d = dim();
  std::vector<double> x(d);
  double lo = INFINITY, hi = -INFINITY;
  for (int k = 0; k < 64; ++k) {
    for (std::size_t i = 0; i < d; ++i)
      x[i] = std::uniform_real_distribution<double>(bounds_.lo[i], bounds_.hi[i])(rng);
    const double v = base_value(x);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  f.field_phase_.resize(d);
  for (std::size_t i = 0; i < d; ++i)
    f.field_phase_[i] = std::uniform_real_distribution<double>(bounds_.lo[i], bounds_.hi[i])(rng);
  f.field_amplitude_ = 0.05 * std::abs(hi - lo);
  f.descriptor_.surrogate_shift = true;
  return f;
}

void ObjectiveFunction::to_z(std::span<const double> x, std::vector<double>& z) const {
  const std::size_t d = dim();
  z.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < d; ++j) acc += rotation_[i * d + j] * (x[j] - shift_[j]);
    z[i] = z_scale_ * acc + z_offset_;
  }
}

double ObjectiveFunction::base_value(std::span<const double> x) const {
  const std::size_t d = dim();
  std::vector<double> z;
  to_z(x, z);
  double f = 0;
  switch (family_) {
    case Family::Sphere:
    case Family::Ellipsoidal:
    case Family::BentCigar:
    case Family::Discus:
      for (std::size_t i = 0; i < d; ++i) f += quad_weight(family_, i, d) * z[i] * z[i];
      break;
    case Family::Rastrigin: {
      double c = 0, s = 0;
      for (std::size_t i = 0; i < d; ++i) {
        c += std::cos(kTwoPi * z[i]);
        s += z[i] * z[i];
      }
      f = 10.0 * (static_cast<double>(d) - c) + s;
      break;
    }
    case Family::Rosenbrock:
      for (std::size_t i = 0; i + 1 < d; ++i) {
        const double a = z[i] * z[i] - z[i + 1], b = z[i] - 1.0;
        f += 100.0 * a * a + b * b;
      }
      break;
    case Family::SharpRidge: {
      double rest = 0;
      for (std::size_t i = 1; i < d; ++i) rest += z[i] * z[i];
      f = z[0] * z[0] + 100.0 * std::sqrt(rest);
      break;
    }
    case Family::LunacekBiRastrigin: {
      const double s = lunacek_s(d);
      const double mu1 = -std::sqrt((kLunacekMu0 * kLunacekMu0 - kLunacekD) / s);
      double s0 = 0, s1 = 0, c = 0;
      for (std::size_t i = 0; i < d; ++i) {
        const double xh = x[i] - shift_[i] + kLunacekMu0;
        s0 += (xh - kLunacekMu0) * (xh - kLunacekMu0);
        s1 += (xh - mu1) * (xh - mu1);
        c += std::cos(kTwoPi * z[i]);
      }
      f = std::min(s0, kLunacekD * static_cast<double>(d) + s * s1) + 10.0 * (static_cast<double>(d) - c);
      break;
    }
  }
  return f + f_opt_;
}

double ObjectiveFunction::value(std::span<const double> x) const {
  check_dim(dim(), x.size());
  double f = base_value(x);
  if (field_amplitude_ != 0.0) {
    double c = 0;
    for (std::size_t i = 0; i < dim(); ++i) {
      const double period = 0.5 * (bounds_.hi[i] - bounds_.lo[i]);
      c += std::cos(kTwoPi * (x[i] - field_phase_[i]) / period);
    }
    f += field_amplitude_ * c / static_cast<double>(dim());
  }
  return f;
}

void ObjectiveFunction::analytic_gradient(std::span<const double> x, std::span<double> g) const {
  const std::size_t d = dim();
  std::vector<double> z, gz(d, 0.0);
  to_z(x, z);
  if (is_quadratic(family_)) {
    for (std::size_t i = 0; i < d; ++i) gz[i] = 2.0 * quad_weight(family_, i, d) * z[i];
  } else {
    for (std::size_t i = 0; i + 1 < d; ++i) {
      const double a = z[i] * z[i] - z[i + 1];
      gz[i] += 400.0 * z[i] * a + 2.0 * (z[i] - 1.0);
      gz[i + 1] += -200.0 * a;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    double acc = 0;
    for (std::size_t i = 0; i < d; ++i) acc += rotation_[i * d + j] * gz[i];
    g[j] = z_scale_ * acc;
  }
}

void ObjectiveFunction::fd_gradient(std::span<const double> x, std::span<double> g) const {
  std::vector<double> xp(x.begin(), x.end());
  for (std::size_t i = 0; i < xp.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    const double fp = base_value(xp);
    xp[i] = x[i] - h;
    const double fm = base_value(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
}

void ObjectiveFunction::gradient(std::span<const double> x, std::span<double> g) const {
  check_dim(dim(), x.size());
  check_dim(dim(), g.size());
  if (analytic())
    analytic_gradient(x, g);
  else
    fd_gradient(x, g);
  if (field_amplitude_ != 0.0) {
    for (std::size_t i = 0; i < dim(); ++i) {
      const double w = kTwoPi / (0.5 * (bounds_.hi[i] - bounds_.lo[i]));
      g[i] -= field_amplitude_ * w * std::sin(w * (x[i] - field_phase_[i])) / static_cast<double>(dim());
    }
  }
}

void ObjectiveFunction::hessian_vector(std::span<const double> x, std::span<const double> v,
                                       std::span<double> out) const {
  const std::size_t d = dim();
  check_dim(d, x.size());
  check_dim(d, v.size());
  check_dim(d, out.size());
  if (analytic()) {
    std::vector<double> z, rv(d, 0.0), hz(d, 0.0);
    to_z(x, z);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) rv[i] += rotation_[i * d + j] * v[j];
    if (is_quadratic(family_)) {
      for (std::size_t i = 0; i < d; ++i) hz[i] = 2.0 * quad_weight(family_, i, d) * rv[i];
    } else {
      for (std::size_t i = 0; i + 1 < d; ++i) {
        hz[i] += (1200.0 * z[i] * z[i] - 400.0 * z[i + 1] + 2.0) * rv[i] - 400.0 * z[i] * rv[i + 1];
        hz[i + 1] += -400.0 * z[i] * rv[i] + 200.0 * rv[i + 1];
      }
    }
    const double c2 = z_scale_ * z_scale_;
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0;
      for (std::size_t i = 0; i < d; ++i) acc += rotation_[i * d + j] * hz[i];
      out[j] = c2 * acc;
    }
  } else {
    double vn = 0;
    for (double e : v) vn += e * e;
    vn = std::sqrt(vn);
    std::fill(out.begin(), out.end(), 0.0);
    if (vn == 0) return;
    double xs = 1.0;
    for (double e : x) xs = std::max(xs, std::abs(e));
    const double eps = 1e-4 * xs;
    std::vector<double> xp(d), xm(d), gp(d), gm(d);
    for (std::size_t i = 0; i < d; ++i) {
      xp[i] = x[i] + eps * v[i] / vn;
      xm[i] = x[i] - eps * v[i] / vn;
    }
    fd_gradient(xp, gp);
    fd_gradient(xm, gm);
    for (std::size_t i = 0; i < d; ++i) out[i] = (gp[i] - gm[i]) / (2.0 * eps) * vn;
  }
  if (field_amplitude_ != 0.0) {
    for (std::size_t i = 0; i < d; ++i) {
      const double w = kTwoPi / (0.5 * (bounds_.hi[i] - bounds_.lo[i]));
      out[i] -= field_amplitude_ * w * w * std::cos(w * (x[i] - field_phase_[i])) / static_cast<double>(d) * v[i];
    }
  }
}

// ---------------------------------------------------------------------------

double CountingObjective::value(std::span<const double> x) const {
  const double v = inner_.value(x);
  ++evaluations_;
  if (v < best_) {
    best_ = v;
    history_.emplace_back(evaluations_, v);
  }
  return v;
}

void CountingObjective::gradient(std::span<const double> x, std::span<double> g) const {
  ++gradient_calls_;
  inner_.gradient(x, g);
}

// ---------------------------------------------------------------------------

void TaskDistribution::validate() const {
  if (weights.empty()) throw ConfigError("task distribution needs at least one family");
  double total = 0;
  for (const auto& [fam, w] : weights) {
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("family weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("family weights must sum to 1");
  if (dims.empty()) throw ConfigError("task distribution needs at least one dimension");
  for (auto d : dims)
    if (d == 0) throw ConfigError("dimensions must be positive");
  if (!(shift_range >= 0) || shift_range > 5.0) throw ConfigError("shift range must lie in [0, 5]");
}

FunctionDescriptor sample_descriptor(const TaskDistribution& dist, std::mt19937_64& rng) {
  dist.validate();
  std::vector<double> w;
  for (const auto& [fam, p] : dist.weights) w.push_back(p);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::uniform_int_distribution<std::size_t> pick_dim(0, dist.dims.size() - 1);
  FunctionDescriptor d;
  d.family = dist.weights[pick(rng)].first;
  d.dim = dist.dims[pick_dim(rng)];
  d.seed = rng();
  d.rotate = dist.rotate;
  d.shift_range = dist.shift_range;
  return d;
}

ObjectiveFunction sample_task(const TaskDistribution& dist, std::mt19937_64& rng) {
  return ObjectiveFunction::make(sample_descriptor(dist, rng));
}

// ---------------------------------------------------------------------------

namespace {

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

void check_population(const Objective& f, const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("population tensor needs a trailing dimension axis");
  check_dim(f.dim(), x.extent(-1));
}

}  // namespace

Tensor evaluate(const Objective& f, const Tensor& x) {
  check_population(f, x);
  const std::size_t d = f.dim(), rows = x.size() / d;
  std::vector<double> out(rows);
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) out[r] = f.value(xs.subspan(r * d, d));
  return Tensor(drop_last(x.shape()), std::move(out));
}

Tensor gradient(const Objective& f, const Tensor& x) {
  check_population(f, x);
  const std::size_t d = f.dim(), rows = x.size() / d;
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    f.gradient(xs.subspan(r * d, d), std::span<double>(out.data() + r * d, d));
  return Tensor(x.shape(), std::move(out));
}

// The objective must outlive the tape's backward pass.
Tensor evaluate_on_tape(const Objective& f, const Tensor& x) {
  Tensor value = evaluate(f, x);
  const Tensor xv = x.detached();
  return record_op("objective", {&x}, std::move(value), [&f, xv](std::span<const double> gout, GradSlots in) {
    const std::size_t d = f.dim();
    std::vector<double> g(d);
    const auto xs = xv.data();
    for (std::size_t r = 0; r < gout.size(); ++r) {
      if (gout[r] == 0.0) continue;
      f.gradient(xs.subspan(r * d, d), g);
      for (std::size_t j = 0; j < d; ++j) in[0][r * d + j] += gout[r] * g[j];
    }
  });
}

Tensor gradient_on_tape(const Objective& f, const Tensor& x) {
  Tensor value = gradient(f, x);
  const Tensor xv = x.detached();
  return record_op("objective_gradient", {&x}, std::move(value),
                   [&f, xv](std::span<const double> gout, GradSlots in) {
                     const std::size_t d = f.dim();
                     std::vector<double> hv(d);
                     const auto xs = xv.data();
                     for (std::size_t r = 0; r < gout.size() / d; ++r) {
                       const auto v = gout.subspan(r * d, d);
                       if (std::all_of(v.begin(), v.end(), [](double e) { return e == 0.0; })) continue;
                       f.hessian_vector(xs.subspan(r * d, d), v, hv);
                       for (std::size_t j = 0; j < d; ++j) in[0][r * d + j] += hv[j];
                     }
                   });
}

}  // namespace l2e
