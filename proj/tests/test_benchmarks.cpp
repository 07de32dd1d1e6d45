#include <cmath>
#include <map>
#include <thread>

#include "doctest.h"
#include "gradcheck.hpp"
#include "l2e/benchmarks.hpp"
#include "l2e/errors.hpp"

using namespace l2e;
using l2e::testing::close_rel;
using l2e::testing::random_tensor;

namespace {

ObjectiveFunction instance(Family fam, std::size_t dim, std::uint64_t seed, bool rotate = true, double f_opt = 0.0) {
  FunctionDescriptor d;
  d.family = fam;
  d.dim = dim;
  d.seed = seed;
  d.rotate = rotate;
  d.f_opt = f_opt;
  return ObjectiveFunction::make(d);
}

// Central differences of the value, independent of the library's gradient path.
std::vector<double> fd_grad(const Objective& f, std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f.value(x);
    x[i] = xi - h;
    const double fm = f.value(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

std::vector<double> random_point(std::size_t d, std::mt19937_64& rng, double lo = -4, double hi = 4) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> x(d);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace

TEST_CASE("evaluate: spec examples") {
  const ObjectiveFunction sphere(Family::Sphere, {0.0, 0.0}, {}, 0.0);
  CHECK(evaluate(sphere, Tensor::from({0.0, 0.0})).item() == 0.0);
  CHECK(evaluate(sphere, Tensor::from({1.0, 1.0})).item() == 2.0);

  const auto rast = instance(Family::Rastrigin, 5, 11, true, 3.25);
  CHECK(rast.value(rast.shift()) == 3.25);
}

TEST_CASE("evaluate: population shapes and dimension errors") {
  const auto f = instance(Family::Ellipsoidal, 3, 1);
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 4, 3}, rng);
  const Tensor y = evaluate(f, x);
  CHECK(y.shape() == Shape{2, 4});
  CHECK(y.at({1, 2}) == f.value(x.data().subspan((1 * 4 + 2) * 3, 3)));
  CHECK_THROWS_AS(evaluate(f, Tensor(Shape{2, 4, 2}, 0.0)), DimensionError);
  CHECK_THROWS_AS(gradient(f, Tensor(Shape{4}, 0.0)), DimensionError);
}

TEST_CASE("gradient: sphere is 2(x - shift)") {
  const auto f = instance(Family::Sphere, 6, 3);
  std::mt19937_64 rng(2);
  const auto x = random_point(6, rng);
  std::vector<double> g(6);
  f.gradient(x, g);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g[i] == doctest::Approx(2 * (x[i] - f.shift()[i])).epsilon(1e-12));
}

TEST_CASE("gradient: stationarity at every family's optimum") {
  for (Family fam : all_families()) {
    for (std::size_t dim : {2u, 10u}) {
      const auto f = instance(fam, dim, 17 + dim);
      std::vector<double> g(dim);
      f.gradient(f.optimizer(), g);
      double n = 0;
      for (double v : g) n += v * v;
      INFO(family_name(fam) << " dim " << dim);
      CHECK(std::sqrt(n) < 1e-4);
    }
  }
}

TEST_CASE("gradient: analytic families against central-difference oracle") {
  std::mt19937_64 rng(5);
  for (Family fam : {Family::Sphere, Family::Ellipsoidal, Family::Rosenbrock, Family::BentCigar, Family::Discus}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto f = instance(fam, 4, 100 + trial);
      const auto x = random_point(4, rng);
      std::vector<double> g(4);
      f.gradient(x, g);
      // step relative to the function's curvature scale
      const auto fd = fd_grad(f, x, fam == Family::Sphere || fam == Family::Rosenbrock ? 1e-6 : 1e-7);
      double gmax = 0;
      for (double v : g) gmax = std::max(gmax, std::abs(v));
      for (std::size_t i = 0; i < 4; ++i) {
        INFO(family_name(fam) << " i=" << i << " analytic " << g[i] << " fd " << fd[i]);
        CHECK(std::abs(g[i] - fd[i]) <= 1e-4 * std::max(gmax, 1.0));
      }
    }
  }
}

TEST_CASE("gradient: Rosenbrock analytic vs finite differences at rel-tol 1e-4") {
  std::mt19937_64 rng(6);
  for (std::size_t dim : {2u, 10u, 30u}) {
    const auto f = instance(Family::Rosenbrock, dim, 9);
    const auto fd_mode = f.with_gradient_mode(GradientMode::FiniteDifference);
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = random_point(dim, rng, -2, 2);
      std::vector<double> ga(dim), gf(dim);
      f.gradient(x, ga);
      fd_mode.gradient(x, gf);
      const auto oracle = fd_grad(f, x);
      double scale = 0;
      for (double v : ga) scale = std::max(scale, std::abs(v));
      for (std::size_t i = 0; i < dim; ++i) {
        CHECK(std::abs(ga[i] - gf[i]) <= 1e-4 * scale);
        CHECK(std::abs(ga[i] - oracle[i]) <= 1e-4 * scale);
      }
    }
  }
}

TEST_CASE("gradient: finite-difference families and the forced mode") {
  std::mt19937_64 rng(8);
  for (Family fam : {Family::Rastrigin, Family::SharpRidge, Family::LunacekBiRastrigin}) {
    const auto f = instance(fam, 5, 21);
    const auto x = random_point(5, rng);
    std::vector<double> g(5);
    f.gradient(x, g);
    const auto oracle = fd_grad(f, x, 1e-5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(close_rel(g[i], oracle[i], 1e-4, 1e-4));
  }
  const auto sphere = instance(Family::Sphere, 3, 4);
  const auto forced = sphere.with_gradient_mode(GradientMode::FiniteDifference);
  const auto x = random_point(3, rng);
  std::vector<double> ga(3), gf(3);
  sphere.gradient(x, ga);
  forced.gradient(x, gf);
  CHECK(forced.gradient_mode() == GradientMode::FiniteDifference);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(ga[i] - gf[i]) < 1e-6);
}

TEST_CASE("hessian_vector matches differences of the gradient") {
  std::mt19937_64 rng(9);
  for (Family fam : all_families()) {
    const auto f = instance(fam, 4, 31);
    const auto x = random_point(4, rng, -3, 3);
    const auto v = random_point(4, rng, -1, 1);
    std::vector<double> hv(4), gp(4), gm(4);
    f.hessian_vector(x, v, hv);
    const double eps = 1e-5;
    std::vector<double> xp = x, xm = x;
    for (std::size_t i = 0; i < 4; ++i) {
      xp[i] += eps * v[i];
      xm[i] -= eps * v[i];
    }
    f.gradient(xp, gp);
    f.gradient(xm, gm);
    double scale = 1;
    for (std::size_t i = 0; i < 4; ++i) scale = std::max(scale, std::abs(hv[i]));
    for (std::size_t i = 0; i < 4; ++i) {
      const double oracle = (gp[i] - gm[i]) / (2 * eps);
      INFO(family_name(fam) << " i=" << i << " hv " << hv[i] << " oracle " << oracle);
      CHECK(std::abs(hv[i] - oracle) <= 2e-3 * scale);
    }
  }
}

TEST_CASE("property: rotations are orthogonal") {
  std::mt19937_64 rng(10);
  for (std::size_t dim : {1u, 2u, 5u, 10u, 30u}) {
    for (int trial = 0; trial < 4; ++trial) {
      const auto f = instance(Family::Ellipsoidal, dim, rng());
      const auto& r = f.rotation();
      double worst = 0;
      for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
          double acc = 0;
          for (std::size_t k = 0; k < dim; ++k) acc += r[k * dim + i] * r[k * dim + j];
          worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
        }
      CHECK(worst < 1e-10);
    }
  }
}

TEST_CASE("property: sphere is rotation invariant") {
  std::mt19937_64 rng(12);
  const auto rotated = instance(Family::Sphere, 7, 44, true);
  const ObjectiveFunction plain(Family::Sphere, rotated.shift(), {}, 0.0);
  for (int k = 0; k < 50; ++k) {
    const auto x = random_point(7, rng, -5, 5);
    CHECK(std::abs(rotated.value(x) - plain.value(x)) <= 1e-12 * std::max(1.0, plain.value(x)));
  }
}

TEST_CASE("property: minima equal f_opt at the known optimizer") {
  std::mt19937_64 rng(13);
  for (Family fam : all_families()) {
    for (int trial = 0; trial < 10; ++trial) {
      const double f_opt = std::uniform_real_distribution<double>(-100, 100)(rng);
      const auto f = instance(fam, 1 + trial * 3, rng(), true, f_opt);
      const bool rastrigin_like = fam == Family::Rastrigin || fam == Family::LunacekBiRastrigin;
      CHECK(std::abs(f.value(f.optimizer()) - f_opt) <= (rastrigin_like ? 1e-8 : 1e-10));
      if (fam != Family::LunacekBiRastrigin) CHECK(f.value(f.shift()) == f_opt);
      // nearby points are never better
      auto x = f.optimizer();
      for (auto& v : x) v += std::uniform_real_distribution<double>(-0.01, 0.01)(rng);
      CHECK(f.value(x) >= f_opt);
    }
  }
}

TEST_CASE("sample_task: degenerate distribution, determinism, frequencies") {
  TaskDistribution sphere4;
  sphere4.dims = {4};
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto f = sample_task(sphere4, rng);
    CHECK(f.family() == Family::Sphere);
    CHECK(f.dim() == 4);
  }

  TaskDistribution mix;
  mix.weights = {{Family::Sphere, 0.5}, {Family::Rastrigin, 0.3}, {Family::Rosenbrock, 0.2}};
  mix.dims = {2, 10};
  std::mt19937_64 a(77), b(77);
  const auto fa = sample_task(mix, a), fb = sample_task(mix, b);
  CHECK(fa.family() == fb.family());
  CHECK(fa.shift() == fb.shift());
  CHECK(fa.rotation() == fb.rotation());

  // multinomial oracle: each count within 3σ of N p
  const int n = 10000;
  std::map<Family, int> counts;
  std::mt19937_64 r(5);
  for (int i = 0; i < n; ++i) ++counts[sample_descriptor(mix, r).family];
  for (const auto& [fam, p] : mix.weights) {
    const double sigma = std::sqrt(n * p * (1 - p));
    INFO(family_name(fam) << " count " << counts[fam]);
    CHECK(std::abs(counts[fam] - n * p) <= 3 * sigma);
  }
}

TEST_CASE("sample_task: validation") {
  TaskDistribution bad;
  bad.weights = {{Family::Sphere, 0.7}, {Family::Rastrigin, 0.7}};
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(sample_task(bad, rng), ConfigError);
  bad.weights = {{Family::Sphere, 1.5}, {Family::Rastrigin, -0.5}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  TaskDistribution nodims;
  nodims.dims = {};
  CHECK_THROWS_AS(nodims.validate(), ConfigError);
}

TEST_CASE("descriptor round trip reconstructs the function") {
  FunctionDescriptor d;
  d.family = Family::LunacekBiRastrigin;
  d.dim = 6;
  d.seed = 0xdeadbeefcafeULL;
  d.f_opt = -12.3456789012345;
  d.surrogate_shift = true;
  const auto text = d.to_string();
  const auto back = FunctionDescriptor::parse(text);
  CHECK(back == d);
  const auto f1 = ObjectiveFunction::make(d), f2 = ObjectiveFunction::make(back);
  std::mt19937_64 rng(3);
  for (int k = 0; k < 10; ++k) {
    const auto x = random_point(6, rng);
    CHECK(f1.value(x) == f2.value(x));
  }
  CHECK(f1.descriptor() == d);
  CHECK(parse_family("Rastrigin") == Family::Rastrigin);
  CHECK_THROWS_AS(parse_family("Ackley"), ConfigError);
  CHECK_THROWS_AS(FunctionDescriptor::parse("family=Sphere"), ConfigError);
  CHECK_THROWS_AS(FunctionDescriptor::parse("family=Sphere dim=2 colour=red"), ConfigError);
}

TEST_CASE("surrogate shift is a small smooth perturbation") {
  FunctionDescriptor d;
  d.family = Family::Rastrigin;
  d.dim = 3;
  d.seed = 8;
  const auto base = ObjectiveFunction::make(d);
  d.surrogate_shift = true;
  const auto shifted = ObjectiveFunction::make(d);
  std::mt19937_64 rng(4);
  double max_diff = 0, lo = INFINITY, hi = -INFINITY;
  for (int k = 0; k < 500; ++k) {
    const auto x = random_point(3, rng, -5, 5);
    const double b = base.value(x);
    lo = std::min(lo, b);
    hi = std::max(hi, b);
    max_diff = std::max(max_diff, std::abs(shifted.value(x) - b));
  }
  CHECK(max_diff > 0);
  CHECK(max_diff <= 0.1 * (hi - lo));
  const auto x = random_point(3, rng);
  std::vector<double> g(3);
  shifted.gradient(x, g);
  const auto oracle = fd_grad(shifted, x, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(close_rel(g[i], oracle[i], 1e-4, 1e-4));
}

TEST_CASE("CountingObjective counts evaluations and tracks the best") {
  const auto f = instance(Family::Sphere, 2, 1);
  CountingObjective c(f);
  const Tensor x = Tensor::matrix({{3, 3}, {0, 0}, {4, 4}, {1, 1}});
  const Tensor y = evaluate(c, x);
  CHECK(c.evaluations() == 4);
  CHECK(c.best() == std::min({y[0], y[1], y[2], y[3]}));
  CHECK(c.history().front().first == 1);
  for (std::size_t i = 1; i < c.history().size(); ++i) CHECK(c.history()[i].second < c.history()[i - 1].second);
  gradient(c, x);
  CHECK(c.gradient_calls() == 4);
  CHECK(c.evaluations() == 4);
}

TEST_CASE("tape ops: objective and gradient backward rules") {
  std::mt19937_64 rng(15);
  for (Family fam : {Family::Ellipsoidal, Family::Rosenbrock}) {
    const auto f = instance(fam, 3, 2);
    const Tensor x = random_tensor({2, 2, 3}, rng, -1.5, 1.5);
    l2e::testing::check_gradients([&](const std::vector<Tensor>& in) { return evaluate_on_tape(f, in[0]); }, {x}, 1,
                                  1e-7, 1e-4, 1e-3);
    l2e::testing::check_gradients([&](const std::vector<Tensor>& in) { return gradient_on_tape(f, in[0]); }, {x}, 2,
                                  1e-7, 1e-4, 1e-3);
  }
  const auto rast = instance(Family::Rastrigin, 2, 3);
  const Tensor x = random_tensor({3, 2}, rng);
  l2e::testing::check_gradients([&](const std::vector<Tensor>& in) { return gradient_on_tape(rast, in[0]); }, {x}, 3,
                                1e-5, 1e-2, 1e-2);
}

TEST_CASE("concurrent evaluation is deterministic") {
  const auto f = instance(Family::LunacekBiRastrigin, 10, 5);
  std::mt19937_64 rng(16);
  const Tensor x = random_tensor({64, 10}, rng, -5, 5);
  const Tensor ref = evaluate(f, x);
  std::vector<Tensor> results(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) threads.emplace_back([&, t] { results[t] = evaluate(f, x); });
  for (auto& th : threads) th.join();
  for (const auto& r : results) CHECK(r.values() == ref.values());
}
