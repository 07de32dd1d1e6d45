#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "l2e/ops.hpp"
#include "l2e/param_store.hpp"
#include "svd_oracle.hpp"

using namespace l2e;
using l2e::testing::check_gradients;
using l2e::testing::random_tensor;

TEST_CASE("matmul examples") {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(matmul(eye, m).values() == m.values());

  const Tensor r = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r.item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3}));
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
  }
}

TEST_CASE("matmul batch broadcasting") {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({4, 2, 3}, rng);
  const Tensor b = random_tensor({3, 5}, rng);
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{4, 2, 5});
  const Tensor a1 = slice(a, 0, 1, 2).reshaped({2, 3});
  const Tensor c1 = matmul(a1, b);
  for (std::size_t i = 0; i < 10; ++i) CHECK(c[10 + i] == doctest::Approx(c1[i]).epsilon(1e-14));
}

TEST_CASE("gradient of sum(A x B) w.r.t. A is the broadcast row sums of B") {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  Tape tape;
  const Tensor ta = tape.watch(a);
  const Gradients g = tape.backward(sum(matmul(ta, b)));
  const Tensor ga = g.of(ta);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p) {
      const double expected = b.at({p, 0}) + b.at({p, 1});
      Tensor plus = a, minus = a;
      plus.mutable_data()[i * 4 + p] += h;
      minus.mutable_data()[i * 4 + p] -= h;
      const double fd = (sum(matmul(plus, b)).item() - sum(matmul(minus, b)).item()) / (2 * h);
      CHECK(ga.at({i, p}) == doctest::Approx(expected).epsilon(1e-12));
      CHECK(fd == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("element-wise activations") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(l2e::tanh(Tensor::scalar(0)).item() == 0.0);

  Tape tape;
  const Tensor x = tape.watch(Tensor::scalar(0));
  const double analytic = tape.backward(sigmoid(x)).of(x).item();
  const double h = 1e-6;
  const double fd = (sigmoid(Tensor::scalar(h)).item() - sigmoid(Tensor::scalar(-h)).item()) / (2 * h);
  CHECK(analytic == 0.25);
  CHECK(fd == doctest::Approx(0.25).epsilon(1e-8));
}

TEST_CASE("activation ranges are open intervals") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({200}, rng, -30, 30);
  for (double v : sigmoid(x).data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  for (double v : l2e::tanh(scale(x, 0.5)).data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("broadcast errors") {
  CHECK_THROWS_AS(add(Tensor(Shape{2, 3}), Tensor(Shape{2, 2})), DimensionError);
  const Tensor r = add(Tensor(Shape{2, 3}, 1.0), Tensor::from({1, 2, 3}));
  CHECK(r.values() == std::vector<double>{2, 3, 4, 2, 3, 4});
}

TEST_CASE("softmax examples") {
  const Tensor a = softmax(Tensor::from({0, 0}), 0);
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);
  const Tensor b = softmax(Tensor::from({1000, 1000}), 0);
  CHECK(b[0] == 0.5);
  CHECK(b[1] == 0.5);
  const Tensor c = softmax(Tensor::from({std::log(1.0), std::log(3.0)}), 0);
  CHECK(c[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(c[1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one on any axis") {
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({3, 4, 5}, rng, -20, 20);
  for (int axis : {0, 1, 2}) {
    const Tensor y = softmax(x, axis);
    const Tensor s = sum(y, axis);
    for (double v : s.data()) CHECK(std::abs(v - 1.0) < 1e-12);
    for (double v : y.data()) CHECK(v > 0.0);
  }
}

TEST_CASE("layer norm examples") {
  const Tensor gain(Shape{2}, 1.0), bias(Shape{2}, 0.0);
  const Tensor y = layer_norm(Tensor::matrix({{1, 3}}), gain, bias);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-5));

  const Tensor z = layer_norm(Tensor::matrix({{4, 4, 4}}), Tensor(Shape{3}, 1.0), Tensor(Shape{3}, 0.0));
  for (double v : z.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(layer_norm(Tensor(Shape{3, 1}), Tensor(Shape{1}, 1.0), Tensor(Shape{1})), DimensionError);
}

TEST_CASE("layer norm backward matches finite differences at 1e-5") {
  std::mt19937_64 rng(21);
  check_gradients(
      [](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2]); },
      {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)}, 4, 1e-6, 1e-5, 1e-7);
}

TEST_CASE("reverse mode agrees with central differences for every op") {
  std::mt19937_64 rng(1234);
  auto r = [&](Shape s) { return random_tensor(s, rng); };
  using V = std::vector<Tensor>;
  SUBCASE("add/sub/mul/div with broadcasting") {
    check_gradients([](const V& in) { return add(in[0], in[1]); }, {r({2, 3, 4}), r({4})});
    check_gradients([](const V& in) { return sub(in[0], in[1]); }, {r({2, 3, 1}), r({3, 4})});
    check_gradients([](const V& in) { return mul(in[0], in[1]); }, {r({2, 3, 4}), r({2, 3, 1})});
    check_gradients([](const V& in) { return div(in[0], add_scalar(square(in[1]), 1.0)); }, {r({3, 4}), r({3, 4})});
  }
  SUBCASE("unary") {
    check_gradients([](const V& in) { return sigmoid(in[0]); }, {r({3, 4})});
    check_gradients([](const V& in) { return l2e::tanh(in[0]); }, {r({3, 4})});
    check_gradients([](const V& in) { return relu(in[0]); }, {r({3, 4})});
    check_gradients([](const V& in) { return softplus(in[0]); }, {r({3, 4})});
    check_gradients([](const V& in) { return scale(in[0], -1.7); }, {r({3, 4})});
    check_gradients([](const V& in) { return l2e::exp(in[0]); }, {r({3, 4})});
    check_gradients([](const V& in) { return log1p(square(in[0])); }, {r({3, 4})});
    check_gradients([](const V& in) { return l2e::sqrt(add_scalar(square(in[0]), 0.5)); }, {r({3, 4})});
  }
  SUBCASE("linear algebra") {
    check_gradients([](const V& in) { return matmul(in[0], in[1]); }, {r({2, 3, 4}), r({4, 5})});
    check_gradients([](const V& in) { return matmul(in[0], transpose(in[1])); }, {r({2, 3, 4}), r({2, 5, 4})});
    check_gradients([](const V& in) { return linear(in[0], in[1], in[2]); }, {r({2, 3, 4}), r({5, 4}), r({5})});
  }
  SUBCASE("structure and reductions") {
    check_gradients([](const V& in) { return slice(in[0], -1, 1, 3); }, {r({2, 3, 4})});
    check_gradients([](const V& in) { return concat({in[0], in[1]}, -1); }, {r({2, 3}), r({2, 2})});
    check_gradients([](const V& in) { return sum(in[0], 1, true); }, {r({2, 3, 4})});
    check_gradients([](const V& in) { return mean(in[0], 0); }, {r({2, 3, 4})});
    check_gradients([](const V& in) { return reshape(in[0], {6, 4}); }, {r({2, 3, 4})});
    check_gradients([](const V& in) { return softmax(in[0], -1); }, {r({2, 3, 4})});
    check_gradients([](const V& in) { return softmax(in[0], 1); }, {r({2, 3, 4})});
    check_gradients([](const V& in) { return clamp(in[0], Tensor::from({-1, -1.5}), Tensor::from({1, 1.5})); },
                    {r({5, 2})});
  }
}

TEST_CASE("backward examples") {
  Tape tape;
  std::mt19937_64 rng(2);
  const Tensor w0 = random_tensor({2, 3}, rng);
  const Tensor w = tape.watch(w0);
  const Tensor ones = tape.backward(sum(w)).of(w);
  for (double v : ones.data()) CHECK(v == 1.0);
  const Tensor two_w = tape.backward(sum(mul(w, w))).of(w);
  for (std::size_t i = 0; i < w0.size(); ++i) CHECK(two_w[i] == 2 * w0[i]);
}

TEST_CASE("unrolled linear recurrence derivative matches the closed form") {
  const double a0 = 0.9, x0 = 1.7;
  const int steps = 10;
  Tape tape;
  const Tensor a = tape.watch(Tensor::scalar(a0));
  Tensor x = Tensor::scalar(x0);
  for (int k = 0; k < steps; ++k) x = mul(a, x);
  const double grad = tape.backward(x).of(a).item();
  const double expected = steps * std::pow(a0, steps - 1) * x0;
  CHECK(grad == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("backward contract errors") {
  Tape tape;
  const Tensor w = tape.watch(Tensor(Shape{3}, 1.0));
  CHECK_THROWS_AS(tape.backward(mul(w, w)), ContractError);

  const Tensor bad = l2e::log(scale(w, 0.0));  // log(0) = -inf, gradient 1/0
  try {
    tape.backward(sum(mul(bad, Tensor(Shape{3}, 0.0))));
    tape.backward(sum(bad));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("node") != std::string::npos);
  }
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    std::mt19937_64 rng(77);
    const Tensor a = random_tensor({4, 4}, rng);
    const Tensor b = random_tensor({4, 4}, rng);
    Tape tape;
    const Tensor ta = tape.watch(a);
    const Tensor loss = sum(l2e::tanh(matmul(ta, softmax(b, -1))));
    return std::pair{loss.item(), tape.backward(loss).of(ta).values()};
  };
  const auto r1 = run();
  const auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("spectral norm examples") {
  CHECK(std::abs(spectral_norm(Tensor::matrix({{3, 0}, {0, 1}}), 50) - 3.0) < 1e-8);
  CHECK(std::abs(spectral_norm(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), 5) - 1.0) < 1e-12);
  CHECK(spectral_norm(Tensor(Shape{3, 2}, 0.0), 10) == 0.0);
  CHECK_THROWS_AS(spectral_norm(Tensor(Shape{3}), 10), DimensionError);
  CHECK_THROWS_AS(spectral_norm(Tensor(Shape{2, 2}), 0), ContractError);
}

TEST_CASE("spectral norm matches a Jacobi SVD oracle") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor w = random_tensor({8, 8}, rng, -1, 1);
    const auto sv = l2e::testing::jacobi_singular_values(w.values(), 8, 8);
    CHECK(std::abs(spectral_norm(w, 500, 42) - sv[0]) < 1e-6);
  }
}

TEST_CASE("spectral norm estimate is non-decreasing in iterations") {
  std::mt19937_64 rng(10);
  const Tensor w = random_tensor({6, 9}, rng, -1, 1);
  double prev = 0;
  for (int it = 1; it <= 40; ++it) {
    const double s = spectral_norm(w, it, 99);
    CHECK(s >= prev - 1e-14);
    prev = s;
  }
}

TEST_CASE("param store") {
  ParamStore store;
  store.add("block0.embed.weight", Tensor(Shape{2, 3}, 0.5));
  store.add("block0.ln.gain", Tensor(Shape{3}, 1.0), false);
  CHECK_THROWS_AS(store.add("block0.ln.gain", Tensor()), ContractError);
  CHECK(store.trainable_scalars() == 6);

  Tape tape;
  const ParamStore bound = store.bind(tape);
  const Tensor loss = sum(square(bound.get("block0.embed.weight")));
  const GradientMap grads = backward(loss, bound);
  CHECK(grads.size() == 1);
  for (double v : grads.at("block0.embed.weight").data()) CHECK(v == 1.0);

  ParamStore other;
  other.add("unused", Tensor(Shape{2}, 3.0));
  other.add("used", Tensor(Shape{2}, 3.0));
  Tape t2;
  const ParamStore b2 = other.bind(t2);
  const GradientMap g2 = backward(sum(b2.get("used")), b2);
  CHECK(g2.at("unused").values() == std::vector<double>{0, 0});
}

TEST_CASE("checkpoint round trip") {
  std::mt19937_64 rng(4);
  ParamStore store;
  store.add("block0.proj.weight", random_tensor({3, 2}, rng));
  store.add("block1.proj.bias", random_tensor({3}, rng));
  store.add("frozen", Tensor::scalar(-0.0), false);
  const auto dir = std::filesystem::temp_directory_path() / "l2e_ckpt_test";
  const auto file = dir / "params.ckpt";
  save_checkpoint(file, store, {{"config_hash", "abc123"}});
  const Checkpoint ck = load_checkpoint(file);
  CHECK(ck.params == store);
  CHECK(ck.manifest.at("config_hash") == "abc123");
  CHECK(ck.manifest.at("format_version") == "1");
  std::filesystem::remove_all(dir);
}
