#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "l2e/config.hpp"
#include "l2e/errors.hpp"

using namespace l2e;

TEST_CASE("config round trip") {
  ExperimentConfig c;
  CHECK(parse_config(format_config(c)) == c);

  c.meta.T = 7;
  c.meta.gamma = 0.1 + 0.2;
  c.meta.inner.K = 4;
  c.meta.inner.gate = GateMode::Half;
  c.meta.inner.preconditioner = Preconditioner::DiagonalAdagrad;
  c.meta.inner.gradient_mode = GradientMode::FiniteDifference;
  c.meta.op.feed_forward_stream = true;
  c.meta.sharing = Sharing::Shared;
  c.meta.tasks.weights = {{Family::Sphere, 0.25}, {Family::Rosenbrock, 0.75}};
  c.eval.suite = {Family::Discus};
  c.eval.seeds = {42, 18446744073709551615ull};
  c.eval.baselines = {BaselineAlgorithm::PSO};
  c.theory.bias_alphas = {0.1};
  c.out_dir = "/tmp/x y";
  const auto back = parse_config(format_config(c));
  CHECK(back == c);
  CHECK(back.meta.gamma == 0.1 + 0.2);

  const auto dir = std::filesystem::temp_directory_path() / "l2e_config_test";
  std::filesystem::create_directories(dir);
  write_config(dir / "c.txt", c);
  CHECK(read_config(dir / "c.txt") == c);
  const std::string text = format_config(c);
  CHECK(config_keys().size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
}

TEST_CASE("config: comments, blanks, partial files keep defaults") {
  const auto c = parse_config("# header\n\n  T = 5   # inline\nK=3\n");
  CHECK(c.meta.T == 5);
  CHECK(c.meta.inner.K == 3);
  CHECK(c.meta.gamma == ExperimentConfig{}.meta.gamma);
  CHECK(parse_config("") == ExperimentConfig{});
}

TEST_CASE("config: fail-closed errors carry the line") {
  try {
    parse_config("T=5\nfoo=1\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("foo") != std::string::npos);
  }
  CHECK_THROWS_WITH_AS(parse_config("T=5\nT=6\n"), "line 2: duplicate key 'T'", ParseError);
  CHECK_THROWS_WITH_AS(parse_config("\n\njust words\n"), "line 3: expected key=value, got 'just words'", ParseError);
  CHECK_THROWS_WITH_AS(parse_config("gamma=fast\n"), "line 1: gamma: not a number: 'fast'", ParseError);
  CHECK_THROWS_AS(parse_config("sharing=both\n"), ParseError);
  CHECK_THROWS_AS(parse_config("=3\n"), ParseError);
  // well-formed but inconsistent: operator and task dimensions differ
  CHECK_THROWS_AS(parse_config("dim=3\n"), ConfigError);
  CHECK_THROWS_AS(read_config("/nonexistent/config.txt"), ConfigError);
}

TEST_CASE("config_hash is stable and sensitive") {
  ExperimentConfig a, b;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.meta.seed = 1;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(config_hash(parse_config(format_config(b))) == config_hash(b));
}
