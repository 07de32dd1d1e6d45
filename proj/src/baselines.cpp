#include "l2e/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "l2e/errors.hpp"

namespace l2e {
namespace {

Point uniform_point(const Box& box, std::mt19937_64& rng) {
  Point x(box.dim());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::uniform_real_distribution<double>(box.lo[i], box.hi[i])(rng);
  return x;
}

void clamp_to(Point& x, const Box& box) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], box.lo[i], box.hi[i]);
}

StepDiagnostics row(std::size_t step, double best, const std::vector<double>& fit) {
  StepDiagnostics d;
  d.step = step;
  d.best_fit = best;
  double s = 0;
  for (double v : fit) s += v;
  d.mean_fit = s / static_cast<double>(fit.size());
  return d;
}

}  // namespace

std::string_view baseline_name(BaselineAlgorithm a) {
  switch (a) {
    case BaselineAlgorithm::RandomSearch: return "random";
    case BaselineAlgorithm::DE: return "de";
    case BaselineAlgorithm::PSO: return "pso";
  }
  return "unknown";
}

BaselineAlgorithm parse_baseline(std::string_view name) {
  if (name == "random") return BaselineAlgorithm::RandomSearch;
  if (name == "de") return BaselineAlgorithm::DE;
  if (name == "pso") return BaselineAlgorithm::PSO;
  throw ConfigError("unknown baseline '" + std::string(name) + "'");
}

void BaselineConfig::validate() const {
  if (pop == 0) throw ConfigError("baseline pop must be positive");
  if (budget < pop) throw ConfigError("baseline budget must be at least the population size");
  if (algorithm == BaselineAlgorithm::DE && pop < 4) throw ConfigError("DE rand/1 needs a population of at least 4");
  if (!(F > 0) || !(CR >= 0 && CR <= 1)) throw ConfigError("DE needs F > 0 and CR in [0, 1]");
  if (!(velocity_clamp > 0)) throw ConfigError("PSO velocity clamp must be positive");
}

DeState de_init(const Objective& f, std::size_t pop, std::mt19937_64& rng) {
  DeState s;
  for (std::size_t i = 0; i < pop; ++i) {
    s.x.push_back(uniform_point(f.bounds(), rng));
    s.fit.push_back(f.value(s.x.back()));
  }
  return s;
}

Point de_trial(const DeState& s, std::size_t i, const BaselineConfig& cfg, const Box& box, std::mt19937_64& rng,
               std::optional<std::size_t> j_rand) {
  const std::size_t n = s.x.size(), d = s.x[i].size();
  if (n < 4) throw ConfigError("DE rand/1 needs a population of at least 4");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t r[3];
  for (int k = 0; k < 3; ++k) {
    do r[k] = pick(rng);
    while (r[k] == i || (k > 0 && r[k] == r[0]) || (k > 1 && r[k] == r[1]));
  }
  const std::size_t jr = j_rand ? *j_rand : std::uniform_int_distribution<std::size_t>(0, d - 1)(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Point trial = s.x[i];
  for (std::size_t j = 0; j < d; ++j)
    if (j == jr || u(rng) < cfg.CR) trial[j] = s.x[r[0]][j] + cfg.F * (s.x[r[1]][j] - s.x[r[2]][j]);
  clamp_to(trial, box);
  return trial;
}

std::size_t de_step(DeState& s, const Objective& f, const BaselineConfig& cfg, std::mt19937_64& rng,
                    std::size_t limit) {
  const std::size_t n = std::min(limit, s.x.size());
  std::vector<Point> trials;
  for (std::size_t i = 0; i < n; ++i) trials.push_back(de_trial(s, i, cfg, f.bounds(), rng));
  for (std::size_t i = 0; i < n; ++i) {
    const double ft = f.value(trials[i]);
    if (ft <= s.fit[i]) {
      s.x[i] = std::move(trials[i]);
      s.fit[i] = ft;
    }
  }
  return n;
}

Swarm pso_init(const Objective& f, std::size_t pop, std::mt19937_64& rng) {
  Swarm s;
  for (std::size_t i = 0; i < pop; ++i) {
    s.x.push_back(uniform_point(f.bounds(), rng));
    s.v.emplace_back(f.dim(), 0.0);
    s.fit.push_back(f.value(s.x.back()));
    if (s.fit.back() < s.gbest_fit) {
      s.gbest_fit = s.fit.back();
      s.gbest = s.x.back();
    }
  }
  s.pbest = s.x;
  s.pbest_fit = s.fit;
  return s;
}

std::size_t pso_step(Swarm& s, const Objective& f, const BaselineConfig& cfg, std::mt19937_64& rng,
                     std::size_t limit) {
  const Box& box = f.bounds();
  const std::size_t n = std::min(limit, s.x.size()), d = f.dim();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double vmax = cfg.velocity_clamp * (box.hi[j] - box.lo[j]);
      const double v = cfg.w * s.v[i][j] + cfg.c1 * u(rng) * (s.pbest[i][j] - s.x[i][j]) +
                       cfg.c2 * u(rng) * (s.gbest[j] - s.x[i][j]);
      s.v[i][j] = std::clamp(v, -vmax, vmax);
      s.x[i][j] = std::clamp(s.x[i][j] + s.v[i][j], box.lo[j], box.hi[j]);
    }
    s.fit[i] = f.value(s.x[i]);
    if (s.fit[i] < s.pbest_fit[i]) {
      s.pbest_fit[i] = s.fit[i];
      s.pbest[i] = s.x[i];
    }
    if (s.fit[i] < s.gbest_fit) {
      s.gbest_fit = s.fit[i];
      s.gbest = s.x[i];
    }
  }
  return n;
}

BaselineResult random_search(const Objective& f, std::size_t budget, std::mt19937_64& rng, std::size_t row_every) {
  if (budget < 1) throw ConfigError("random search budget must be at least 1");
  if (row_every == 0) row_every = 1;
  BaselineResult r;
  std::vector<double> window;
  for (std::size_t e = 0; e < budget; ++e) {
    Point x = uniform_point(f.bounds(), rng);
    const double v = f.value(x);
    ++r.evaluations;
    window.push_back(v);
    if (v < r.best) {
      r.best = v;
      r.best_x = std::move(x);
    }
    if (window.size() == row_every || e + 1 == budget) {
      r.trajectory.push_back(row(r.trajectory.size(), r.best, window));
      window.clear();
    }
  }
  return r;
}

BaselineResult run_baseline(const Objective& f, const BaselineConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (cfg.algorithm == BaselineAlgorithm::RandomSearch) return random_search(f, cfg.budget, rng, cfg.pop);

  BaselineResult r;
  if (cfg.algorithm == BaselineAlgorithm::DE) {
    DeState s = de_init(f, cfg.pop, rng);
    r.evaluations = cfg.pop;
    auto track = [&] {
      const auto it = std::min_element(s.fit.begin(), s.fit.end());
      if (*it < r.best) {
        r.best = *it;
        r.best_x = s.x[static_cast<std::size_t>(it - s.fit.begin())];
      }
      r.trajectory.push_back(row(r.trajectory.size(), r.best, s.fit));
    };
    track();
    while (r.evaluations < cfg.budget) {
      r.evaluations += de_step(s, f, cfg, rng, cfg.budget - r.evaluations);
      track();
    }
  } else {
    Swarm s = pso_init(f, cfg.pop, rng);
    r.evaluations = cfg.pop;
    auto track = [&] {
      r.best = s.gbest_fit;
      r.best_x = s.gbest;
      r.trajectory.push_back(row(r.trajectory.size(), r.best, s.fit));
    };
    track();
    while (r.evaluations < cfg.budget) {
      r.evaluations += pso_step(s, f, cfg, rng, cfg.budget - r.evaluations);
      track();
    }
  }
  return r;
}

}  // namespace l2e
