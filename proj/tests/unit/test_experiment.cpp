#include <doctest.h>

#include <cmath>

#include "cimdse/experiment.hpp"
#include "support.hpp"

using namespace cimdse;

namespace {

// Tail sum built from Pascal's triangle.
double sign_oracle(std::size_t w, std::size_t l) {
  const std::size_t n = w + l;
  std::vector<double> row{1.0};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> next(row.size() + 1, 0.0);
    for (std::size_t k = 0; k < row.size(); ++k) {
      next[k] += row[k] / 2;
      next[k + 1] += row[k] / 2;
    }
    row = next;
  }
  double p = 0;
  for (std::size_t k = w; k <= n; ++k) p += row[k];
  return p;
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.name = "small";
  c.target_space = test::data("schemas/resnet50_22nm.json");
  c.target_model = "ResNet-50";
  c.base_space = test::data("schemas/vitb_22nm.json");
  c.base_model = "ViT-B";
  c.constraints = {{Metric::area, 2500}, {Metric::power, 200}};
  c.algorithms = {Algorithm::sa, Algorithm::rs};
  c.seeds = 4;
  c.optimizer.iterations = 10;
  c.optimizer.batch_size = 16;
  PruningConfig p;
  p.recovery_iter = 6;
  p.deprune_stop_iter = 4;
  c.pruning = p;
  return c;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("sign test matches the binomial tail") {
  for (std::size_t w = 0; w <= 30; ++w)
    for (std::size_t l = 0; l <= 30; l += 3) CHECK(sign_test_p_value(w, l) == doctest::Approx(sign_oracle(w, l)).epsilon(1e-12));
  CHECK(sign_test_p_value(0, 0) == 1);
  CHECK(sign_test_p_value(5, 0) == doctest::Approx(1.0 / 32));
}

TEST_CASE("nearest-rank percentile") {
  CHECK(percentile({5, 1, 3, 2, 4}, 0.95) == 5);
  CHECK(percentile({5, 1, 3, 2, 4}, 0.5) == 3);
  CHECK(percentile({7}, 0.95) == 7);
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  CHECK(percentile(v, 0.95) == 95);
  CHECK(percentile({}, 0.5) == 0);
  CHECK_THROWS_AS(percentile({1, 2}, 0.0), Error);
}

TEST_CASE("tolerance band") {
  CHECK(within_tolerance(99.0, 100.0, Direction::maximize, 0.01));
  CHECK_FALSE(within_tolerance(98.9, 100.0, Direction::maximize, 0.01));
  CHECK(within_tolerance(101.0, 100.0, Direction::minimize, 0.01));
  CHECK_FALSE(within_tolerance(101.1, 100.0, Direction::minimize, 0.01));
}

TEST_CASE("exhaustive optimum agrees with a direct scan") {
  const auto s = test::space("resnet50_22nm");
  const auto w = make_workload("ResNet-50");
  const std::vector<Constraint> cons{{Metric::area, 2500}, {Metric::power, 200}};
  double best = -1;
  std::size_t n = 0;
  for (const auto& p : enumerate(s)) {
    const auto r = simulate(p, w, SurrogateConfig{});
    if (r.area_mm2 <= 2500 && r.power_mW <= 200) {
      best = std::max(best, r.fom);
      ++n;
    }
  }
  std::size_t feasible = 0;
  const auto got = exhaustive_optimum(s, w, SurrogateConfig{}, Objective{}, cons, &feasible);
  REQUIRE(got);
  CHECK(*got == best);
  CHECK(feasible == n);
  const std::vector<Constraint> none{{Metric::area, 1e-6}};
  CHECK_FALSE(exhaustive_optimum(s, w, SurrogateConfig{}, Objective{}, none));
}

TEST_CASE("paired experiment is deterministic across thread counts") {
  auto c = small_config();
  c.threads = 1;
  const auto a = run_experiment(c);
  c.threads = 3;
  const auto b = run_experiment(c);
  CHECK(runs_csv(a) == runs_csv(b));
  CHECK(summary_csv(a) == summary_csv(b));
  REQUIRE(a.runs.size() == 8);
  REQUIRE(a.summary.size() == 2);
  for (const auto& r : a.runs) {
    REQUIRE(r.pruned);
    CHECK(r.unpruned.evals_to_reach <= r.unpruned.total_evals);
    if (r.unpruned.reached) CHECK(within_tolerance(*r.unpruned.best, a.optimum, Direction::maximize, 0.01));
  }
  for (const auto& s : a.summary) {
    CHECK(s.runs == 4);
    CHECK(s.wins + s.losses <= 4);
    CHECK(s.sign_test_p == doctest::Approx(sign_test_p_value(s.wins, s.losses)));
  }
  CHECK(runtime_table(a).find("SA") != std::string::npos);
}

TEST_CASE("config files load and validate") {
  const auto c = load_experiment_config(test::data("config/swint_prune_fom.json"));
  CHECK(c.seeds == 50);
  CHECK(c.target_model == "Swin-T");
  CHECK(c.base_model == "ViT-B");
  REQUIRE(c.pruning);
  CHECK(c.pruning->rho == doctest::Approx(0.2));
  CHECK(std::filesystem::exists(c.target_space));
  const auto b = load_experiment_config(test::data("config/resnet50_baseline.json"));
  CHECK_FALSE(b.pruning);
  CHECK(b.algorithms.size() == 4);

  auto bad = small_config();
  bad.seeds = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

}  // TEST_SUITE
