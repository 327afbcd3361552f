#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "cimdse/optimizer.hpp"
#include "cimdse/result_io.hpp"
#include "support.hpp"

using namespace cimdse;

namespace {

PpaRecord rec(double area, double power) {
  PpaRecord r;
  r.area_mm2 = area;
  r.power_mW = power;
  return r;
}

// Score = -(x-3)^2 - (y-5)^2 as a fom-like record, everything feasible.
PpaRecord bowl(const DesignPoint& p) {
  const double x = static_cast<double>(p.integer("x")), y = static_cast<double>(p.integer("y"));
  PpaRecord r;
  r.area_mm2 = 1;
  r.power_mW = 1;
  r.fom = 100 - (x - 3) * (x - 3) - (y - 5) * (y - 5);
  return r;
}

DesignSpace grid() {
  return DesignSpace({test::ordinal("x", {0, 1, 2, 3, 4, 5, 6, 7}), test::ordinal("y", {0, 1, 2, 3, 4, 5, 6, 7})}, {});
}

}  // namespace

TEST_SUITE("optimizer") {

TEST_CASE("feasibility") {
  const std::vector<Constraint> c{{Metric::area, 2500}, {Metric::power, 200}};
  CHECK(feasible(rec(2400, 150), c));
  CHECK(feasible(rec(2500, 200), c));
  CHECK_FALSE(feasible(rec(2400, 201), c));
  CHECK_FALSE(feasible(rec(2600, 100), c));
  CHECK_THROWS_AS(validate_constraints(std::vector<Constraint>{{Metric::fom, 1}}), Error);
  CHECK_THROWS_AS(validate_constraints(std::vector<Constraint>{{Metric::area, 0}}), Error);
}

TEST_CASE("objective scores") {
  PpaRecord r;
  r.power_mW = 12;
  r.fom = 3;
  CHECK(Objective{}.score(r) == 3);
  CHECK(Objective{Metric::power, Direction::minimize}.score(r) == -12);
}

TEST_CASE("metropolis acceptance matches exp(-d/T)") {
  Rng rng(123);
  for (auto [d, t] : {std::pair{1.0, 1.0}, {0.5, 2.0}, {3.0, 1.5}}) {
    const double expect = std::exp(-d / t);
    CHECK(acceptance_probability(d, t) == doctest::Approx(expect));
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += metropolis_accept(d, t, rng);
    CHECK(std::abs(static_cast<double>(hits) / n - expect) < 0.02);
  }
  CHECK(acceptance_probability(-1, 1) == 1);
}

TEST_CASE("SA proposals") {
  Rng rng(5);
  DesignSpace two({test::ordinal("x", {32, 64})}, {});
  DesignPoint p({{"x", std::int64_t{32}}});
  for (int i = 0; i < 50; ++i) {
    const auto q = sa_propose(p, two, rng);
    CHECK(q.integer("x") == 64);
  }
  const auto s = test::space("resnet50_22nm");
  auto cur = s.default_point();
  for (int i = 0; i < 2000; ++i) {
    const auto q = sa_propose(cur, s, rng);
    CHECK(check_validity(q, s).ok);
    CHECK_FALSE(q == cur);
    cur = q;
  }
  double t = 10;
  for (int i = 0; i < 20; ++i) {
    const double nt = SaConfig{}.cooling * t;
    CHECK(nt < t);
    t = nt;
  }
}

TEST_CASE("GA children") {
  Rng rng(9);
  const auto s = test::space("resnet50_22nm");
  const auto all = enumerate(s);
  GaConfig g;
  g.mutation_rate = 0;
  std::vector<DesignPoint> same{all[17], all[17]};
  for (const auto& c : ga_step(same, s, g, 16, rng)) CHECK(c == all[17]);

  DesignSpace two({test::ordinal("x", {0, 1})}, {});
  GaConfig flip;
  flip.mutation_rate = 1;
  std::vector<DesignPoint> zeros{DesignPoint({{"x", std::int64_t{0}}}), DesignPoint({{"x", std::int64_t{0}}})};
  for (const auto& c : ga_step(zeros, two, flip, 32, rng)) CHECK(c.integer("x") == 1);

  // Membership audit: each value comes from a parent or is an admissible
  // mutation; children satisfy the rule.
  std::size_t checked = 0;
  while (checked < 10000) {
    std::vector<DesignPoint> parents{all[rng() % all.size()], all[rng() % all.size()]};
    for (const auto& c : ga_step(parents, s, GaConfig{}, 50, rng)) {
      CHECK(check_validity(c, s).ok);
      for (const auto& [name, v] : c.assignments()) {
        const bool from_parent = v == parents[0].at(name) || v == parents[1].at(name);
        CHECK((from_parent || s.param(name).admits(v)));
      }
      ++checked;
    }
  }
}

TEST_CASE("TPE densities favour good-only values") {
  const auto s = grid();
  HistoryBuffer h;
  std::size_t idx = 0;
  auto add = [&](std::int64_t x, std::int64_t y, double score) {
    HistoryEntry e;
    e.point = DesignPoint({{"x", x}, {"y", y}});
    e.feasible = true;
    e.score = score;
    e.eval_index = idx++;
    h.add(e);
  };
  for (std::int64_t i = 0; i < 8; ++i) add(0, i, -100 - static_cast<double>(i));
  add(7, 7, 10);
  add(7, 6, 9);
  const auto d = tpe_densities(h, s, 0.2);
  CHECK(d.good_count == 2);
  CHECK(d.good.at("x")[7] > 1.0 / 8);
  CHECK(d.good.at("x")[7] > d.bad.at("x")[7]);

  Rng rng(4);
  TpeConfig cfg;
  // Six unseen points have x = 7; uniform sampling of 8 would expect one.
  const auto prop = tpe_propose(h, s, cfg, 8, rng);
  CHECK_FALSE(prop.uniform_fallback);
  REQUIRE(prop.points.size() == 8);
  std::size_t x7 = 0;
  for (const auto& p : prop.points) x7 += p.integer("x") == 7;
  CHECK(x7 >= 4);

  HistoryBuffer bad;
  HistoryEntry e;
  e.point = DesignPoint({{"x", std::int64_t{1}}, {"y", std::int64_t{1}}});
  e.feasible = false;
  e.score = -std::numeric_limits<double>::infinity();
  bad.add(e);
  CHECK(tpe_propose(bad, s, cfg, 8, rng).uniform_fallback);
}

TEST_CASE("history deduplicates and tracks the best") {
  HistoryBuffer h;
  HistoryEntry a;
  a.point = DesignPoint({{"x", std::int64_t{1}}});
  a.feasible = true;
  a.score = 1;
  h.add(a);
  HistoryEntry b = a;
  b.point = DesignPoint({{"x", std::int64_t{2}}});
  b.score = 1;
  b.eval_index = 1;
  h.add(b);
  REQUIRE(h.best_feasible());
  CHECK(h.best_feasible()->point.integer("x") == 1);
  CHECK(h.find(a.point) != nullptr);
  CHECK(h.top_feasible(5).size() == 2);
}

TEST_CASE("every algorithm finds the bowl optimum and is reproducible") {
  const auto s = grid();
  for (auto alg : {Algorithm::rs, Algorithm::sa, Algorithm::ga, Algorithm::tpe}) {
    OptimizerConfig c;
    c.algorithm = alg;
    c.iterations = 20;
    c.batch_size = 8;
    c.seed = 2;
    FunctionEvaluator e1(bowl), e2(bowl);
    const auto r1 = run(s, Objective{}, {}, c, e1);
    const auto r2 = run(s, Objective{}, {}, c, e2);
    CHECK(r1.status == RunStatus::ok);
    REQUIRE(r1.best);
    CHECK(r1.best->record.fom == 100);
    CHECK(to_json(r1) == to_json(r2));
    CHECK(convergence_csv(r1, Objective{}) == convergence_csv(r2, Objective{}));
    CHECK(r1.trace.total() == r1.history.size());
  }
}

TEST_CASE("RS with full coverage matches enumeration") {
  const auto s = test::space("resnet50_22nm");
  const auto w = make_workload("ResNet-50");
  const std::vector<Constraint> cons{{Metric::area, 2500}, {Metric::power, 200}};
  double best = 0;
  for (const auto& p : enumerate(s)) {
    const auto r = simulate(p, w, SurrogateConfig{});
    if (feasible(r, cons)) best = std::max(best, r.fom);
  }
  OptimizerConfig c;
  c.algorithm = Algorithm::rs;
  c.batch_size = 64;
  c.iterations = 5280 / 64 + 1;
  SurrogateEvaluator ev(w, SurrogateConfig{});
  const auto r = run(s, Objective{}, cons, c, ev);
  CHECK(r.history.size() == 5280);
  REQUIRE(r.best);
  CHECK(r.best->record.fom == best);
}

TEST_CASE("infeasible everywhere") {
  const auto s = grid();
  OptimizerConfig c;
  c.iterations = 3;
  c.batch_size = 4;
  FunctionEvaluator e([](const DesignPoint&) { return rec(10, 10); });
  const std::vector<Constraint> cons{{Metric::area, 1}};
  const auto r = run(s, Objective{}, cons, c, e);
  CHECK(r.status == RunStatus::exhausted_infeasible);
  CHECK_FALSE(r.best);
}

TEST_CASE("config validation") {
  OptimizerConfig c;
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(algorithm_from_string("Simulated Annealing") == Algorithm::sa);
  CHECK_THROWS_AS(algorithm_from_string("hill"), Error);
  OptimizerConfig d;
  d.seed = 9;
  d.algorithm = Algorithm::tpe;
  CHECK(optimizer_config_from_json(to_json(d)) == d);
}

}  // TEST_SUITE
