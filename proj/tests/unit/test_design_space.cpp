#include <doctest.h>

#include <set>

#include "support.hpp"

using namespace cimdse;

namespace {

// Straight product over the raw schema file, rule applied by hand.
std::size_t oracle_count(const std::string& name) {
  const auto j = read_json_file(test::data("schemas/" + name + ".json"));
  std::size_t total = 1, row_ok = 0;
  std::vector<std::int64_t> rows, levels;
  for (const auto& p : j.at("params")) {
    const auto n = p.at("name").get<std::string>();
    if (n == "rowACIM") rows = p.at("values").get<std::vector<std::int64_t>>();
    else if (n == "levelADC") levels = p.at("values").get<std::vector<std::int64_t>>();
    else total *= p.at("values").size();
  }
  for (auto r : rows)
    for (auto l : levels)
      if (r >= (std::int64_t{1} << l)) ++row_ok;
  return total * row_ok;
}

}  // namespace

TEST_SUITE("design_space") {

TEST_CASE("shipped spaces enumerate to the table sizes") {
  CHECK(count_valid(test::space("resnet50_22nm")) == 5280);
  CHECK(count_valid(test::space("swint_22nm")) == 42240);
  CHECK(count_valid(test::space("vitb_22nm")) == 42240);
  for (const char* n : {"resnet50_22nm", "swint_22nm", "vitb_22nm"}) CHECK(count_valid(test::space(n)) == oracle_count(n));
}

TEST_CASE("enumeration is lexicographic in declaration order and rule-clean") {
  const auto s = test::space("resnet50_22nm");
  const auto pts = enumerate(s);
  std::set<std::string> keys;
  for (const auto& p : pts) {
    CHECK(s.admits(p));
    CHECK(p.integer("rowACIM") >= (std::int64_t{1} << p.integer("levelADC")));
    keys.insert(p.key());
  }
  CHECK(keys.size() == pts.size());
  const auto& first = s.params().front();
  CHECK(pts.front().at(first.name) == first.values.front());
  CHECK(pts.back().at(first.name) == first.values.back());
}

TEST_CASE("one axis, no rules") {
  DesignSpace s({test::ordinal("rowACIM", {32, 64})}, {});
  CHECK(enumerate(s).size() == 2);
  CHECK(enumerate(DesignSpace{}).empty());
}

TEST_CASE("parallel-read rule") {
  const auto s = test::space("resnet50_22nm");
  auto p = s.default_point();
  p.set("rowACIM", std::int64_t{32});
  p.set("levelADC", std::int64_t{7});
  const auto v = check_validity(p, s);
  CHECK_FALSE(v.ok);
  CHECK(v.violated_rule == "row_ge_parallel_read");
  p.set("rowACIM", std::int64_t{128});
  CHECK(check_validity(p, s).ok);
  p.set("rowACIM", std::int64_t{64});
  p.set("levelADC", std::int64_t{6});
  CHECK(check_validity(p, s).ok);
  p.set("bogus", std::int64_t{1});
  CHECK_THROWS_AS(check_validity(p, s), Error);
}

TEST_CASE("intersection") {
  const auto r = test::space("resnet50_22nm");
  const auto w = test::space("swint_22nm");
  CHECK(intersection(r, r) == r);
  const auto x = intersection(r, w);
  std::set<std::string> names;
  for (const auto& n : x.param_names()) names.insert(n);
  CHECK(names == std::set<std::string>{"memCellType", "rowACIM", "colACIM", "typeADC", "levelADC", "muxColADC"});
  CHECK(x.rules().size() == 1);

  DesignSpace a({test::ordinal("a", {1, 2}), test::ordinal("b", {3})}, {});
  DesignSpace b({test::ordinal("a", {2, 4})}, {});
  const auto ab = intersection(a, b);
  REQUIRE(ab.params().size() == 1);
  CHECK(ab.params()[0].values == std::vector<Value>{std::int64_t{2}});

  DesignSpace c({test::ordinal("z", {1})}, {});
  try {
    intersection(a, c);
    FAIL("expected transfer_infeasible");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::transfer_infeasible);
  }
}

TEST_CASE("boundary values") {
  const auto s = test::space("swint_22nm");
  const auto b = boundary_values(s, {"rowACIM", "levelADC"});
  CHECK(b.at("rowACIM").min == Value{std::int64_t{32}});
  CHECK(b.at("rowACIM").max == Value{std::int64_t{512}});
  CHECK(b.at("levelADC").min == Value{std::int64_t{3}});
  CHECK(b.at("levelADC").max == Value{std::int64_t{7}});
  DesignSpace one({test::ordinal("k", {5})}, {});
  CHECK(boundary_values(one, {"k"}).at("k").min == boundary_values(one, {"k"}).at("k").max);
  CHECK_THROWS_AS(boundary_values(s, {"nope"}), Error);
}

TEST_CASE("bins are contiguous, near-equal, front-loaded") {
  auto members = [](const BinPartition& p, std::size_t i) {
    std::vector<std::int64_t> out;
    for (const auto& v : p.bins[i].members) out.push_back(std::get<std::int64_t>(v));
    return out;
  };
  const auto rows = discretize_bins(test::ordinal("rowACIM", {32, 64, 128, 256, 512}), 3);
  REQUIRE(rows.bins.size() == 3);
  CHECK(rows.bins[0].label == "small");
  CHECK(rows.bins[2].label == "large");
  CHECK(members(rows, 0) == std::vector<std::int64_t>{32, 64});
  CHECK(members(rows, 1) == std::vector<std::int64_t>{128, 256});
  CHECK(members(rows, 2) == std::vector<std::int64_t>{512});
  const auto adc = discretize_bins(test::ordinal("levelADC", {3, 4, 5, 6, 7}), 3);
  CHECK(members(adc, 0) == std::vector<std::int64_t>{3, 4});
  CHECK(members(adc, 2) == std::vector<std::int64_t>{7});
  CHECK(discretize_bins(test::ordinal("x", {1, 2, 3}), 1).bins[0].members.size() == 3);
  CHECK_THROWS_AS(discretize_bins(test::ordinal("x", {1, 2}), 3), Error);

  // Property sweep: sizes differ by at most one, larger bins first, order kept.
  for (std::size_t n = 1; n <= 9; ++n) {
    ParameterDef p;
    p.name = "p";
    p.kind = ParamKind::ordinal;
    for (std::size_t i = 0; i < n; ++i) p.values.emplace_back(static_cast<std::int64_t>(i));
    for (std::size_t k = 1; k <= n; ++k) {
      const auto part = discretize_bins(p, k);
      REQUIRE(part.bins.size() == k);
      std::vector<Value> flat;
      for (std::size_t i = 0; i < k; ++i) {
        const auto sz = part.bins[i].members.size();
        CHECK(sz == n / k + (i < n % k ? 1 : 0));
        flat.insert(flat.end(), part.bins[i].members.begin(), part.bins[i].members.end());
      }
      CHECK(flat == p.values);
    }
  }
}

TEST_CASE("schema JSON round trip") {
  const auto s = test::space("swint_22nm");
  CHECK(design_space_from_json(to_json(s)) == s);
}

}  // TEST_SUITE
