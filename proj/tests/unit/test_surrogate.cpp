#include <doctest.h>

#include <cmath>
#include <random>

#include "cimdse/runtime_model.hpp"
#include "cimdse/surrogate.hpp"
#include "support.hpp"

using namespace cimdse;

namespace {

DesignPoint base_point() {
  return DesignPoint({{"memCellType", std::string("RRAM")},
                      {"rowACIM", std::int64_t{256}},
                      {"colACIM", std::int64_t{128}},
                      {"typeADC", std::string("Flash")},
                      {"levelADC", std::int64_t{5}},
                      {"muxColADC", std::int64_t{8}},
                      {"weightDup", std::int64_t{0}},
                      {"rowDCIM", std::int64_t{128}},
                      {"colDCIM", std::int64_t{128}}});
}

double energy(const PpaRecord& r) { return r.power_mW * r.latency_ms; }

}  // namespace

TEST_SUITE("surrogate") {

TEST_CASE("derived metrics follow from the primitives") {
  const double area = 120, pj = 3.5e9, ms = 2.0, ops = 8e9;
  const auto r = make_record(area, pj, ms, ops);
  const double tops = ops / (ms * 1e-3) / 1e12;
  const double tops_w = ops / (pj * 1e-12) / 1e12;
  CHECK(r.power_mW == doctest::Approx(pj * 1e-12 / (ms * 1e-3) * 1e3).epsilon(1e-12));
  CHECK(r.throughput == doctest::Approx(tops).epsilon(1e-12));
  CHECK(r.energy_eff == doctest::Approx(tops_w).epsilon(1e-12));
  CHECK(r.compute_eff == doctest::Approx(tops / area).epsilon(1e-12));
  CHECK(r.fom == doctest::Approx(tops_w * tops / area).epsilon(1e-12));
  CHECK_THROWS_AS(make_record(0, 1, 1, 1), Error);
}

TEST_CASE("ADC precision is monotone in area and per-conversion energy") {
  // Energy is linear in the converter coefficient, so doubling it isolates the
  // converter share; dividing by the row-group count (rows / 2^bits) leaves a
  // per-conversion figure up to a common factor.
  for (const char* model : {"ResNet-50", "Swin-T"}) {
    const auto w = make_workload(model);
    for (const char* adc : {"Flash", "SAR"}) {
      const bool flash = std::string(adc) == "Flash";
      SurrogateConfig c1, c2;
      (flash ? c2.flash_energy_fJ : c2.sar_energy_fJ) *= 2;
      auto p = base_point();
      p.set("typeADC", std::string(adc));
      double prev_area = 0, prev_conv = 0;
      for (std::int64_t bits = 3; bits <= 7; ++bits) {
        p.set("levelADC", bits);
        const auto r1 = simulate(p, w, c1);
        const auto r2 = simulate(p, w, c2);
        const double groups = 256.0 / static_cast<double>(std::int64_t{1} << bits);
        const double per_conv = (energy(r2) - energy(r1)) / groups;
        if (bits > 3) {
          CHECK(r1.area_mm2 > prev_area);
          CHECK(per_conv > prev_conv);
        }
        prev_area = r1.area_mm2;
        prev_conv = per_conv;
      }
    }
  }
}

TEST_CASE("device, node and duplication trends") {
  const auto w = make_workload("ResNet-50");
  SurrogateConfig cfg;
  auto p = base_point();
  p.set("memCellType", std::string("SRAM"));
  const auto sram = simulate(p, w, cfg);
  p.set("memCellType", std::string("RRAM"));
  const auto rram = simulate(p, w, cfg);
  CHECK(rram.area_mm2 < sram.area_mm2);

  const auto r7 = simulate(p, w, cfg.at_node(7));
  const auto r22 = simulate(p, w, cfg.at_node(22));
  CHECK(r22 == rram);
  CHECK(r7.area_mm2 < r22.area_mm2);
  CHECK(energy(r7) < energy(r22));

  p.set("weightDup", std::int64_t{1});
  const auto dup = simulate(p, w, cfg);
  CHECK(dup.area_mm2 > rram.area_mm2);
  CHECK(dup.latency_ms < rram.latency_ms);
}

TEST_CASE("node scaling factors") {
  SurrogateConfig c;
  const auto s = c.at_node(44);
  CHECK(s.sram.cell_area_um2 == doctest::Approx(c.sram.cell_area_um2 * 4));
  CHECK(s.flash_energy_fJ == doctest::Approx(c.flash_energy_fJ * 2));
  CHECK(s.sram.read_delay_ns == doctest::Approx(c.sram.read_delay_ns * std::sqrt(2.0)));
  CHECK_THROWS_AS(c.at_node(0), Error);
}

TEST_CASE("determinism and batch equivalence") {
  const auto space = test::space("swint_22nm");
  const auto w = make_workload("Swin-T");
  SurrogateConfig cfg;
  const auto all = enumerate(space);
  std::mt19937_64 rng(7);
  std::vector<DesignPoint> pts;
  for (int i = 0; i < 32; ++i) pts.push_back(all[rng() % all.size()]);
  const auto a = batch_simulate(pts, w, cfg, 1);
  const auto b = batch_simulate(pts, w, cfg, 8);
  CHECK(a == b);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(a[i] == simulate(pts[i], w, cfg));
  CHECK(batch_simulate({}, w, cfg, 4).empty());

  cfg.noise = true;
  cfg.seed = 11;
  CHECK(simulate(pts[0], w, cfg) == simulate(pts[0], w, cfg));
}

TEST_CASE("invalid points are rejected") {
  auto p = base_point();
  p.set("rowACIM", std::int64_t{32});
  p.set("levelADC", std::int64_t{7});
  CHECK_THROWS_AS(simulate(p, make_workload("ResNet-50"), SurrogateConfig{}), Error);
  auto q = base_point();
  q.erase("rowDCIM");
  CHECK_THROWS_AS(simulate(q, make_workload("Swin-T"), SurrogateConfig{}), Error);
}

TEST_CASE("builtin workloads") {
  for (const auto& n : builtin_workload_names()) {
    const auto w = make_workload(n);
    CHECK_NOTHROW(w.validate());
    CHECK(w.total_ops() > 0);
  }
  CHECK(make_workload("Swin-T").uses_dcim);
  CHECK_FALSE(make_workload("ResNet-50").uses_dcim);
  CHECK_THROWS_AS(make_workload("AlexNet"), Error);
}

}  // TEST_SUITE

TEST_SUITE("runtime_model") {

TEST_CASE("interpolation and clamping") {
  RuntimeCostModel m;
  m.characterized = {{16, 5.9}, {32, 7.2}};
  CHECK(estimate_runtime(RunTrace{{32}}, m).minutes == doctest::Approx(7.2));
  CHECK(estimate_runtime(RunTrace{{16}}, m).minutes == doctest::Approx(5.9));
  CHECK(estimate_runtime(RunTrace{{24}}, m).minutes == doctest::Approx(6.55));
  const auto lo = estimate_runtime(RunTrace{{4}}, m);
  CHECK(lo.clamped);
  CHECK(lo.minutes == doctest::Approx(5.9));
  m.logic_overhead = 0.5;
  CHECK(estimate_runtime(RunTrace{{0, 32}}, m).minutes == doctest::Approx(0.5 + 0.5 + 7.2));
  const auto cum = cumulative_runtime(RunTrace{{16, 0, 32}}, m);
  REQUIRE(cum.size() == 3);
  CHECK(cum[2] == doctest::Approx(6.4 + 0.5 + 7.7));

  RuntimeCostModel bad;
  bad.characterized = {{16, 5.9}};
  CHECK_THROWS_AS(estimate_runtime(RunTrace{{16}}, bad), Error);
}

TEST_CASE("shipped table") {
  const auto m = default_runtime_model();
  CHECK(m.batch_runtime(16) == doctest::Approx(5.9));
  CHECK(m.batch_runtime(32) == doctest::Approx(7.2));
  CHECK(m.batch_runtime(48) == doctest::Approx(9.9));
  CHECK(m.batch_runtime(40) == doctest::Approx((7.2 + 9.9) / 2));
  const auto file = runtime_model_from_json(read_json_file(test::data("runtime/batch_runtime.json")));
  for (double n : {1.0, 8.0, 20.0, 32.0, 47.0}) CHECK(file.batch_runtime(n) == doctest::Approx(m.batch_runtime(n)));
}

TEST_CASE("table arithmetic") {
  CHECK(table3_total_runtime(32, 32, 7.2) == doctest::Approx(7.2));
  const double s32[] = {1048, 622, 1660};
  CHECK(table3_average_runtime(s32, 32, 7.2) == doctest::Approx((1048 + 622 + 1660) / 3.0 / 32 * 7.2));
}

}  // TEST_SUITE
