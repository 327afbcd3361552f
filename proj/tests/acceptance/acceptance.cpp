// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any selected criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "../oracles.hpp"
#include "cimdse/experiment.hpp"
#include "cimdse/orchestrator.hpp"
#include "cimdse/result_io.hpp"

using namespace cimdse;

namespace {

namespace fs = std::filesystem;

fs::path data(const std::string& rel) { return fs::path(CIMDSE_DATA_DIR) / rel; }
DesignSpace space(const std::string& name) { return load_design_space(data("schemas/" + name + ".json")); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Verdict()> check;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(prec);
  o << v;
  return o.str();
}

fs::path out_dir;

// ---------------------------------------------------------------------------

Verdict enumeration() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = enumerate(space("resnet50_22nm")).size();
  const auto s = enumerate(space("swint_22nm")).size();
  const auto v = enumerate(space("vitb_22nm")).size();
  const double secs = seconds_since(t0);
  const bool ok = r == 5280 && s == 42240 && v == 42240 && secs < 5.0;
  return {ok, "ResNet-50 " + std::to_string(r) + ", Swin-T " + std::to_string(s) + ", ViT-B " + std::to_string(v) +
                  " in " + fmt(secs) + " s (want 5280/42240/42240, < 5 s)"};
}

Verdict table3() {
  struct Row {
    double batch;
    double samples[3];
    double t_batch;
    double reported;
  };
  const Row rows[] = {{16, {1277, 719, 1862}, 5.9, 472}, {32, {1048, 622, 1660}, 7.2, 250}, {48, {1459, 598, 1831}, 9.9, 266}};
  const auto model = default_runtime_model();
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    const double got = table3_average_runtime(r.samples, r.batch, r.t_batch);
    const bool row_ok = std::abs(got - r.reported) <= 1.0 && model.batch_runtime(r.batch) == r.t_batch;
    ok = ok && row_ok;
    detail += "batch " + fmt(r.batch, 0) + ": " + fmt(got, 2) + " vs " + fmt(r.reported, 0) + (row_ok ? " ok" : " off") + "; ";
  }
  return {ok, detail + "tolerance +-1 min"};
}

Verdict ols() {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> ua(0.05, 20), ub(-2.5, 2.5), ux(0.1, 1000);
  double worst_truth = 0, worst_oracle = 0;
  for (int d = 0; d < 20; ++d) {
    const double alpha = ua(rng), beta = ub(rng);
    std::vector<double> x, y, lx, ly;
    for (int i = 0; i < 16; ++i) {
      x.push_back(ux(rng));
      y.push_back(alpha * std::pow(x.back(), beta));
      lx.push_back(std::log(x.back()));
      ly.push_back(std::log(y.back()));
    }
    const auto f = fit_power_law(x, y);
    const auto [o0, o1] = oracle::ols_line(lx, ly);
    worst_truth = std::max({worst_truth, std::abs(f.a0 - std::log(alpha)), std::abs(f.a1 - beta)});
    worst_oracle = std::max({worst_oracle, std::abs(f.a0 - o0), std::abs(f.a1 - o1)});
  }

  // Same property through fit_projection: a target whose area and power are
  // exact power laws of the base metrics.
  const double alpha = 1.7, beta = 0.9;
  const auto s = space("resnet50_22nm");
  SurrogateEvaluator bev(make_workload("ResNet-50"), SurrogateConfig{});
  const auto base = build_base_dataset(s, bev, "ResNet-50");
  FunctionEvaluator tev([&](const DesignPoint& p) {
    auto r = base.at(p);
    r.area_mm2 = alpha * std::pow(r.area_mm2, beta);
    r.power_mW = alpha * std::pow(r.power_mW, beta);
    return r;
  });
  Rng frng(5);
  const std::vector<Constraint> cons{{Metric::area, 2500}, {Metric::power, 200}};
  const auto fit = fit_projection(base, s, tev, cons, 32, frng);
  double worst_proj = 0;
  for (const auto& [key, c] : fit.model.coeffs)
    worst_proj = std::max({worst_proj, std::abs(c.a0 - std::log(alpha)), std::abs(c.a1 - beta)});

  const bool ok = worst_truth < 1e-6 && worst_oracle < 1e-9 && worst_proj < 1e-6;
  std::ostringstream d;
  d << "20 draws: max |err| vs truth " << worst_truth << " (< 1e-6), vs normal equations " << worst_oracle
    << " (< 1e-9); fit_projection max |err| " << worst_proj;
  return {ok, d.str()};
}

ProjectionModel random_model(std::mt19937_64& rng,
                             std::map<std::pair<std::string, std::string>, std::pair<double, double>>& raw) {
  // Narrow enough that the caps below filter some base points but never all.
  std::uniform_real_distribution<double> a0(-0.15, 0.15), a1(0.95, 1.05);
  ProjectionModel m;
  for (const char* mem : {"SRAM", "RRAM"}) {
    for (auto [metric, name] : {std::pair{Metric::area, "area"}, {Metric::power, "power"}}) {
      PowerLawFit f;
      f.a0 = a0(rng);
      f.a1 = a1(rng);
      m.coeffs[{mem, metric}] = f;
      raw[{mem, name}] = {f.a0, f.a1};
    }
  }
  return m;
}

Verdict pruning_oracle() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> urho(0.02, 1.0), utau(0.05, 1.0);
  std::size_t agree = 0, infeasible = 0;
  std::string first_bad;
  for (int trial = 0; trial < 50; ++trial) {
    const auto fx = oracle::make_fixture(1000 + trial);
    std::map<std::pair<std::string, std::string>, std::pair<double, double>> raw;
    const auto model = random_model(rng, raw);
    const double rho = urho(rng), tau = utau(rng);
    const bool cumulative = trial % 2 == 0;
    const std::vector<Constraint> cons{{Metric::area, 1500}, {Metric::power, 140}};
    const auto inter = intersection(fx.base.space, fx.target);
    const auto ref =
        oracle::topk(fx.rows, fx.base_params, fx.base_fallback, fx.target_params, raw, 1500, 140, rho, tau, cumulative, 3);
    const auto mode = cumulative ? TauMode::cumulative : TauMode::per_bin;
    bool same = true;
    if (ref.valid == 0) {
      ++infeasible;
      try {
        topk_prune(fx.base, inter, fx.target, model, cons, Objective{}, rho, tau, mode);
        same = false;
      } catch (const Error& e) {
        same = e.kind() == ErrorKind::projection_infeasible;
      }
    } else {
      const auto got = topk_prune(fx.base, inter, fx.target, model, cons, Objective{}, rho, tau, mode);
      same = got.valid_count == ref.valid && got.k == ref.k;
      for (const auto& p : got.params) {
        std::vector<std::size_t> idx;
        for (const auto& r : p.retained_bins)
          for (std::size_t i = 0; i < p.base_bins.size(); ++i)
            if (p.base_bins[i] == r) idx.push_back(i);
        same = same && idx == ref.retained.at(p.parameter) && p.kept_values == ref.kept.at(p.parameter) &&
               got.pruned.param(p.parameter).values == ref.kept.at(p.parameter);
      }
      same = same && got.pruned.param("rowDCIM").values == fx.target.param("rowDCIM").values;
    }
    if (same) ++agree;
    else if (first_bad.empty()) first_bad = "; first mismatch at trial " + std::to_string(trial);
  }
  return {agree == 50, std::to_string(agree) + "/50 (rho, tau) settings agree with the brute-force reference (" +
                           std::to_string(infeasible) + " projection-infeasible)" + first_bad};
}

Verdict deprune_formula() {
  std::size_t cells = 0, bad = 0;
  for (std::size_t n = 1; n <= 8; ++n)
    for (std::size_t w = 0; w <= n; ++w)
      for (double g : {1.0, 3.0, 9.0}) {
        ++cells;
        if (restore_probability(w, n, g) != std::min(static_cast<double>(w) / static_cast<double>(n) * g, 1.0)) ++bad;
      }

  // Verification budget: direct calls with an always-winning verifier, then
  // the de-prune reports of full pruned runs.
  const DesignSpace full = space("swint_22nm");
  auto cur = full;
  for (const char* name : {"rowACIM", "levelADC", "muxColADC"}) cur = cur.with_values(name, {full.param(name).values.front()});
  SurrogateEvaluator ev(make_workload("Swin-T"), SurrogateConfig{});
  std::vector<HistoryEntry> baselines;
  Rng brng(1);
  for (int i = 0; i < 5; ++i) {
    HistoryEntry e;
    e.point = sample_uniform(cur, brng);
    e.feasible = true;
    e.score = -1e300;
    baselines.push_back(e);
  }
  std::size_t over = 0, calls = 0;
  for (std::size_t budget : {1u, 2u, 5u, 8u, 16u, 32u, 64u}) {
    std::size_t submitted = 0;
    std::vector<HistoryEntry> store;
    const VerifyFn verify = [&](std::span<const DesignPoint> pts) {
      submitted += pts.size();
      store.clear();
      for (const auto& p : pts) {
        HistoryEntry e;
        e.point = p;
        e.record = ev.evaluate(std::vector<DesignPoint>{p}).front();
        e.feasible = true;
        e.score = 1;
        store.push_back(e);
      }
      std::vector<const HistoryEntry*> out;
      for (auto& s : store) out.push_back(&s);
      return out;
    };
    for (double g : {1.0, 3.0, 9.0}) {
      Rng rng(budget * 31 + static_cast<std::size_t>(g));
      submitted = 0;
      const auto r = deprune(cur, full, baselines, budget, g, verify, rng);
      ++calls;
      if (submitted > budget || r.report.verifications > budget) ++over;
    }
  }
  SurrogateEvaluator bev(make_workload("ViT-B"), SurrogateConfig{});
  const auto base = build_base_dataset(space("vitb_22nm"), bev, "ViT-B");
  const std::vector<Constraint> cons{{Metric::area, 2500}, {Metric::power, 200}};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    OptimizerConfig oc;
    oc.seed = seed;
    oc.iterations = 24;
    PruningConfig pc;
    SurrogateEvaluator tev(make_workload("Swin-T"), SurrogateConfig{});
    const auto r = pruned_run(full, base, Objective{}, cons, oc, pc, tev);
    for (const auto& d : r.audit.deprunes) {
      ++calls;
      if (d.verifications > pc.verify_budget) ++over;
    }
  }
  return {bad == 0 && over == 0, std::to_string(cells - bad) + "/" + std::to_string(cells) +
                                     " grid cells equal min(r_win*gamma, 1); " + std::to_string(calls - over) + "/" +
                                     std::to_string(calls) + " de-prune calls within N_total"};
}

Verdict optimizer_soundness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = space("resnet50_22nm");
  const auto w = make_workload("ResNet-50");
  const std::vector<Constraint> cons{{Metric::area, 2500}, {Metric::power, 200}};
  const auto optimum = exhaustive_optimum(s, w, SurrogateConfig{}, Objective{}, cons);
  if (!optimum) return {false, "no feasible point"};

  OptimizerConfig rc;
  rc.algorithm = Algorithm::rs;
  rc.batch_size = 64;
  rc.iterations = (5280 + 63) / 64;
  SurrogateEvaluator rev(w, SurrogateConfig{});
  const auto rs = run(s, Objective{}, cons, rc, rev);
  const bool rs_ok = rs.history.size() == 5280 && rs.best && rs.best->record.fom == *optimum;

  ExperimentConfig ec;
  ec.name = "acceptance_soundness";
  ec.target_space = data("schemas/resnet50_22nm.json");
  ec.target_model = "ResNet-50";
  ec.constraints = cons;
  ec.algorithms = {Algorithm::sa, Algorithm::ga, Algorithm::tpe};
  ec.seeds = 50;
  ec.optimizer.iterations = 80;
  ec.optimizer.batch_size = 32;
  ec.tolerance = 0.01;
  const auto res = run_experiment(ec);
  bool ok = rs_ok;
  std::string detail = std::string("RS full coverage ") + (rs_ok ? "exact" : "MISSED") + "; reached within 1%:";
  for (const auto& a : res.summary) {
    ok = ok && a.unpruned_reached * 100 >= 80 * a.runs;
    detail += " " + std::string(to_string(a.algorithm)) + " " + std::to_string(a.unpruned_reached) + "/" + std::to_string(a.runs);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120;
  return {ok, detail + " (want >= 80%); " + fmt(secs, 1) + " s (< 120 s)"};
}

Verdict pruning_speedup() {
  auto cfg = load_experiment_config(data("config/swint_prune_fom.json"));
  cfg.algorithms = {Algorithm::sa};
  cfg.name = "acceptance_speedup";
  const auto res = run_experiment(cfg);
  const auto& a = res.summary.front();
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "speedup_runs.csv") << runs_csv(res);
  std::ofstream(out_dir / "speedup_summary.csv") << summary_csv(res);
  const auto table = runtime_table(res);
  std::ofstream(out_dir / "speedup_runtime.txt") << table;
  const bool ok = a.pruned_mean_evals < a.unpruned_mean_evals && a.sign_test_p < 0.05 && !table.empty();
  return {ok, "SA mean evals " + fmt(a.pruned_mean_evals, 1) + " pruned vs " + fmt(a.unpruned_mean_evals, 1) +
                  " unpruned; wins " + std::to_string(a.wins) + ", losses " + std::to_string(a.losses) +
                  ", sign test p = " + fmt(a.sign_test_p, 6) + " (< 0.05); runtime table in " +
                  (out_dir / "speedup_runtime.txt").string()};
}

Verdict tight_constraints() {
  const auto target = space("swint_22nm");
  SurrogateEvaluator bev(make_workload("ViT-B"), SurrogateConfig{});
  const auto base = build_base_dataset(space("vitb_22nm"), bev, "ViT-B");
  OptimizerConfig oc;
  oc.iterations = 10;
  oc.seed = 3;
  double cap = 2500;
  std::string detail;
  for (int step = 0; step < 40; ++step, cap /= 2) {
    const std::vector<Constraint> cons{{Metric::area, cap}, {Metric::power, cap / 12.5}};
    PrunedRunResult r;
    try {
      SurrogateEvaluator ev(make_workload("Swin-T"), SurrogateConfig{});
      r = pruned_run(target, base, Objective{}, cons, oc, PruningConfig{}, ev);
    } catch (const std::exception& e) {
      return {false, std::string("pruned_run threw at area cap ") + fmt(cap) + ": " + e.what()};
    }
    if (r.audit.pruned) continue;
    SurrogateEvaluator uev(make_workload("Swin-T"), SurrogateConfig{});
    const auto u = run(target, Objective{}, cons, oc, uev);
    bool same = u.history.size() == r.result.history.size();
    for (std::size_t i = 0; same && i < u.history.size(); ++i)
      same = u.history.entries()[i].point == r.result.history.entries()[i].point;
    const bool status_ok = r.result.status == RunStatus::ok || r.result.status == RunStatus::exhausted_infeasible;
    const bool ok = !r.audit.warnings.empty() && status_ok && same;
    return {ok, "pruning dropped at area cap " + fmt(cap) + " mm2 with warning \"" +
                    (r.audit.warnings.empty() ? std::string() : r.audit.warnings.front()) + "\"; status " +
                    to_string(r.result.status) + (same ? "; matches the unpruned run" : "; DIFFERS from the unpruned run")};
  }
  return {false, "constraints never emptied the projected valid set"};
}

Verdict corpus() {
  const auto schema = load_request_schema(data("schemas/request_schema.json"));
  std::ifstream in(data("corpus/requests.jsonl"));
  std::string line;
  std::size_t total = 0, planned = 0, executed = 0;
  std::map<std::string, std::size_t> per_cat;
  std::string first_bad;
  BaseDatasetCache cache;
  ExecutionOptions opts;
  opts.base_cache = &cache;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const std::string id = j.at("id"), text = j.at("text"), label = j.at("category");
    ++total;
    ++per_cat[label];
    try {
      DeterministicBackend b;
      const auto c = classify(text, b, schema);
      if (to_string(c.category) != label) throw Error(ErrorKind::validation, std::string("classified as ") + to_string(c.category));
      const auto p = parse_params(text, c.category, schema, b);
      const auto plan = make_plan(p, schema);
      ++planned;
      const auto out = execute_plan(plan, opts);
      bool done = out.ok;
      for (const auto& t : out.testbenches) done = done && t.status == TestbenchStatus::done;
      if (plan.optimization) done = done && out.optimization && out.optimization->best;
      if (!done) throw Error(ErrorKind::validation, "execution incomplete");
      ++executed;
    } catch (const std::exception& e) {
      if (first_bad.empty()) first_bad = "; first failure " + id + ": " + e.what();
    }
  }
  bool balanced = per_cat.size() == 4;
  for (const auto& [k, n] : per_cat) balanced = balanced && n == 10;
  return {total == 40 && executed == 40 && balanced, std::to_string(planned) + "/" + std::to_string(total) +
                                                         " runnable plans, " + std::to_string(executed) + "/" +
                                                         std::to_string(total) + " executed" + first_bad};
}

Verdict reproducibility() {
  const auto target = space("swint_22nm");
  SurrogateEvaluator bev(make_workload("ViT-B"), SurrogateConfig{});
  const auto base = build_base_dataset(space("vitb_22nm"), bev, "ViT-B");
  const std::vector<Constraint> cons{{Metric::area, 2500}, {Metric::power, 200}};
  std::size_t runs = 0, identical = 0;
  for (auto alg : {Algorithm::rs, Algorithm::sa, Algorithm::ga, Algorithm::tpe}) {
    for (bool prune : {false, true}) {
      OptimizerConfig oc;
      oc.algorithm = alg;
      oc.iterations = 24;
      oc.seed = 17;
      PruningConfig pc;
      auto once = [&] {
        SurrogateEvaluator ev(make_workload("Swin-T"), SurrogateConfig{});
        if (prune) return pruned_run(target, base, Objective{}, cons, oc, pc, ev);
        return PrunedRunResult{run(target, Objective{}, cons, oc, ev), {}};
      };
      const auto a = once();
      const auto b = once();
      ++runs;
      bool same = to_json(a.result).dump() == to_json(b.result).dump() && a.result.trace == b.result.trace &&
                  to_json(a.audit).dump() == to_json(b.audit).dump() &&
                  convergence_csv(a.result, Objective{}) == convergence_csv(b.result, Objective{});
      same = same && a.result.history.size() == b.result.history.size();
      for (std::size_t i = 0; same && i < a.result.history.size(); ++i) {
        const auto& x = a.result.history.entries()[i];
        const auto& y = b.result.history.entries()[i];
        same = x.point == y.point && x.record == y.record;
      }
      if (same) ++identical;
    }
  }
  return {identical == runs, std::to_string(identical) + "/" + std::to_string(runs) +
                                 " repeated runs bit-identical (OptResult, RunTrace, audit, convergence CSV)"};
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {"enumeration", enumeration},
      {"table3", table3},
      {"ols", ols},
      {"pruning_oracle", pruning_oracle},
      {"deprune", deprune_formula},
      {"optimizer_soundness", optimizer_soundness},
      {"pruning_speedup", pruning_speedup},
      {"tight_constraints", tight_constraints},
      {"corpus", corpus},
      {"reproducibility", reproducibility},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cimdse acceptance checks"};
  std::vector<std::string> only;
  bool list = false;
  std::string out = "acceptance_out";
  app.add_option("--only", only, "Run just these criteria");
  app.add_flag("--list", list, "List criterion names");
  app.add_option("--out", out, "Directory for experiment artifacts");
  CLI11_PARSE(app, argc, argv);
  out_dir = out;

  if (list) {
    for (const auto& c : criteria()) std::cout << c.name << "\n";
    return 0;
  }
  int failed = 0;
  for (const auto& c : criteria()) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (v.pass ? "PASS " : "FAIL ") << c.name << ": " << v.detail << std::endl;
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
