#include "cimdse/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "cimdse/json_io.hpp"

namespace cimdse {

namespace {

constexpr const char* kMemType = "memCellType";

std::string memory_type_of(const DesignPoint& p) { return p.has(kMemType) ? p.text(kMemType) : std::string(); }

}  // namespace

// ---- base dataset -------------------------------------------------------------

const PpaRecord& BaseDataset::at(const DesignPoint& p) const {
  auto it = records.find(p);
  if (it == records.end()) throw Error(ErrorKind::not_found, "base dataset has no record for " + p.key());
  return it->second;
}

void BaseDataset::validate() const {
  std::size_t n = 0;
  for (const auto& p : enumerate(space)) {
    if (!records.count(p)) throw Error(ErrorKind::schema, "base dataset is missing " + p.key());
    ++n;
  }
  if (n != records.size()) throw Error(ErrorKind::schema, "base dataset holds points outside its space");
}

BaseDataset build_base_dataset(const DesignSpace& space, Evaluator& evaluator, std::string workload,
                               std::string schema_file) {
  BaseDataset d;
  d.space = space;
  d.workload = std::move(workload);
  d.schema_file = std::move(schema_file);
  const auto points = enumerate(space);
  const auto recs = evaluator.evaluate(points);
  for (std::size_t i = 0; i < points.size(); ++i) d.records.emplace(points[i], recs[i]);
  return d;
}

void save_base_dataset(const BaseDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest{{"space", to_json(data.space)},
                {"workload", data.workload},
                {"schema_file", data.schema_file},
                {"records_file", "records.jsonl"},
                {"count", data.records.size()}};
  write_json_file(dir / "manifest.json", manifest);
  std::ofstream out(dir / "records.jsonl");
  if (!out) throw Error(ErrorKind::io, "cannot write " + (dir / "records.jsonl").string());
  for (const auto& [p, r] : data.records) out << json{{"point", to_json(p)}, {"record", to_json(r)}}.dump() << '\n';
}

BaseDataset load_base_dataset(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  BaseDataset d;
  d.space = design_space_from_json(manifest.at("space"));
  d.workload = manifest.value("workload", std::string());
  d.schema_file = manifest.value("schema_file", std::string());
  const auto file = dir / manifest.value("records_file", std::string("records.jsonl"));
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::io, "cannot open " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      d.records.emplace(point_from_json(j.at("point")), record_from_json(j.at("record")));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::io, file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  d.validate();
  return d;
}

// ---- projection -----------------------------------------------------------------

PowerLawFit fit_power_law(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::config, "fit inputs differ in length");
  std::set<double> distinct;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw Error(ErrorKind::domain, "power-law fit needs positive values");
    distinct.insert(x[i]);
  }
  if (distinct.size() < 2) {
    throw Error(ErrorKind::degenerate_fit, "need at least two distinct x values, got " + std::to_string(distinct.size()));
  }
  const std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  PowerLawFit f;
  f.a1 = sxy / sxx;
  f.a0 = my - f.a1 * mx;
  f.samples = n;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - (f.a0 + f.a1 * lx[i]);
    f.rss += r * r;
  }
  return f;
}

double project(double x, double a0, double a1) {
  if (!(x > 0)) throw Error(ErrorKind::domain, "projection input must be positive");
  return std::exp(a0) * std::pow(x, a1);
}

const PowerLawFit& ProjectionModel::at(const std::string& memory_type, Metric metric) const {
  auto it = coeffs.find({memory_type, metric});
  if (it == coeffs.end()) {
    throw Error(ErrorKind::not_found,
                "no projection for (" + memory_type + ", " + std::string(to_string(metric)) + ")");
  }
  return it->second;
}

double ProjectionModel::project(const std::string& memory_type, Metric metric, double x) const {
  const auto& f = at(memory_type, metric);
  return cimdse::project(x, f.a0, f.a1);
}

const std::vector<std::string>& boundary_parameters() {
  static const std::vector<std::string> keys{"rowACIM", "colACIM", "typeADC", "levelADC",
                                             "muxColADC", "rowDCIM", "colDCIM"};
  return keys;
}

DesignPoint complete_point(const DesignPoint& partial, const DesignSpace& space) {
  DesignPoint p;
  for (const auto& def : space.params()) p.set(def.name, partial.has(def.name) ? partial.at(def.name) : def.fallback());
  return p;
}

ProjectionFit fit_projection(const BaseDataset& base, const DesignSpace& target_space, Evaluator& target_evaluator,
                             std::span<const Constraint> constraints, std::size_t budget, Rng& rng) {
  validate_constraints(constraints);
  if (budget < 1) throw Error(ErrorKind::config, "fitting budget must be >= 1");
  ProjectionFit fit;
  fit.intersection = intersection(base.space, target_space);
  const DesignSpace& inter = fit.intersection;

  std::vector<std::string> keys;
  for (const auto& k : boundary_parameters()) {
    if (inter.has(k)) keys.push_back(k);
  }
  const auto bounds = boundary_values(inter, keys);
  std::vector<std::string> mem_types{""};
  if (inter.has(kMemType)) {
    mem_types.clear();
    for (const auto& v : inter.param(kMemType).values) mem_types.push_back(to_string(v));
  }

  std::vector<FitSample> chosen;
  for (const auto& m : mem_types) {
    std::vector<FitSample> omega;
    std::set<DesignPoint> seen;
    for (std::size_t mask = 0; mask < (std::size_t{1} << keys.size()); ++mask) {
      DesignPoint partial;
      for (const auto& def : inter.params()) partial.set(def.name, def.fallback());
      if (!m.empty()) partial.set(kMemType, m);
      for (std::size_t j = 0; j < keys.size(); ++j) {
        const auto& b = bounds.at(keys[j]);
        partial.set(keys[j], (mask >> j) & 1 ? b.max : b.min);
      }
      if (!inter.satisfies_rules(partial) || !seen.insert(partial).second) continue;
      FitSample s;
      s.memory_type = m;
      s.base_point = complete_point(partial, base.space);
      s.target_point = complete_point(partial, target_space);
      if (!base.space.satisfies_rules(s.base_point) || !target_space.satisfies_rules(s.target_point)) continue;
      s.base = base.at(s.base_point);
      omega.push_back(std::move(s));
    }
    std::shuffle(omega.begin(), omega.end(), rng);
    if (omega.size() > budget) omega.resize(budget);
    for (auto& s : omega) chosen.push_back(std::move(s));
  }

  std::vector<DesignPoint> targets;
  for (const auto& s : chosen) targets.push_back(s.target_point);
  const auto recs = target_evaluator.evaluate(targets);
  fit.target_evaluations = targets.size();
  for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i].target = recs[i];

  for (const auto& m : mem_types) {
    for (const auto& c : constraints) {
      if (fit.model.coeffs.count({m, c.metric})) continue;
      std::vector<double> x, y;
      for (const auto& s : chosen) {
        if (s.memory_type != m) continue;
        x.push_back(s.base.metric(c.metric));
        y.push_back(s.target.metric(c.metric));
      }
      try {
        fit.model.coeffs.emplace(std::make_pair(m, c.metric), fit_power_law(x, y));
      } catch (const Error& e) {
        const std::string pair = "(" + (m.empty() ? std::string("*") : m) + ", " + to_string(c.metric) + ")";
        throw Error(e.kind(), "fit for " + pair + ": " + e.what());
      }
    }
  }
  fit.samples = std::move(chosen);
  return fit;
}

// ---- Top-K pruning ----------------------------------------------------------------

const char* to_string(TauMode m) noexcept { return m == TauMode::cumulative ? "cumulative" : "per_bin"; }

TauMode tau_mode_from_string(const std::string& s) {
  if (s == "cumulative") return TauMode::cumulative;
  if (s == "per_bin") return TauMode::per_bin;
  throw Error(ErrorKind::config, "unknown tau mode '" + s + "'");
}

void PruningConfig::validate() const {
  if (!(rho > 0 && rho <= 1)) throw Error(ErrorKind::config, "rho must lie in (0, 1]");
  if (!(tau > 0 && tau <= 1)) throw Error(ErrorKind::config, "tau must lie in (0, 1]");
  if (num_bins < 1) throw Error(ErrorKind::config, "bin count must be >= 1");
  if (fit_budget < 1 || verify_budget < 1 || baseline_count < 1 || deprune_interval < 1) {
    throw Error(ErrorKind::config, "pruning budgets and interval must be >= 1");
  }
  if (!(gamma0 > 0) || !(gamma_mult > 0)) throw Error(ErrorKind::config, "gamma and its multiplier must be positive");
  if (deprune_stop_iter > recovery_iter) throw Error(ErrorKind::config, "de-prune stop must not exceed recovery");
}

TopKResult topk_prune(const BaseDataset& base, const DesignSpace& inter, const DesignSpace& target_space,
                      const ProjectionModel& model, std::span<const Constraint> constraints,
                      const Objective& objective, double rho, double tau, TauMode mode, std::size_t num_bins) {
  if (!(rho > 0 && rho <= 1)) throw Error(ErrorKind::config, "rho must lie in (0, 1]");
  if (!(tau > 0 && tau <= 1)) throw Error(ErrorKind::config, "tau must lie in (0, 1]");
  validate_constraints(constraints);

  struct Scored {
    DesignPoint point;
    double score;
  };
  std::vector<Scored> valid;
  TopKResult out;
  for (const auto& p : enumerate(inter)) {
    ++out.intersection_size;
    const DesignPoint bp = complete_point(p, base.space);
    if (!base.space.satisfies_rules(bp)) continue;
    const PpaRecord& r = base.at(bp);
    const std::string m = memory_type_of(p);
    bool ok = true;
    for (const auto& c : constraints) {
      if (model.project(m, c.metric, r.metric(c.metric)) > c.threshold) {
        ok = false;
        break;
      }
    }
    if (ok) valid.push_back({p, objective.score(r)});
  }
  if (valid.empty()) throw Error(ErrorKind::projection_infeasible, "no intersection point meets the projected constraints");
  out.valid_count = valid.size();
  // Guard against rho*n landing a hair above an integer.
  out.k = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(valid.size()) - 1e-9));
  out.k = std::clamp<std::size_t>(out.k, 1, valid.size());
  std::stable_sort(valid.begin(), valid.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  valid.resize(out.k);

  out.pruned = target_space;
  for (const auto& def : inter.params()) {
    const auto bins = discretize_bins(def, std::min(num_bins, def.values.size()));
    ParamPruning pp;
    pp.parameter = def.name;
    std::vector<double> freq(bins.bins.size(), 0.0);
    for (const auto& s : valid) {
      const Value& v = s.point.at(def.name);
      for (std::size_t b = 0; b < bins.bins.size(); ++b) {
        const auto& mem = bins.bins[b].members;
        if (std::find(mem.begin(), mem.end(), v) != mem.end()) freq[b] += 1.0;
      }
    }
    for (auto& f : freq) f /= static_cast<double>(out.k);

    std::vector<bool> keep(bins.bins.size(), false);
    if (mode == TauMode::cumulative) {
      std::vector<std::size_t> order(bins.bins.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return freq[a] > freq[b]; });
      double acc = 0;
      for (std::size_t b : order) {
        keep[b] = true;
        acc += freq[b];
        if (acc >= tau - 1e-12) break;
      }
    } else {
      for (std::size_t b = 0; b < freq.size(); ++b) keep[b] = freq[b] >= tau;
      if (std::none_of(keep.begin(), keep.end(), [](bool k) { return k; })) {
        keep.assign(keep.size(), true);
        pp.kept_all_fallback = true;
      }
    }

    const auto& tdef = target_space.param(def.name);
    const auto tbins = discretize_bins(tdef, std::min(num_bins, tdef.values.size()));
    std::set<std::size_t> tkeep;
    for (std::size_t b = 0; b < bins.bins.size(); ++b) {
      pp.base_bins.push_back(bins.bins[b].label);
      pp.bin_frequency.push_back(freq[b]);
      if (!keep[b]) continue;
      pp.retained_bins.push_back(bins.bins[b].label);
      tkeep.insert(b * tbins.bins.size() / bins.bins.size());
    }
    for (std::size_t t : tkeep) {
      for (const auto& v : tbins.bins[t].members) pp.kept_values.push_back(v);
    }
    out.pruned = out.pruned.with_values(def.name, pp.kept_values);
    out.params.push_back(std::move(pp));
  }
  return out;
}

// ---- de-pruning ---------------------------------------------------------------------

double restore_probability(std::size_t wins, std::size_t samples, double gamma) {
  if (samples == 0) return 0.0;
  return std::min(static_cast<double>(wins) / static_cast<double>(samples) * gamma, 1.0);
}

DepruneResult deprune(const DesignSpace& current, const DesignSpace& full, std::span<const HistoryEntry> baselines,
                      std::size_t verify_budget, double gamma, const VerifyFn& verify, Rng& rng) {
  DepruneResult res{current, {}};
  res.report.gamma = gamma;
  std::vector<DepruneEntry>& entries = res.report.entries;
  for (const auto& def : full.params()) {
    const auto& cur = current.param(def.name);
    for (const auto& v : def.values) {
      if (!cur.admits(v)) entries.push_back({def.name, v});
    }
  }
  if (entries.empty()) return res;
  if (baselines.empty()) throw Error(ErrorKind::config, "de-pruning needs at least one baseline sample");

  const std::size_t per_value = std::max<std::size_t>(1, verify_budget / entries.size());
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  struct Probe {
    std::size_t entry;
    DesignPoint point;
    double baseline_score;
  };
  std::vector<Probe> probes;
  std::size_t remaining = verify_budget;
  for (std::size_t idx : order) {
    auto& e = entries[idx];
    e.samples = std::min({per_value, baselines.size(), remaining});
    remaining -= e.samples;
    std::vector<std::size_t> pool(baselines.size());
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    // Rule-violating substitutions fall through to the next unused baseline;
    // whatever cannot be filled counts as a loss.
    std::size_t taken = 0;
    for (std::size_t b : pool) {
      if (taken == e.samples) break;
      DesignPoint q = baselines[b].point;
      q.set(e.parameter, e.value);
      if (!full.satisfies_rules(q)) continue;
      probes.push_back({idx, std::move(q), baselines[b].score});
      ++taken;
    }
  }

  std::vector<DesignPoint> points;
  for (const auto& p : probes) points.push_back(p.point);
  res.report.verifications = points.size();
  const auto results = points.empty() ? std::vector<const HistoryEntry*>{} : verify(points);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const HistoryEntry* h = results[i];
    if (h && h->feasible && h->score > probes[i].baseline_score) ++entries[probes[i].entry].wins;
  }

  std::map<std::string, std::set<std::size_t>> restored;
  for (auto& e : entries) {
    e.win_rate = e.samples ? static_cast<double>(e.wins) / static_cast<double>(e.samples) : 0.0;
    e.probability = restore_probability(e.wins, e.samples, gamma);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    e.restored = u < e.probability;
    if (e.restored) restored[e.parameter].insert(full.param(e.parameter).index_of(e.value));
  }
  for (const auto& [name, extra] : restored) {
    const auto& def = full.param(name);
    const auto& cur = res.space.param(name);
    std::vector<Value> keep;
    for (std::size_t i = 0; i < def.values.size(); ++i) {
      if (cur.admits(def.values[i]) || extra.count(i)) keep.push_back(def.values[i]);
    }
    res.space = res.space.with_values(name, keep);
  }
  return res;
}

// ---- pruned run -------------------------------------------------------------------------

PrunedRunResult pruned_run(const DesignSpace& space, const BaseDataset& base, const Objective& objective,
                           std::span<const Constraint> constraints, const OptimizerConfig& opt_cfg,
                           const PruningConfig& prune_cfg, Evaluator& evaluator, const RuntimeCostModel& runtime) {
  prune_cfg.validate();
  opt_cfg.validate();
  if (count_valid(space) == 0) throw Error(ErrorKind::validity, "space '" + space.name() + "' has no valid point");

  PrunedRunResult out;
  PruningAudit& audit = out.audit;
  audit.tau_mode = to_string(prune_cfg.tau_mode);
  // Separate stream so the optimizer sees the same draws as an unpruned run.
  Rng prune_rng(opt_cfg.seed ^ 0x9E3779B97F4A7C15ULL);

  DesignSpace active = space;
  const ProjectionFit fit = fit_projection(base, space, evaluator, constraints, prune_cfg.fit_budget, prune_rng);
  audit.fit_evaluations = fit.target_evaluations;
  audit.projection = fit.model;
  audit.intersection_params = fit.intersection.param_names();
  try {
    TopKResult topk = topk_prune(base, fit.intersection, space, fit.model, constraints, objective, prune_cfg.rho,
                                 prune_cfg.tau, prune_cfg.tau_mode, prune_cfg.num_bins);
    if (count_valid(topk.pruned) == 0) {
      audit.warnings.push_back("pruned space has no valid point; running on the full space");
    } else {
      active = topk.pruned;
      audit.pruned = true;
    }
    audit.topk = std::move(topk);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::projection_infeasible) throw;
    audit.warnings.push_back(std::string(e.what()) + "; running on the full space");
  }

  Optimizer opt(objective, std::vector<Constraint>(constraints.begin(), constraints.end()), opt_cfg, evaluator);
  double gamma = prune_cfg.gamma0;
  const VerifyFn verify = [&](std::span<const DesignPoint> pts) { return opt.evaluate_extra(pts); };
  for (std::size_t i = 1; i <= opt_cfg.iterations; ++i) {
    if (i >= prune_cfg.recovery_iter) {
      if (!audit.recovery_iteration) {
        audit.recovery_iteration = i;
        active = space;
      }
    } else if (i % prune_cfg.deprune_interval == 0 && i <= prune_cfg.deprune_stop_iter && !(active == space)) {
      std::vector<HistoryEntry> baselines;
      for (const auto* e : opt.history().top_feasible(opt.history().size())) {
        if (baselines.size() == prune_cfg.baseline_count) break;
        if (active.admits(e->point)) baselines.push_back(*e);
      }
      if (baselines.empty()) {
        audit.warnings.push_back("iteration " + std::to_string(i) + ": no feasible baseline, de-pruning skipped");
      } else {
        auto res = deprune(active, space, baselines, prune_cfg.verify_budget, gamma, verify, prune_rng);
        res.report.iteration = i;
        active = std::move(res.space);
        audit.deprunes.push_back(std::move(res.report));
        gamma *= prune_cfg.gamma_mult;
      }
    }
    opt.step(active);
  }

  out.result = opt.finish(runtime);
  out.result.trace.evals.insert(out.result.trace.evals.begin(), audit.fit_evaluations);
  const auto est = estimate_runtime(out.result.trace, runtime);
  out.result.estimated_runtime_min = est.minutes;
  out.result.runtime_clamped = est.clamped;
  for (const auto& w : audit.warnings) out.result.notes.push_back(w);
  return out;
}

}  // namespace cimdse
