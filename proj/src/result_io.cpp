#include "cimdse/result_io.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cimdse {

namespace {

const char* direction_name(Direction d) { return d == Direction::maximize ? "maximize" : "minimize"; }

Direction direction_from_string(const std::string& s) {
  if (s == "maximize" || s == "max") return Direction::maximize;
  if (s == "minimize" || s == "min") return Direction::minimize;
  throw Error(ErrorKind::config, "unknown direction '" + s + "'");
}

template <class Fn>
void guarded(const char* what, Fn&& fn) {
  try {
    fn();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("malformed ") + what + ": " + e.what());
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json optional_double(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const Objective& o) { return json{{"metric", to_string(o.metric)}, {"direction", direction_name(o.direction)}}; }

Objective objective_from_json(const json& j) {
  Objective o;
  guarded("objective", [&] {
    if (j.is_string()) {
      o.metric = metric_from_string(j.get<std::string>());
      return;
    }
    if (j.contains("metric")) o.metric = metric_from_string(j.at("metric").get<std::string>());
    if (j.contains("direction")) o.direction = direction_from_string(j.at("direction").get<std::string>());
  });
  return o;
}

json to_json(const Constraint& c) { return json{{"metric", to_string(c.metric)}, {"threshold", c.threshold}}; }

Constraint constraint_from_json(const json& j) {
  Constraint c;
  guarded("constraint", [&] {
    c.metric = metric_from_string(j.at("metric").get<std::string>());
    c.threshold = j.at("threshold").get<double>();
  });
  validate_constraints(std::span<const Constraint>(&c, 1));
  return c;
}

json to_json(const OptimizerConfig& c) {
  return json{{"algorithm", to_string(c.algorithm)},
              {"iterations", c.iterations},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"sa", {{"initial_temperature_fraction", c.sa.initial_temperature_fraction}, {"cooling", c.sa.cooling}}},
              {"ga",
               {{"parent_pool", c.ga.parent_pool},
                {"mutation_rate", c.ga.mutation_rate},
                {"crossover_rate", c.ga.crossover_rate}}},
              {"tpe", {{"quantile", c.tpe.quantile}, {"candidate_pool", c.tpe.candidate_pool}}}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
  OptimizerConfig c;
  guarded("optimizer config", [&] {
    if (j.contains("algorithm")) c.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
    maybe(j, "iterations", c.iterations);
    maybe(j, "batch_size", c.batch_size);
    maybe(j, "seed", c.seed);
    if (j.contains("sa")) {
      const auto& s = j.at("sa");
      maybe(s, "initial_temperature_fraction", c.sa.initial_temperature_fraction);
      maybe(s, "cooling", c.sa.cooling);
    }
    if (j.contains("ga")) {
      const auto& g = j.at("ga");
      maybe(g, "parent_pool", c.ga.parent_pool);
      maybe(g, "mutation_rate", c.ga.mutation_rate);
      maybe(g, "crossover_rate", c.ga.crossover_rate);
    }
    if (j.contains("tpe")) {
      const auto& t = j.at("tpe");
      maybe(t, "quantile", c.tpe.quantile);
      maybe(t, "candidate_pool", c.tpe.candidate_pool);
    }
  });
  c.validate();
  return c;
}

json to_json(const PruningConfig& c) {
  return json{{"rho", c.rho},
              {"tau", c.tau},
              {"tau_mode", to_string(c.tau_mode)},
              {"num_bins", c.num_bins},
              {"fit_budget", c.fit_budget},
              {"verify_budget", c.verify_budget},
              {"baseline_count", c.baseline_count},
              {"gamma0", c.gamma0},
              {"gamma_mult", c.gamma_mult},
              {"deprune_interval", c.deprune_interval},
              {"deprune_stop_iter", c.deprune_stop_iter},
              {"recovery_iter", c.recovery_iter}};
}

PruningConfig pruning_config_from_json(const json& j) {
  PruningConfig c;
  guarded("pruning config", [&] {
    maybe(j, "rho", c.rho);
    maybe(j, "tau", c.tau);
    if (j.contains("tau_mode")) c.tau_mode = tau_mode_from_string(j.at("tau_mode").get<std::string>());
    maybe(j, "num_bins", c.num_bins);
    maybe(j, "fit_budget", c.fit_budget);
    maybe(j, "verify_budget", c.verify_budget);
    maybe(j, "baseline_count", c.baseline_count);
    maybe(j, "gamma0", c.gamma0);
    maybe(j, "gamma_mult", c.gamma_mult);
    maybe(j, "deprune_interval", c.deprune_interval);
    maybe(j, "deprune_stop_iter", c.deprune_stop_iter);
    maybe(j, "recovery_iter", c.recovery_iter);
  });
  c.validate();
  return c;
}

json to_json(const HistoryEntry& e) {
  return json{{"point", to_json(e.point)},
              {"record", to_json(e.record)},
              {"feasible", e.feasible},
              {"score", e.feasible ? json(e.score) : json(nullptr)},
              {"iteration", e.iteration},
              {"eval_index", e.eval_index}};
}

HistoryEntry history_entry_from_json(const json& j) {
  HistoryEntry e;
  guarded("history entry", [&] {
    e.point = point_from_json(j.at("point"));
    e.record = record_from_json(j.at("record"));
    e.feasible = j.at("feasible").get<bool>();
    e.score = j.at("score").is_null() ? -std::numeric_limits<double>::infinity() : j.at("score").get<double>();
    e.iteration = j.at("iteration").get<std::size_t>();
    e.eval_index = j.at("eval_index").get<std::size_t>();
  });
  return e;
}

json to_json(const OptResult& r) {
  json hist = json::array();
  for (const auto& e : r.history.entries()) hist.push_back(to_json(e));
  json conv = json::array();
  for (const auto& c : r.convergence) {
    conv.push_back({{"iteration", c.iteration}, {"evaluations", c.evaluations}, {"best", optional_double(c.best)}});
  }
  return json{{"status", to_string(r.status)},
              {"best", r.best ? to_json(*r.best) : json(nullptr)},
              {"first_best_iteration", r.first_best_iteration},
              {"estimated_runtime_min", r.estimated_runtime_min},
              {"runtime_clamped", r.runtime_clamped},
              {"trace", to_json(r.trace)},
              {"unique_evaluations", r.history.size()},
              {"convergence", conv},
              {"notes", r.notes},
              {"history", hist}};
}

OptResult opt_result_from_json(const json& j) {
  OptResult r;
  guarded("optimization result", [&] {
    const auto status = j.at("status").get<std::string>();
    if (status == to_string(RunStatus::ok)) r.status = RunStatus::ok;
    else if (status == to_string(RunStatus::exhausted_infeasible)) r.status = RunStatus::exhausted_infeasible;
    else throw Error(ErrorKind::config, "unknown run status '" + status + "'");
    if (!j.at("best").is_null()) r.best = history_entry_from_json(j.at("best"));
    r.first_best_iteration = j.at("first_best_iteration").get<std::size_t>();
    r.estimated_runtime_min = j.at("estimated_runtime_min").get<double>();
    r.runtime_clamped = j.at("runtime_clamped").get<bool>();
    r.trace = trace_from_json(j.at("trace"));
    for (const auto& c : j.at("convergence")) {
      ConvergencePoint p;
      p.iteration = c.at("iteration").get<std::size_t>();
      p.evaluations = c.at("evaluations").get<std::size_t>();
      if (!c.at("best").is_null()) p.best = c.at("best").get<double>();
      r.convergence.push_back(p);
    }
    r.notes = j.at("notes").get<std::vector<std::string>>();
    for (const auto& e : j.at("history")) r.history.add(history_entry_from_json(e));
    r.history.trace = r.trace;
  });
  return r;
}

json to_json(const ProjectionModel& m) {
  json out = json::array();
  for (const auto& [key, fit] : m.coeffs) {
    out.push_back({{"memory_type", key.first},
                   {"metric", to_string(key.second)},
                   {"a0", fit.a0},
                   {"a1", fit.a1},
                   {"samples", fit.samples},
                   {"rss", fit.rss}});
  }
  return out;
}

json to_json(const TopKResult& t) {
  json params = json::array();
  for (const auto& p : t.params) {
    json kept = json::array();
    for (const auto& v : p.kept_values) kept.push_back(to_json(v));
    params.push_back({{"parameter", p.parameter},
                      {"base_bins", p.base_bins},
                      {"bin_frequency", p.bin_frequency},
                      {"retained_bins", p.retained_bins},
                      {"kept_values", kept},
                      {"kept_all_fallback", p.kept_all_fallback}});
  }
  return json{{"intersection_size", t.intersection_size},
              {"valid_count", t.valid_count},
              {"k", t.k},
              {"params", params},
              {"pruned_space", to_json(t.pruned)}};
}

json to_json(const DepruneReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"parameter", e.parameter},
                       {"value", to_json(e.value)},
                       {"samples", e.samples},
                       {"wins", e.wins},
                       {"win_rate", e.win_rate},
                       {"probability", e.probability},
                       {"restored", e.restored}});
  }
  return json{{"iteration", r.iteration},
              {"gamma", r.gamma},
              {"verifications", r.verifications},
              {"entries", entries},
              {"notes", r.notes}};
}

json to_json(const PruningAudit& a) {
  json deprunes = json::array();
  for (const auto& d : a.deprunes) deprunes.push_back(to_json(d));
  return json{{"pruned", a.pruned},
              {"warnings", a.warnings},
              {"tau_mode", a.tau_mode},
              {"intersection_params", a.intersection_params},
              {"projection", to_json(a.projection)},
              {"fit_evaluations", a.fit_evaluations},
              {"topk", a.topk ? to_json(*a.topk) : json(nullptr)},
              {"deprunes", deprunes},
              {"recovery_iteration", a.recovery_iteration ? json(*a.recovery_iteration) : json(nullptr)}};
}

std::string convergence_csv(const OptResult& r, const Objective& objective) {
  std::ostringstream out;
  out << "iteration,evaluations,best_" << to_string(objective.metric) << '\n';
  out << std::setprecision(17);
  for (const auto& c : r.convergence) {
    out << c.iteration << ',' << c.evaluations << ',';
    if (c.best) out << *c.best;
    out << '\n';
  }
  return out.str();
}

}  // namespace cimdse
