#include "cimdse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "cimdse/result_io.hpp"

namespace cimdse {

namespace {

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p) {
  std::filesystem::path path(p);
  if (path.empty() || path.is_absolute() || base_dir.empty()) return path;
  return base_dir / path;
}

ArmOutcome summarize(const OptResult& r, std::size_t prefix, std::size_t trace_offset, double optimum,
                     const ExperimentConfig& cfg) {
  ArmOutcome a;
  a.status = r.status;
  a.total_evals = r.trace.total();
  const auto cumulative = cumulative_runtime(r.trace, cfg.runtime);
  a.total_runtime_min = cumulative.empty() ? 0 : cumulative.back();
  if (r.best) a.best = r.best->record.metric(cfg.objective.metric);
  a.evals_to_reach = a.total_evals;
  a.runtime_to_reach_min = a.total_runtime_min;
  for (const auto& e : r.history.entries()) {
    if (!e.feasible) continue;
    if (!within_tolerance(e.record.metric(cfg.objective.metric), optimum, cfg.objective.direction, cfg.tolerance))
      continue;
    a.reached = true;
    a.evals_to_reach = prefix + e.eval_index + 1;
    const std::size_t idx = std::min(e.iteration + trace_offset - 1, cumulative.size() - 1);
    a.runtime_to_reach_min = cumulative[idx];
    break;
  }
  return a;
}

// Reached beats not reached; among reached, fewer evaluations wins.
int compare(const ArmOutcome& pruned, const ArmOutcome& unpruned) {
  if (pruned.reached != unpruned.reached) return pruned.reached ? 1 : -1;
  if (!pruned.reached) return 0;
  if (pruned.evals_to_reach < unpruned.evals_to_reach) return 1;
  if (pruned.evals_to_reach > unpruned.evals_to_reach) return -1;
  return 0;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

void ExperimentConfig::validate() const {
  if (target_space.empty()) throw Error(ErrorKind::config, "experiment needs a target space");
  if (target_model.empty()) throw Error(ErrorKind::config, "experiment needs a target model");
  if (algorithms.empty()) throw Error(ErrorKind::config, "experiment needs at least one algorithm");
  if (seeds == 0) throw Error(ErrorKind::config, "seeds must be >= 1");
  if (!(tolerance >= 0 && tolerance < 1)) throw Error(ErrorKind::config, "tolerance must lie in [0, 1)");
  validate_constraints(constraints);
  optimizer.validate();
  if (pruning) {
    pruning->validate();
    if (base_model.empty() || (base_space.empty() && base_dataset.empty()))
      throw Error(ErrorKind::config, "pruning needs a base model and a base space or dataset");
  }
  surrogate.validate();
  runtime.validate();
}

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  try {
    c.name = j.value("name", c.name);
    const auto& t = j.at("target");
    c.target_space = resolve(base_dir, t.at("space").get<std::string>());
    c.target_model = t.at("model").get<std::string>();
    if (j.contains("base")) {
      const auto& b = j.at("base");
      c.base_model = b.value("model", std::string());
      c.base_space = resolve(base_dir, b.value("space", std::string()));
      c.base_dataset = resolve(base_dir, b.value("dataset", std::string()));
    }
    if (j.contains("objective")) c.objective = objective_from_json(j.at("objective"));
    if (j.contains("constraints"))
      for (const auto& x : j.at("constraints")) c.constraints.push_back(constraint_from_json(x));
    if (j.contains("algorithms")) {
      c.algorithms.clear();
      for (const auto& a : j.at("algorithms")) c.algorithms.push_back(algorithm_from_string(a.get<std::string>()));
    }
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      c.seed_start = s.value("start", c.seed_start);
      c.seeds = s.value("count", c.seeds);
    }
    if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j.at("optimizer"));
    if (j.contains("pruning") && !j.at("pruning").is_null()) c.pruning = pruning_config_from_json(j.at("pruning"));
    c.tolerance = j.value("tolerance", c.tolerance);
    if (j.contains("surrogate")) c.surrogate = surrogate_config_from_json(j.at("surrogate"));
    if (j.contains("runtime")) {
      const auto& r = j.at("runtime");
      c.runtime = r.is_string() ? runtime_model_from_json(read_json_file(resolve(base_dir, r.get<std::string>())))
                                : runtime_model_from_json(r);
    }
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_json(read_json_file(path), path.parent_path());
}

bool within_tolerance(double value, double optimum, Direction direction, double tolerance) {
  const double slack = std::abs(optimum) * tolerance;
  return direction == Direction::maximize ? value >= optimum - slack : value <= optimum + slack;
}

std::optional<double> exhaustive_optimum(const DesignSpace& space, const Workload& workload,
                                         const SurrogateConfig& cfg, const Objective& objective,
                                         std::span<const Constraint> constraints, std::size_t* feasible_count) {
  const auto points = enumerate(space);
  const auto records = batch_simulate(points, workload, cfg, std::max(1u, std::thread::hardware_concurrency()));
  std::optional<double> best;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (!feasible(r, constraints)) continue;
    ++n;
    const double s = objective.score(r);
    if (!best || s > *best) best = s;
  }
  if (feasible_count) *feasible_count = n;
  if (!best) return std::nullopt;
  return objective.direction == Direction::maximize ? *best : -*best;
}

double sign_test_p_value(std::size_t wins, std::size_t losses) {
  const std::size_t n = wins + losses;
  if (n == 0) return 1;
  // Sum of C(n, k) / 2^n for k >= wins, in log space.
  double p = 0;
  for (std::size_t k = wins; k <= n; ++k) {
    const double lc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    p += std::exp(lc - static_cast<double>(n) * std::log(2.0));
  }
  return std::min(p, 1.0);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0;
  if (!(q > 0 && q <= 1)) throw Error(ErrorKind::config, "percentile must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult out;
  out.name = cfg.name;

  const auto space = load_design_space(cfg.target_space);
  const auto workload = make_workload(cfg.target_model);
  const auto opt = exhaustive_optimum(space, workload, cfg.surrogate, cfg.objective, cfg.constraints,
                                      &out.feasible_points);
  if (!opt) throw Error(ErrorKind::config, "no feasible point in the target space under the constraints");
  out.optimum = *opt;

  const std::size_t threads =
      cfg.threads ? cfg.threads : std::max<std::size_t>(1, std::thread::hardware_concurrency());

  std::optional<BaseDataset> base;
  if (cfg.pruning) {
    if (!cfg.base_dataset.empty() && std::filesystem::exists(cfg.base_dataset / "manifest.json")) {
      base = load_base_dataset(cfg.base_dataset);
      out.notes.push_back("base dataset loaded from " + cfg.base_dataset.string());
    } else {
      SurrogateEvaluator ev(make_workload(cfg.base_model), cfg.surrogate, threads);
      base = build_base_dataset(load_design_space(cfg.base_space), ev, cfg.base_model,
                                cfg.base_space.filename().string());
      if (!cfg.base_dataset.empty()) save_base_dataset(*base, cfg.base_dataset);
      out.notes.push_back("base dataset built over " + std::to_string(base->records.size()) + " points");
    }
  }

  out.runs.resize(cfg.algorithms.size() * cfg.seeds);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < out.runs.size(); i = next++) {
      try {
        PairedRun pr;
        pr.algorithm = cfg.algorithms[i / cfg.seeds];
        pr.seed = cfg.seed_start + i % cfg.seeds;
        OptimizerConfig oc = cfg.optimizer;
        oc.algorithm = pr.algorithm;
        oc.seed = pr.seed;
        {
          SurrogateEvaluator ev(workload, cfg.surrogate);
          const auto r = run(space, cfg.objective, cfg.constraints, oc, ev, cfg.runtime);
          pr.unpruned = summarize(r, 0, 0, out.optimum, cfg);
        }
        if (cfg.pruning) {
          SurrogateEvaluator ev(workload, cfg.surrogate);
          const auto p = pruned_run(space, *base, cfg.objective, cfg.constraints, oc, *cfg.pruning, ev, cfg.runtime);
          pr.pruned = summarize(p.result, p.audit.fit_evaluations, 1, out.optimum, cfg);
          pr.pruned->pruned = p.audit.pruned;
        }
        out.runs[i] = std::move(pr);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(threads, out.runs.size()); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  for (std::size_t a = 0; a < cfg.algorithms.size(); ++a) {
    AlgorithmSummary s;
    s.algorithm = cfg.algorithms[a];
    std::vector<double> ue, ur, pe, pr;
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
      const auto& run = out.runs[a * cfg.seeds + k];
      ++s.runs;
      s.unpruned_reached += run.unpruned.reached;
      ue.push_back(static_cast<double>(run.unpruned.evals_to_reach));
      ur.push_back(run.unpruned.runtime_to_reach_min);
      if (!run.pruned) continue;
      s.pruned_reached += run.pruned->reached;
      pe.push_back(static_cast<double>(run.pruned->evals_to_reach));
      pr.push_back(run.pruned->runtime_to_reach_min);
      const int c = compare(*run.pruned, run.unpruned);
      if (c > 0) ++s.wins;
      if (c < 0) ++s.losses;
    }
    s.unpruned_mean_evals = mean(ue);
    s.unpruned_mean_runtime = mean(ur);
    s.unpruned_p95_runtime = percentile(ur, 0.95);
    s.pruned_mean_evals = mean(pe);
    s.pruned_mean_runtime = mean(pr);
    s.pruned_p95_runtime = percentile(pr, 0.95);
    s.sign_test_p = sign_test_p_value(s.wins, s.losses);
    out.summary.push_back(s);
  }
  return out;
}

std::string runs_csv(const ExperimentResult& r) {
  std::ostringstream o;
  o << std::setprecision(10);
  o << "algorithm,seed,arm,pruned,reached,evals_to_reach,runtime_to_reach_min,total_evals,total_runtime_min,best,"
       "status\n";
  auto row = [&](const PairedRun& p, const char* arm, const ArmOutcome& a) {
    o << to_string(p.algorithm) << ',' << p.seed << ',' << arm << ',' << a.pruned << ',' << a.reached << ','
      << a.evals_to_reach << ',' << a.runtime_to_reach_min << ',' << a.total_evals << ',' << a.total_runtime_min
      << ',';
    if (a.best) o << *a.best;
    o << ',' << to_string(a.status) << '\n';
  };
  for (const auto& p : r.runs) {
    row(p, "unpruned", p.unpruned);
    if (p.pruned) row(p, "pruned", *p.pruned);
  }
  return o.str();
}

std::string summary_csv(const ExperimentResult& r) {
  std::ostringstream o;
  o << std::setprecision(10);
  o << "algorithm,runs,optimum,unpruned_reached,unpruned_mean_evals,pruned_reached,pruned_mean_evals,wins,losses,"
       "sign_test_p\n";
  for (const auto& s : r.summary) {
    o << to_string(s.algorithm) << ',' << s.runs << ',' << r.optimum << ',' << s.unpruned_reached << ','
      << s.unpruned_mean_evals << ',' << s.pruned_reached << ',' << s.pruned_mean_evals << ',' << s.wins << ','
      << s.losses << ',' << s.sign_test_p << '\n';
  }
  return o.str();
}

std::string runtime_table(const ExperimentResult& r) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(1);
  o << "algorithm  mean_min(no prune)  mean_min(prune)  ratio   p95_min(no prune)  p95_min(prune)  ratio\n";
  for (const auto& s : r.summary) {
    const double mr = s.unpruned_mean_runtime > 0 ? s.pruned_mean_runtime / s.unpruned_mean_runtime : 0;
    const double pr = s.unpruned_p95_runtime > 0 ? s.pruned_p95_runtime / s.unpruned_p95_runtime : 0;
    o << std::left << std::setw(11) << to_string(s.algorithm) << std::right << std::setw(18)
      << s.unpruned_mean_runtime << std::setw(17) << s.pruned_mean_runtime << std::setw(7) << std::setprecision(2)
      << mr << 'x' << std::setprecision(1) << std::setw(19) << s.unpruned_p95_runtime << std::setw(16)
      << s.pruned_p95_runtime << std::setw(7) << std::setprecision(2) << pr << 'x' << std::setprecision(1) << '\n';
  }
  return o.str();
}

}  // namespace cimdse
