#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cimdse/json_io.hpp"
#include "cimdse/pruning.hpp"

namespace cimdse {

// Paired-seed suite: every algorithm runs once per seed on the target space,
// unpruned and (when `pruning` is set) pruned against a base dataset.
struct ExperimentConfig {
  std::string name = "experiment";
  std::filesystem::path target_space;
  std::string target_model;
  std::filesystem::path base_space;     // required with pruning
  std::string base_model;
  std::filesystem::path base_dataset;   // optional cached dataset directory
  Objective objective;
  std::vector<Constraint> constraints;
  std::vector<Algorithm> algorithms{Algorithm::sa};
  std::uint64_t seed_start = 0;
  std::size_t seeds = 50;
  OptimizerConfig optimizer;            // algorithm and seed are overridden
  std::optional<PruningConfig> pruning;
  double tolerance = 0.01;              // "reached" = within this fraction of the optimum
  SurrogateConfig surrogate;
  RuntimeCostModel runtime = default_runtime_model();
  std::size_t threads = 0;              // 0 = hardware concurrency

  void validate() const;
};

// Relative paths resolve against `base_dir`.
ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ArmOutcome {
  bool reached = false;
  // Unique target evaluations up to and including the first point within
  // tolerance; the fitting prefix counts for pruned runs. Total evaluations
  // when never reached.
  std::size_t evals_to_reach = 0;
  // Estimated runtime through the iteration that first reached (whole run
  // when never reached).
  double runtime_to_reach_min = 0;
  std::size_t total_evals = 0;
  double total_runtime_min = 0;
  std::optional<double> best;  // best feasible objective metric
  RunStatus status = RunStatus::exhausted_infeasible;
  bool pruned = false;         // pruning actually applied
};

struct PairedRun {
  Algorithm algorithm = Algorithm::sa;
  std::uint64_t seed = 0;
  ArmOutcome unpruned;
  std::optional<ArmOutcome> pruned;
};

struct AlgorithmSummary {
  Algorithm algorithm = Algorithm::sa;
  std::size_t runs = 0;
  std::size_t unpruned_reached = 0;
  double unpruned_mean_evals = 0;
  double unpruned_mean_runtime = 0;
  double unpruned_p95_runtime = 0;
  std::size_t pruned_reached = 0;
  double pruned_mean_evals = 0;
  double pruned_mean_runtime = 0;
  double pruned_p95_runtime = 0;
  std::size_t wins = 0;    // pruned reached with fewer evaluations
  std::size_t losses = 0;
  double sign_test_p = 1;  // one-sided, ties dropped
};

struct ExperimentResult {
  std::string name;
  double optimum = 0;  // exhaustive optimum of the objective metric
  std::size_t feasible_points = 0;
  std::vector<PairedRun> runs;  // algorithm-major, then seed
  std::vector<AlgorithmSummary> summary;
  std::vector<std::string> notes;
};

// Exhaustive optimum over the valid points satisfying the constraints; empty
// when none is feasible.
std::optional<double> exhaustive_optimum(const DesignSpace& space, const Workload& workload,
                                         const SurrogateConfig& cfg, const Objective& objective,
                                         std::span<const Constraint> constraints, std::size_t* feasible = nullptr);

bool within_tolerance(double value, double optimum, Direction direction, double tolerance);

// P(X >= wins) for X ~ Binomial(wins + losses, 1/2).
double sign_test_p_value(std::size_t wins, std::size_t losses);

// Nearest-rank percentile, q in (0, 1].
double percentile(std::vector<double> values, double q);

ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::string runs_csv(const ExperimentResult& r);
std::string summary_csv(const ExperimentResult& r);
// Mean and P95 runtime with/without pruning and their ratios, per algorithm.
std::string runtime_table(const ExperimentResult& r);

}  // namespace cimdse
