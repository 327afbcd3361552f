#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cimdse/design_space.hpp"
#include "cimdse/optimizer.hpp"

namespace cimdse {

// Complete set of simulated records over a (base) design space.
struct BaseDataset {
  DesignSpace space;
  std::string workload;     // informational
  std::string schema_file;  // manifest entry, may be empty
  std::map<DesignPoint, PpaRecord> records;

  // not_found error when the point has no record.
  const PpaRecord& at(const DesignPoint& p) const;
  // Throws schema error unless every valid point has a record.
  void validate() const;
};

BaseDataset build_base_dataset(const DesignSpace& space, Evaluator& evaluator, std::string workload = {},
                               std::string schema_file = {});

// <dir>/manifest.json + <dir>/records.jsonl (one {"point", "record"} per line).
void save_base_dataset(const BaseDataset& data, const std::filesystem::path& dir);
BaseDataset load_base_dataset(const std::filesystem::path& dir);

struct PowerLawFit {
  double a0 = 0;  // ln(alpha)
  double a1 = 1;  // beta
  std::size_t samples = 0;
  double rss = 0;  // residual sum of squares in the log domain
};

// Least squares on (ln x, ln y). degenerate_fit error with fewer than two
// distinct x; domain error for nonpositive inputs.
PowerLawFit fit_power_law(std::span<const double> x, std::span<const double> y);

// exp(a0) * x^a1; domain error for x <= 0.
double project(double x, double a0, double a1);

struct ProjectionModel {
  // Keyed by (memory type, constrained metric). Memory type is "" when the
  // intersection has no memCellType parameter.
  std::map<std::pair<std::string, Metric>, PowerLawFit> coeffs;

  const PowerLawFit& at(const std::string& memory_type, Metric metric) const;
  double project(const std::string& memory_type, Metric metric, double x) const;
};

struct FitSample {
  std::string memory_type;
  DesignPoint base_point;
  DesignPoint target_point;
  PpaRecord base;
  PpaRecord target;
};

struct ProjectionFit {
  DesignSpace intersection;
  ProjectionModel model;
  std::vector<FitSample> samples;
  std::size_t target_evaluations = 0;
};

// Parameters whose extreme values seed the fitting set.
const std::vector<std::string>& boundary_parameters();

// Completes an intersection point with `space`'s fallback values for the
// parameters the intersection lacks.
DesignPoint complete_point(const DesignPoint& partial, const DesignSpace& space);

ProjectionFit fit_projection(const BaseDataset& base, const DesignSpace& target_space, Evaluator& target_evaluator,
                             std::span<const Constraint> constraints, std::size_t budget, Rng& rng);

enum class TauMode { cumulative, per_bin };

const char* to_string(TauMode m) noexcept;
TauMode tau_mode_from_string(const std::string& s);

struct PruningConfig {
  double rho = 0.2;
  double tau = 0.85;
  TauMode tau_mode = TauMode::cumulative;
  std::size_t num_bins = 3;
  std::size_t fit_budget = 32;          // N, per memory type
  std::size_t verify_budget = 32;       // N_total, per de-prune call
  std::size_t baseline_count = 5;       // |S_base|
  double gamma0 = 1.0;
  double gamma_mult = 3.0;
  std::size_t deprune_interval = 2;
  std::size_t deprune_stop_iter = 8;
  std::size_t recovery_iter = 20;

  void validate() const;
  friend bool operator==(const PruningConfig&, const PruningConfig&) = default;
};

struct ParamPruning {
  std::string parameter;
  std::vector<std::string> base_bins;      // labels
  std::vector<double> bin_frequency;       // aligned with base_bins
  std::vector<std::string> retained_bins;  // base labels
  std::vector<Value> kept_values;          // target values after pruning
  bool kept_all_fallback = false;          // per-bin reading retained nothing
};

struct TopKResult {
  DesignSpace pruned;
  std::size_t intersection_size = 0;
  std::size_t valid_count = 0;  // |Omega_valid|
  std::size_t k = 0;
  std::vector<ParamPruning> params;
};

// Uses only base records and projections; never evaluates the target.
// projection_infeasible error when no intersection point passes the projected
// constraints.
TopKResult topk_prune(const BaseDataset& base, const DesignSpace& intersection, const DesignSpace& target_space,
                      const ProjectionModel& model, std::span<const Constraint> constraints,
                      const Objective& objective, double rho, double tau, TauMode mode = TauMode::cumulative,
                      std::size_t num_bins = 3);

// min(wins / samples * gamma, 1); 0 when samples == 0.
double restore_probability(std::size_t wins, std::size_t samples, double gamma);

struct DepruneEntry {
  std::string parameter;
  Value value;
  std::size_t samples = 0;
  std::size_t wins = 0;
  double win_rate = 0;
  double probability = 0;
  bool restored = false;
};

struct DepruneReport {
  std::size_t iteration = 0;
  double gamma = 0;
  std::size_t verifications = 0;  // substituted points submitted
  std::vector<DepruneEntry> entries;
  std::vector<std::string> notes;
};

// Evaluates through the run's history; entries align with the input.
using VerifyFn = std::function<std::vector<const HistoryEntry*>(std::span<const DesignPoint>)>;

struct DepruneResult {
  DesignSpace space;
  DepruneReport report;
};

DepruneResult deprune(const DesignSpace& current, const DesignSpace& full, std::span<const HistoryEntry> baselines,
                      std::size_t verify_budget, double gamma, const VerifyFn& verify, Rng& rng);

struct PruningAudit {
  bool pruned = false;
  std::vector<std::string> warnings;
  std::string tau_mode;
  std::vector<std::string> intersection_params;
  ProjectionModel projection;
  std::size_t fit_evaluations = 0;
  std::optional<TopKResult> topk;
  std::vector<DepruneReport> deprunes;
  std::optional<std::size_t> recovery_iteration;
};

struct PrunedRunResult {
  OptResult result;  // trace[0] is the fitting prefix
  PruningAudit audit;
};

PrunedRunResult pruned_run(const DesignSpace& space, const BaseDataset& base, const Objective& objective,
                           std::span<const Constraint> constraints, const OptimizerConfig& opt_cfg,
                           const PruningConfig& prune_cfg, Evaluator& evaluator,
                           const RuntimeCostModel& runtime = default_runtime_model());

}  // namespace cimdse
