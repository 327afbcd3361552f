#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cimdse/design_space.hpp"
#include "cimdse/runtime_model.hpp"
#include "cimdse/surrogate.hpp"

namespace cimdse {

using Rng = std::mt19937_64;

enum class Direction { maximize, minimize };

struct Objective {
  Metric metric = Metric::fom;
  Direction direction = Direction::maximize;

  // Larger is better; minimized metrics are negated.
  double score(const PpaRecord& r) const;
  friend bool operator==(const Objective&, const Objective&) = default;
};

// Upper bound on a metric (area in mm^2, power in mW).
struct Constraint {
  Metric metric = Metric::area;
  double threshold = 0;
  friend bool operator==(const Constraint&, const Constraint&) = default;
};

// True iff every constrained metric is <= its threshold. Throws config error
// for metrics other than area/power or nonpositive thresholds.
bool feasible(const PpaRecord& record, std::span<const Constraint> constraints);
void validate_constraints(std::span<const Constraint> constraints);

enum class Algorithm { rs, sa, ga, tpe };

const char* to_string(Algorithm a) noexcept;
Algorithm algorithm_from_string(const std::string& s);

struct SaConfig {
  // T0 = initial_temperature_fraction * |first best objective|.
  double initial_temperature_fraction = 0.1;
  double cooling = 0.95;
  friend bool operator==(const SaConfig&, const SaConfig&) = default;
};

struct GaConfig {
  std::size_t parent_pool = 8;
  double mutation_rate = 0.1;
  double crossover_rate = 0.9;
  friend bool operator==(const GaConfig&, const GaConfig&) = default;
};

struct TpeConfig {
  double quantile = 0.2;
  std::size_t candidate_pool = 256;
  friend bool operator==(const TpeConfig&, const TpeConfig&) = default;
};

struct OptimizerConfig {
  Algorithm algorithm = Algorithm::sa;
  std::size_t iterations = 80;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  SaConfig sa;
  GaConfig ga;
  TpeConfig tpe;

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct HistoryEntry {
  DesignPoint point;
  PpaRecord record;
  bool feasible = false;
  double score = 0;             // -inf when infeasible
  std::size_t iteration = 0;    // iteration that evaluated it
  std::size_t eval_index = 0;   // 0-based global evaluation order
};

// Deduplicating record of every evaluation, in evaluation order.
class HistoryBuffer {
 public:
  const HistoryEntry* find(const DesignPoint& p) const;
  const HistoryEntry& add(HistoryEntry entry);

  const std::vector<HistoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Highest score among feasible entries; first discovered wins ties.
  const HistoryEntry* best_feasible() const { return best_ < entries_.size() ? &entries_[best_] : nullptr; }
  // Feasible entries sorted by score (desc, then evaluation order).
  std::vector<const HistoryEntry*> top_feasible(std::size_t n) const;

  RunTrace trace;

 private:
  std::vector<HistoryEntry> entries_;
  std::map<DesignPoint, std::size_t> index_;
  std::size_t best_ = static_cast<std::size_t>(-1);
};

// Batched black-box evaluation. Implementations may parallelize within a
// batch; results follow input order.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual std::vector<PpaRecord> evaluate(std::span<const DesignPoint> points) = 0;
  std::size_t calls() const { return calls_; }

 protected:
  std::size_t calls_ = 0;
};

class SurrogateEvaluator final : public Evaluator {
 public:
  SurrogateEvaluator(Workload workload, SurrogateConfig cfg, std::size_t parallelism = 1);
  std::vector<PpaRecord> evaluate(std::span<const DesignPoint> points) override;
  const Workload& workload() const { return workload_; }
  const SurrogateConfig& config() const { return cfg_; }

 private:
  Workload workload_;
  SurrogateConfig cfg_;
  std::size_t parallelism_;
};

class FunctionEvaluator final : public Evaluator {
 public:
  explicit FunctionEvaluator(std::function<PpaRecord(const DesignPoint&)> fn) : fn_(std::move(fn)) {}
  std::vector<PpaRecord> evaluate(std::span<const DesignPoint> points) override;

 private:
  std::function<PpaRecord(const DesignPoint&)> fn_;
};

enum class RunStatus { ok, exhausted_infeasible };

const char* to_string(RunStatus s) noexcept;

struct ConvergencePoint {
  std::size_t iteration = 0;
  std::size_t evaluations = 0;  // cumulative unique evaluations
  std::optional<double> best;   // best feasible objective metric so far
};

struct OptResult {
  RunStatus status = RunStatus::exhausted_infeasible;
  std::optional<HistoryEntry> best;
  HistoryBuffer history;
  RunTrace trace;
  double estimated_runtime_min = 0;
  bool runtime_clamped = false;
  // Iteration at which `best` was evaluated (0 = before the first iteration).
  std::size_t first_best_iteration = 0;
  std::vector<ConvergencePoint> convergence;
  std::vector<std::string> notes;
};

// ---- building blocks (exposed for testing) --------------------------------

// Uniform draw over the rule-satisfying points of `space`.
DesignPoint sample_uniform(const DesignSpace& space, Rng& rng);

// Moves k in {1,2} parameters to a different admissible value; always returns
// a rule-satisfying point that differs from `current` (falls back to a random
// restart after bounded retries). Requires some parameter with >1 value.
DesignPoint sa_propose(const DesignPoint& current, const DesignSpace& space, Rng& rng);

// exp(-delta / T) for delta > 0, 1 otherwise.
double acceptance_probability(double delta, double temperature);
bool metropolis_accept(double delta, double temperature, Rng& rng);

// Children by uniform crossover and per-parameter mutation; every child value
// comes from one of its two parents or is a mutation to a different value.
std::vector<DesignPoint> ga_step(std::span<const DesignPoint> parents, const DesignSpace& space, const GaConfig& cfg,
                                 std::size_t count, Rng& rng);

// Per-parameter smoothed categorical densities used by TPE.
struct TpeDensities {
  std::map<std::string, std::vector<double>> good;  // aligned with space values
  std::map<std::string, std::vector<double>> bad;
  std::size_t good_count = 0;
  std::size_t bad_count = 0;
};
TpeDensities tpe_densities(const HistoryBuffer& history, const DesignSpace& space, double quantile);

struct TpeProposal {
  std::vector<DesignPoint> points;
  bool uniform_fallback = false;
};
TpeProposal tpe_propose(const HistoryBuffer& history, const DesignSpace& space, const TpeConfig& cfg,
                        std::size_t count, Rng& rng);

// ---- the optimization loop ------------------------------------------------

class SearchStrategy;

// Candidate generation / simulate-and-record / state update, one iteration per
// step(). The active space may change between steps (pruning middleware).
class Optimizer {
 public:
  Optimizer(Objective objective, std::vector<Constraint> constraints, OptimizerConfig cfg, Evaluator& evaluator);
  ~Optimizer();
  Optimizer(const Optimizer&) = delete;
  Optimizer& operator=(const Optimizer&) = delete;

  void step(const DesignSpace& active);

  // Evaluates through the history cache and charges new evaluations to the
  // iteration that is about to run (or the last one when finished). Returns
  // entries aligned with `points`.
  std::vector<const HistoryEntry*> evaluate_extra(std::span<const DesignPoint> points);

  std::size_t iteration() const { return iteration_; }
  bool done() const { return iteration_ >= cfg_.iterations; }
  const HistoryBuffer& history() const { return history_; }
  const Objective& objective() const { return objective_; }
  const std::vector<Constraint>& constraints() const { return constraints_; }
  const OptimizerConfig& config() const { return cfg_; }

  OptResult finish(const RuntimeCostModel& runtime = default_runtime_model()) const;

 private:
  std::vector<const HistoryEntry*> record(std::span<const DesignPoint> points, std::size_t iteration);

  Objective objective_;
  std::vector<Constraint> constraints_;
  OptimizerConfig cfg_;
  Evaluator& evaluator_;
  Rng rng_;
  HistoryBuffer history_;
  std::unique_ptr<SearchStrategy> strategy_;
  std::size_t iteration_ = 0;
  std::size_t pending_extra_ = 0;
  std::vector<ConvergencePoint> convergence_;
  std::vector<std::string> notes_;
};

// Runs cfg.iterations steps over a fixed space.
OptResult run(const DesignSpace& space, const Objective& objective, std::span<const Constraint> constraints,
              const OptimizerConfig& cfg, Evaluator& evaluator,
              const RuntimeCostModel& runtime = default_runtime_model());

}  // namespace cimdse
