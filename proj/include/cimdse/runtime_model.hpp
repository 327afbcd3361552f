#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace cimdse {

// Per-iteration count of unique (non-cached) evaluations.
struct RunTrace {
  std::vector<std::size_t> evals;

  std::size_t total() const;
  friend bool operator==(const RunTrace&, const RunTrace&) = default;
};

struct CharacterizedPoint {
  double batch = 0;    // n
  double minutes = 0;  // mean batch runtime T_batch(n)
  bool measured = true;
};

struct RuntimeCostModel {
  std::vector<CharacterizedPoint> characterized;  // strictly increasing batch
  double logic_overhead = 0;                      // minutes per iteration

  // Throws config error: fewer than two points, non-increasing n,
  // negative or decreasing T_batch.
  void validate() const;

  // Linear interpolation; outside the characterized range the nearest
  // endpoint is used and *clamped is set.
  double batch_runtime(double n, bool* clamped = nullptr) const;
};

struct RuntimeEstimate {
  double minutes = 0;
  bool clamped = false;
};

// Sum over iterations of logic overhead plus T_batch(n_i); n_i = 0 adds
// only the overhead.
RuntimeEstimate estimate_runtime(const RunTrace& trace, const RuntimeCostModel& model);

// Cumulative runtime after each iteration (same rules as estimate_runtime).
std::vector<double> cumulative_runtime(const RunTrace& trace, const RuntimeCostModel& model);

// (S / n) * T_batch.
double table3_total_runtime(double samples, double batch_size, double t_batch);
// Mean of table3_total_runtime over the given per-algorithm sample counts.
double table3_average_runtime(std::span<const double> samples, double batch_size, double t_batch);

// Batch-runtime table shipped with the repository: 16/32/48 measured, other
// anchors filled by the interpolation rule.
RuntimeCostModel default_runtime_model();

}  // namespace cimdse
