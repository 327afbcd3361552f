#include "cimdse/runtime_model.hpp"

#include <cmath>
#include <numeric>

#include "cimdse/error.hpp"

namespace cimdse {

std::size_t RunTrace::total() const { return std::accumulate(evals.begin(), evals.end(), std::size_t{0}); }

void RuntimeCostModel::validate() const {
  if (characterized.size() < 2) throw Error(ErrorKind::config, "runtime model needs at least two characterized points");
  for (std::size_t i = 0; i < characterized.size(); ++i) {
    const auto& p = characterized[i];
    if (!(p.minutes >= 0) || !std::isfinite(p.minutes)) {
      throw Error(ErrorKind::config, "characterized batch runtime must be nonnegative");
    }
    if (i > 0) {
      if (!(characterized[i - 1].batch < p.batch)) {
        throw Error(ErrorKind::config, "characterized batch sizes must be strictly increasing");
      }
      if (characterized[i - 1].minutes > p.minutes) {
        throw Error(ErrorKind::config, "characterized batch runtime must be nondecreasing");
      }
    }
  }
  if (!(logic_overhead >= 0)) throw Error(ErrorKind::config, "logic overhead must be nonnegative");
}

double RuntimeCostModel::batch_runtime(double n, bool* clamped) const {
  validate();
  const auto& c = characterized;
  if (n < c.front().batch) {
    if (clamped) *clamped = true;
    return c.front().minutes;
  }
  if (n > c.back().batch) {
    if (clamped) *clamped = true;
    return c.back().minutes;
  }
  for (std::size_t i = 0; i + 1 < c.size(); ++i) {
    if (n == c[i].batch) return c[i].minutes;
    if (n < c[i + 1].batch) {
      const double t = (n - c[i].batch) / (c[i + 1].batch - c[i].batch);
      return c[i].minutes + t * (c[i + 1].minutes - c[i].minutes);
    }
  }
  return c.back().minutes;
}

RuntimeEstimate estimate_runtime(const RunTrace& trace, const RuntimeCostModel& model) {
  if (trace.evals.empty()) throw Error(ErrorKind::config, "runtime estimate needs a nonempty trace");
  model.validate();
  RuntimeEstimate est;
  for (std::size_t n : trace.evals) {
    est.minutes += model.logic_overhead;
    if (n == 0) continue;
    bool clamped = false;
    est.minutes += model.batch_runtime(static_cast<double>(n), &clamped);
    est.clamped = est.clamped || clamped;
  }
  return est;
}

std::vector<double> cumulative_runtime(const RunTrace& trace, const RuntimeCostModel& model) {
  model.validate();
  std::vector<double> out;
  out.reserve(trace.evals.size());
  double acc = 0;
  for (std::size_t n : trace.evals) {
    acc += model.logic_overhead;
    if (n > 0) acc += model.batch_runtime(static_cast<double>(n));
    out.push_back(acc);
  }
  return out;
}

double table3_total_runtime(double samples, double batch_size, double t_batch) {
  if (!(batch_size >= 1)) throw Error(ErrorKind::config, "batch size must be >= 1");
  return samples / batch_size * t_batch;
}

double table3_average_runtime(std::span<const double> samples, double batch_size, double t_batch) {
  if (samples.empty()) throw Error(ErrorKind::config, "no algorithms to average");
  double acc = 0;
  for (double s : samples) acc += table3_total_runtime(s, batch_size, t_batch);
  return acc / static_cast<double>(samples.size());
}

RuntimeCostModel default_runtime_model() {
  // 16/32/48 measured; 1, 8 and 24 lie on the 16-32 line.
  const double slope = (7.2 - 5.9) / 16.0;
  RuntimeCostModel m;
  m.characterized = {
      {1, 5.9 - 15 * slope, false}, {8, 5.9 - 8 * slope, false}, {16, 5.9, true},
      {24, 5.9 + 8 * slope, false}, {32, 7.2, true},             {48, 9.9, true},
  };
  return m;
}

}  // namespace cimdse
