#include "cimdse/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace cimdse {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t uniform_index(std::size_t n, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Uniform value of `p` other than `current` (p has at least two values).
Value other_value(const ParameterDef& p, const Value& current, Rng& rng) {
  const std::size_t cur = p.index_of(current);
  if (cur == p.values.size()) return p.values[uniform_index(p.values.size(), rng)];
  std::size_t j = uniform_index(p.values.size() - 1, rng);
  if (j >= cur) ++j;
  return p.values[j];
}

bool in_space(const DesignPoint& p, const DesignSpace& space) { return space.admits(p) && space.satisfies_rules(p); }

}  // namespace

// ---- objective / constraints ----------------------------------------------

double Objective::score(const PpaRecord& r) const {
  const double v = r.metric(metric);
  return direction == Direction::maximize ? v : -v;
}

void validate_constraints(std::span<const Constraint> constraints) {
  for (const auto& c : constraints) {
    if (c.metric != Metric::area && c.metric != Metric::power) {
      throw Error(ErrorKind::config, std::string("unsupported constraint metric '") + to_string(c.metric) + "'");
    }
    if (!(c.threshold > 0) || !std::isfinite(c.threshold)) {
      throw Error(ErrorKind::config, "constraint threshold must be positive");
    }
  }
}

bool feasible(const PpaRecord& record, std::span<const Constraint> constraints) {
  validate_constraints(constraints);
  for (const auto& c : constraints) {
    if (!(record.metric(c.metric) <= c.threshold)) return false;
  }
  return true;
}

const char* to_string(Algorithm a) noexcept {
  switch (a) {
    case Algorithm::rs: return "RS";
    case Algorithm::sa: return "SA";
    case Algorithm::ga: return "GA";
    case Algorithm::tpe: return "TPE";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (u == "RS" || u == "RANDOM" || u == "RANDOM SEARCH") return Algorithm::rs;
  if (u == "SA" || u == "SIMULATED ANNEALING" || u == "SIMULATE ANNEALING") return Algorithm::sa;
  if (u == "GA" || u == "GENETIC ALGORITHM" || u == "GENETIC") return Algorithm::ga;
  if (u == "TPE" || u == "TREE-STRUCTURED PARZEN ESTIMATOR") return Algorithm::tpe;
  throw Error(ErrorKind::config, "unknown algorithm '" + s + "'");
}

const char* to_string(RunStatus s) noexcept {
  return s == RunStatus::ok ? "ok" : "exhausted_infeasible";
}

void OptimizerConfig::validate() const {
  auto rate = [](double r, const char* what) {
    if (!(r > 0 && r <= 1)) throw Error(ErrorKind::config, std::string(what) + " must lie in (0, 1]");
  };
  if (iterations < 1) throw Error(ErrorKind::config, "iterations must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::config, "batch size must be >= 1");
  rate(sa.cooling, "SA cooling rate");
  if (!(sa.initial_temperature_fraction > 0)) throw Error(ErrorKind::config, "SA initial temperature must be positive");
  if (ga.parent_pool < 2) throw Error(ErrorKind::config, "GA parent pool must hold at least two parents");
  // A zero mutation rate is allowed: crossover alone still recombines.
  if (!(ga.mutation_rate >= 0 && ga.mutation_rate <= 1)) throw Error(ErrorKind::config, "GA mutation rate must lie in [0, 1]");
  rate(ga.crossover_rate, "GA crossover rate");
  rate(tpe.quantile, "TPE quantile");
  if (tpe.candidate_pool < 1) throw Error(ErrorKind::config, "TPE candidate pool must be >= 1");
}

// ---- history ----------------------------------------------------------------

const HistoryEntry* HistoryBuffer::find(const DesignPoint& p) const {
  auto it = index_.find(p);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const HistoryEntry& HistoryBuffer::add(HistoryEntry entry) {
  if (index_.count(entry.point)) throw Error(ErrorKind::state, "point already in history: " + entry.point.key());
  entry.eval_index = entries_.size();
  index_.emplace(entry.point, entries_.size());
  entries_.push_back(std::move(entry));
  const auto& e = entries_.back();
  if (e.feasible && (best_ >= entries_.size() || e.score > entries_[best_].score)) best_ = entries_.size() - 1;
  return e;
}

std::vector<const HistoryEntry*> HistoryBuffer::top_feasible(std::size_t n) const {
  std::vector<const HistoryEntry*> out;
  for (const auto& e : entries_) {
    if (e.feasible) out.push_back(&e);
  }
  std::stable_sort(out.begin(), out.end(), [](const HistoryEntry* a, const HistoryEntry* b) { return a->score > b->score; });
  if (out.size() > n) out.resize(n);
  return out;
}

// ---- evaluators ---------------------------------------------------------------

SurrogateEvaluator::SurrogateEvaluator(Workload workload, SurrogateConfig cfg, std::size_t parallelism)
    : workload_(std::move(workload)), cfg_(std::move(cfg)), parallelism_(std::max<std::size_t>(1, parallelism)) {
  workload_.validate();
  cfg_.validate();
}

std::vector<PpaRecord> SurrogateEvaluator::evaluate(std::span<const DesignPoint> points) {
  calls_ += points.size();
  return batch_simulate(points, workload_, cfg_, parallelism_);
}

std::vector<PpaRecord> FunctionEvaluator::evaluate(std::span<const DesignPoint> points) {
  calls_ += points.size();
  std::vector<PpaRecord> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(fn_(p));
  return out;
}

// ---- building blocks ------------------------------------------------------------

DesignPoint sample_uniform(const DesignSpace& space, Rng& rng) {
  if (space.empty()) throw Error(ErrorKind::validity, "cannot sample from an empty space");
  for (int attempt = 0; attempt < 4096; ++attempt) {
    DesignPoint p;
    for (const auto& def : space.params()) p.set(def.name, def.values[uniform_index(def.values.size(), rng)]);
    if (space.satisfies_rules(p)) return p;
  }
  // Rules reject almost everything; fall back to exact enumeration.
  const auto all = enumerate(space);
  if (all.empty()) throw Error(ErrorKind::validity, "space '" + space.name() + "' has no valid point");
  return all[uniform_index(all.size(), rng)];
}

DesignPoint sa_propose(const DesignPoint& current, const DesignSpace& space, Rng& rng) {
  std::vector<const ParameterDef*> movable;
  for (const auto& def : space.params()) {
    if (def.values.size() > 1) movable.push_back(&def);
  }
  if (movable.empty()) throw Error(ErrorKind::validity, "no parameter can move in space '" + space.name() + "'");

  for (int attempt = 0; attempt < 64; ++attempt) {
    const std::size_t k = std::min<std::size_t>(1 + uniform_index(2, rng), movable.size());
    DesignPoint next = current;
    std::vector<std::size_t> order(movable.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t j = 0; j < k; ++j) {
      std::swap(order[j], order[j + uniform_index(order.size() - j, rng)]);
      const ParameterDef& def = *movable[order[j]];
      next.set(def.name, other_value(def, current.at(def.name), rng));
    }
    if (space.satisfies_rules(next)) return next;
  }
  for (int attempt = 0; attempt < 64; ++attempt) {
    DesignPoint p = sample_uniform(space, rng);
    if (!(p == current)) return p;
  }
  throw Error(ErrorKind::validity, "space '" + space.name() + "' has no valid point other than the current one");
}

double acceptance_probability(double delta, double temperature) {
  if (!(delta > 0)) return 1.0;
  if (!std::isfinite(delta) || !(temperature > 0)) return 0.0;
  return std::exp(-delta / temperature);
}

bool metropolis_accept(double delta, double temperature, Rng& rng) {
  const double p = acceptance_probability(delta, temperature);
  if (p >= 1.0) return true;
  return uniform01(rng) < p;
}

std::vector<DesignPoint> ga_step(std::span<const DesignPoint> parents, const DesignSpace& space, const GaConfig& cfg,
                                 std::size_t count, Rng& rng) {
  if (parents.size() < 2) throw Error(ErrorKind::config, "GA step needs at least two parents");
  std::vector<DesignPoint> children;
  children.reserve(count);
  while (children.size() < count) {
    DesignPoint child;
    bool valid = false;
    for (int attempt = 0; attempt < 32 && !valid; ++attempt) {
      const std::size_t a = uniform_index(parents.size(), rng);
      std::size_t b = uniform_index(parents.size() - 1, rng);
      if (b >= a) ++b;
      const bool cross = uniform01(rng) < cfg.crossover_rate;
      child = DesignPoint();
      for (const auto& def : space.params()) {
        const DesignPoint& from = (cross && uniform01(rng) < 0.5) ? parents[b] : parents[a];
        Value v = from.at(def.name);
        if (def.values.size() > 1 && uniform01(rng) < cfg.mutation_rate) v = other_value(def, v, rng);
        child.set(def.name, std::move(v));
      }
      valid = space.satisfies_rules(child);
    }
    // Repair: a fresh random point is still a legal "random admissible" source.
    if (!valid) child = sample_uniform(space, rng);
    children.push_back(std::move(child));
  }
  return children;
}

namespace {

// History entries inside `space`, best first (stable on evaluation order).
std::vector<const HistoryEntry*> ranked_in_space(const HistoryBuffer& history, const DesignSpace& space) {
  std::vector<const HistoryEntry*> out;
  for (const auto& e : history.entries()) {
    if (space.admits(e.point)) out.push_back(&e);
  }
  std::stable_sort(out.begin(), out.end(), [](const HistoryEntry* a, const HistoryEntry* b) { return a->score > b->score; });
  return out;
}

}  // namespace

TpeDensities tpe_densities(const HistoryBuffer& history, const DesignSpace& space, double quantile) {
  const auto ranked = ranked_in_space(history, space);
  std::size_t feasible_count = 0;
  for (const auto* e : ranked) feasible_count += e->feasible ? 1 : 0;
  std::size_t n_good = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(ranked.size())));
  n_good = std::min(std::max<std::size_t>(n_good, 1), feasible_count);

  TpeDensities d;
  d.good_count = n_good;
  d.bad_count = ranked.size() - n_good;
  for (const auto& def : space.params()) {
    std::vector<double> good(def.values.size(), 1.0), bad(def.values.size(), 1.0);
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      const std::size_t j = def.index_of(ranked[i]->point.at(def.name));
      (i < n_good ? good : bad)[j] += 1.0;
    }
    const double k = static_cast<double>(def.values.size());
    for (auto& g : good) g /= static_cast<double>(d.good_count) + k;
    for (auto& b : bad) b /= static_cast<double>(d.bad_count) + k;
    d.good.emplace(def.name, std::move(good));
    d.bad.emplace(def.name, std::move(bad));
  }
  return d;
}

TpeProposal tpe_propose(const HistoryBuffer& history, const DesignSpace& space, const TpeConfig& cfg,
                        std::size_t count, Rng& rng) {
  TpeProposal out;
  std::set<DesignPoint> chosen;
  auto fill_uniform = [&] {
    for (std::size_t attempt = 0; out.points.size() < count && attempt < 64 * count; ++attempt) {
      DesignPoint p = sample_uniform(space, rng);
      if (history.find(p) || chosen.count(p)) continue;
      chosen.insert(p);
      out.points.push_back(std::move(p));
    }
  };

  bool any_feasible = false;
  for (const auto& e : history.entries()) any_feasible = any_feasible || (e.feasible && space.admits(e.point));
  if (!any_feasible) {
    out.uniform_fallback = true;
    fill_uniform();
    return out;
  }

  const TpeDensities d = tpe_densities(history, space, cfg.quantile);
  struct Scored {
    DesignPoint point;
    double log_ratio;
  };
  std::vector<Scored> pool;
  std::set<DesignPoint> seen;
  for (std::size_t attempt = 0; pool.size() < cfg.candidate_pool && attempt < 8 * cfg.candidate_pool; ++attempt) {
    DesignPoint p;
    double lr = 0;
    for (const auto& def : space.params()) {
      const auto& g = d.good.at(def.name);
      const std::size_t j = std::discrete_distribution<std::size_t>(g.begin(), g.end())(rng);
      p.set(def.name, def.values[j]);
      lr += std::log(g[j]) - std::log(d.bad.at(def.name)[j]);
    }
    if (!space.satisfies_rules(p) || history.find(p) || !seen.insert(p).second) continue;
    pool.push_back({std::move(p), lr});
  }
  std::stable_sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) { return a.log_ratio > b.log_ratio; });
  for (auto& s : pool) {
    if (out.points.size() == count) break;
    chosen.insert(s.point);
    out.points.push_back(std::move(s.point));
  }
  fill_uniform();
  return out;
}

// ---- strategies ---------------------------------------------------------------

class SearchStrategy {
 public:
  virtual ~SearchStrategy() = default;
  virtual std::vector<DesignPoint> propose(const DesignSpace& active, const HistoryBuffer& history, Rng& rng,
                                           std::vector<std::string>& notes, std::size_t iteration) = 0;
  virtual void update(const std::vector<const HistoryEntry*>& /*batch*/, const HistoryBuffer& /*history*/,
                      Rng& /*rng*/) {}
};

namespace {

// Up to `count` distinct points not yet in history, drawn by `gen`; falls
// back to already-seen points when the generator keeps repeating.
template <typename Gen>
std::vector<DesignPoint> fresh_batch(std::size_t count, const HistoryBuffer& history, Gen&& gen) {
  std::vector<DesignPoint> out;
  std::set<DesignPoint> chosen;
  std::vector<DesignPoint> repeats;
  for (std::size_t attempt = 0; out.size() < count && attempt < 32 * count; ++attempt) {
    DesignPoint p = gen();
    if (chosen.count(p)) continue;
    if (history.find(p)) {
      if (repeats.size() < count) repeats.push_back(p);
      continue;
    }
    chosen.insert(p);
    out.push_back(std::move(p));
  }
  for (auto& p : repeats) {
    if (out.size() == count) break;
    if (chosen.insert(p).second) out.push_back(std::move(p));
  }
  return out;
}

class RandomStrategy final : public SearchStrategy {
 public:
  explicit RandomStrategy(std::size_t batch) : batch_(batch) {}

  std::vector<DesignPoint> propose(const DesignSpace& active, const HistoryBuffer& history, Rng& rng,
                                   std::vector<std::string>&, std::size_t) override {
    if (!space_ || !(*space_ == active)) {
      space_ = active;
      order_ = enumerate(active);
      std::shuffle(order_.begin(), order_.end(), rng);
      cursor_ = 0;
    }
    std::vector<DesignPoint> out;
    while (out.size() < batch_ && cursor_ < order_.size()) {
      const DesignPoint& p = order_[cursor_++];
      if (!history.find(p)) out.push_back(p);
    }
    return out;
  }

 private:
  std::size_t batch_;
  std::optional<DesignSpace> space_;
  std::vector<DesignPoint> order_;
  std::size_t cursor_ = 0;
};

// batch_size chains share one history and one temperature; each chain moves
// by the Metropolis rule on its own proposal.
class AnnealingStrategy final : public SearchStrategy {
 public:
  AnnealingStrategy(std::size_t batch, SaConfig cfg) : batch_(batch), cfg_(cfg) {}

  std::vector<DesignPoint> propose(const DesignSpace& active, const HistoryBuffer& history, Rng& rng,
                                   std::vector<std::string>&, std::size_t) override {
    std::set<DesignPoint> chosen;
    std::vector<DesignPoint> out;
    if (chains_.empty()) {
      out = fresh_batch(batch_, history, [&] { return sample_uniform(active, rng); });
      return out;
    }
    for (auto& c : chains_) {
      if (!in_space(c.point, active)) {
        c.point = sample_uniform(active, rng);
        c.score = kNegInf;
      }
      DesignPoint next;
      for (int attempt = 0; attempt < 16; ++attempt) {
        next = sa_propose(c.point, active, rng);
        if (!history.find(next) && !chosen.count(next)) break;
      }
      chosen.insert(next);
      out.push_back(std::move(next));
    }
    return out;
  }

  void update(const std::vector<const HistoryEntry*>& batch, const HistoryBuffer&, Rng& rng) override {
    if (chains_.empty()) {
      for (const auto* e : batch) chains_.push_back({e->point, e->score});
    } else {
      for (std::size_t i = 0; i < chains_.size() && i < batch.size(); ++i) {
        auto& c = chains_[i];
        const auto* e = batch[i];
        if (!e->feasible) {
          if (c.score == kNegInf) c = {e->point, e->score};
          continue;
        }
        if (c.score == kNegInf || metropolis_accept(c.score - e->score, temperature_.value_or(0), rng)) {
          c = {e->point, e->score};
        }
      }
    }
    if (temperature_) {
      *temperature_ *= cfg_.cooling;
    } else {
      for (const auto* e : batch) {
        if (e->feasible && (!temperature_ || cfg_.initial_temperature_fraction * std::abs(e->score) > *temperature_)) {
          temperature_ = cfg_.initial_temperature_fraction * std::abs(e->score);
        }
      }
    }
  }

  // Best chain state, for inspection.
  const DesignPoint* current() const {
    const Chain* best = nullptr;
    for (const auto& c : chains_) {
      if (c.score != kNegInf && (!best || c.score > best->score)) best = &c;
    }
    return best ? &best->point : nullptr;
  }

 private:
  struct Chain {
    DesignPoint point;
    double score;
  };
  std::size_t batch_;
  SaConfig cfg_;
  std::vector<Chain> chains_;
  std::optional<double> temperature_;
};

class GeneticStrategy final : public SearchStrategy {
 public:
  GeneticStrategy(std::size_t batch, GaConfig cfg) : batch_(batch), cfg_(cfg) {}

  std::vector<DesignPoint> propose(const DesignSpace& active, const HistoryBuffer& history, Rng& rng,
                                   std::vector<std::string>&, std::size_t) override {
    std::vector<DesignPoint> parents;
    for (const auto* e : ranked_in_space(history, active)) {
      if (parents.size() == cfg_.parent_pool || !e->feasible) break;
      if (active.satisfies_rules(e->point)) parents.push_back(e->point);
    }
    if (parents.size() < 2) return fresh_batch(batch_, history, [&] { return sample_uniform(active, rng); });
    std::vector<DesignPoint> buffer;
    auto out = fresh_batch(batch_, history, [&] {
      if (buffer.empty()) buffer = ga_step(parents, active, cfg_, batch_, rng);
      DesignPoint p = std::move(buffer.back());
      buffer.pop_back();
      return p;
    });
    // Converged population: replace repeated children with random immigrants.
    std::set<DesignPoint> chosen(out.begin(), out.end());
    for (auto& p : out) {
      if (!history.find(p)) continue;
      for (int attempt = 0; attempt < 64; ++attempt) {
        DesignPoint q = sample_uniform(active, rng);
        if (history.find(q) || chosen.count(q)) continue;
        chosen.insert(q);
        p = std::move(q);
        break;
      }
    }
    return out;
  }

 private:
  std::size_t batch_;
  GaConfig cfg_;
};

class TpeStrategy final : public SearchStrategy {
 public:
  TpeStrategy(std::size_t batch, TpeConfig cfg) : batch_(batch), cfg_(cfg) {}

  std::vector<DesignPoint> propose(const DesignSpace& active, const HistoryBuffer& history, Rng& rng,
                                   std::vector<std::string>& notes, std::size_t iteration) override {
    if (history.empty()) return fresh_batch(batch_, history, [&] { return sample_uniform(active, rng); });
    auto prop = tpe_propose(history, active, cfg_, batch_, rng);
    if (prop.uniform_fallback) {
      notes.push_back("iteration " + std::to_string(iteration) + ": TPE found no feasible history, sampled uniformly");
    }
    return std::move(prop.points);
  }

 private:
  std::size_t batch_;
  TpeConfig cfg_;
};

std::unique_ptr<SearchStrategy> make_strategy(const OptimizerConfig& cfg) {
  switch (cfg.algorithm) {
    case Algorithm::rs: return std::make_unique<RandomStrategy>(cfg.batch_size);
    case Algorithm::sa:
      return std::make_unique<AnnealingStrategy>(cfg.batch_size, cfg.sa);
    case Algorithm::ga: return std::make_unique<GeneticStrategy>(cfg.batch_size, cfg.ga);
    case Algorithm::tpe: return std::make_unique<TpeStrategy>(cfg.batch_size, cfg.tpe);
  }
  throw Error(ErrorKind::config, "unknown algorithm");
}

}  // namespace

// ---- optimizer loop -------------------------------------------------------------

Optimizer::Optimizer(Objective objective, std::vector<Constraint> constraints, OptimizerConfig cfg,
                     Evaluator& evaluator)
    : objective_(objective), constraints_(std::move(constraints)), cfg_(cfg), evaluator_(evaluator), rng_(cfg.seed) {
  cfg_.validate();
  validate_constraints(constraints_);
  strategy_ = make_strategy(cfg_);
  history_.trace.evals.assign(cfg_.iterations, 0);
}

Optimizer::~Optimizer() = default;

std::vector<const HistoryEntry*> Optimizer::record(std::span<const DesignPoint> points, std::size_t iteration) {
  std::vector<DesignPoint> fresh;
  std::set<DesignPoint> pending;
  for (const auto& p : points) {
    if (!history_.find(p) && pending.insert(p).second) fresh.push_back(p);
  }
  if (!fresh.empty()) {
    const auto records = evaluator_.evaluate(fresh);
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      HistoryEntry e;
      e.point = fresh[i];
      e.record = records[i];
      e.feasible = feasible(records[i], constraints_);
      e.score = e.feasible ? objective_.score(records[i]) : kNegInf;
      e.iteration = iteration;
      history_.add(std::move(e));
    }
    history_.trace.evals[iteration - 1] += fresh.size();
  }
  std::vector<const HistoryEntry*> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(history_.find(p));
  return out;
}

std::vector<const HistoryEntry*> Optimizer::evaluate_extra(std::span<const DesignPoint> points) {
  const std::size_t it = done() ? cfg_.iterations : iteration_ + 1;
  return record(points, it);
}

void Optimizer::step(const DesignSpace& active) {
  if (done()) throw Error(ErrorKind::state, "optimizer already ran all iterations");
  const std::size_t it = ++iteration_;
  const auto candidates = strategy_->propose(active, history_, rng_, notes_, it);
  const auto batch = record(candidates, it);
  strategy_->update(batch, history_, rng_);
  ConvergencePoint c;
  c.iteration = it;
  c.evaluations = history_.size();
  if (const auto* b = history_.best_feasible()) c.best = b->record.metric(objective_.metric);
  convergence_.push_back(c);
}

OptResult Optimizer::finish(const RuntimeCostModel& runtime) const {
  OptResult r;
  r.history = history_;
  r.trace = history_.trace;
  r.trace.evals.resize(iteration_ == 0 ? 1 : iteration_);
  if (const auto* b = history_.best_feasible()) {
    r.status = RunStatus::ok;
    r.best = *b;
    r.first_best_iteration = b->iteration;
  }
  const auto est = estimate_runtime(r.trace, runtime);
  r.estimated_runtime_min = est.minutes;
  r.runtime_clamped = est.clamped;
  r.convergence = convergence_;
  r.notes = notes_;
  return r;
}

OptResult run(const DesignSpace& space, const Objective& objective, std::span<const Constraint> constraints,
              const OptimizerConfig& cfg, Evaluator& evaluator, const RuntimeCostModel& runtime) {
  if (count_valid(space) == 0) throw Error(ErrorKind::validity, "space '" + space.name() + "' has no valid point");
  Optimizer opt(objective, std::vector<Constraint>(constraints.begin(), constraints.end()), cfg, evaluator);
  while (!opt.done()) opt.step(space);
  return opt.finish(runtime);
}

}  // namespace cimdse
