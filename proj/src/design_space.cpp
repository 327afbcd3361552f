#include "cimdse/design_space.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace cimdse {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::schema: return "schema";
    case ErrorKind::partition: return "partition";
    case ErrorKind::transfer_infeasible: return "transfer-infeasible";
    case ErrorKind::validity: return "validity";
    case ErrorKind::model_config: return "model-config";
    case ErrorKind::config: return "config";
    case ErrorKind::domain: return "domain";
    case ErrorKind::degenerate_fit: return "degenerate-fit";
    case ErrorKind::projection_infeasible: return "projection-infeasible";
    case ErrorKind::adjustment: return "adjustment";
    case ErrorKind::not_ready: return "not-ready";
    case ErrorKind::backend: return "backend";
    case ErrorKind::state: return "state";
    case ErrorKind::not_found: return "not-found";
    case ErrorKind::io: return "io";
    case ErrorKind::validation: return "validation";
  }
  return "unknown";
}

std::string to_string(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  return std::get<std::string>(v);
}

const char* to_string(ParamKind kind) noexcept {
  return kind == ParamKind::ordinal ? "ordinal" : "categorical";
}

ParamKind param_kind_from_string(const std::string& s) {
  if (s == "ordinal" || s == "ordinal-numeric") return ParamKind::ordinal;
  if (s == "categorical") return ParamKind::categorical;
  throw Error(ErrorKind::schema, "unknown parameter kind '" + s + "'");
}

// ---------------------------------------------------------------------------

void ParameterDef::validate() const {
  if (name.empty()) throw Error(ErrorKind::schema, "parameter without a name");
  if (values.empty()) throw Error(ErrorKind::schema, "parameter '" + name + "' has no values");
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = i + 1; j < values.size(); ++j) {
      if (values[i] == values[j]) {
        throw Error(ErrorKind::schema, "parameter '" + name + "' repeats value " + to_string(values[i]));
      }
    }
  }
  if (kind == ParamKind::ordinal) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!std::holds_alternative<std::int64_t>(values[i])) {
        throw Error(ErrorKind::schema, "ordinal parameter '" + name + "' has non-numeric value");
      }
      if (i > 0 && !(std::get<std::int64_t>(values[i - 1]) < std::get<std::int64_t>(values[i]))) {
        throw Error(ErrorKind::schema, "ordinal parameter '" + name + "' values not strictly increasing");
      }
    }
  }
  if (default_value && !admits(*default_value)) {
    throw Error(ErrorKind::schema, "default of '" + name + "' is not an admissible value");
  }
}

bool ParameterDef::admits(const Value& v) const { return index_of(v) < values.size(); }

std::size_t ParameterDef::index_of(const Value& v) const {
  return static_cast<std::size_t>(std::find(values.begin(), values.end(), v) - values.begin());
}

const Value& ParameterDef::fallback() const {
  if (default_value) return *default_value;
  return values.front();
}

// ---------------------------------------------------------------------------

const Value& DesignPoint::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw Error(ErrorKind::schema, "point does not assign '" + name + "'");
  return it->second;
}

std::int64_t DesignPoint::integer(const std::string& name) const {
  const auto& v = at(name);
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  throw Error(ErrorKind::schema, "parameter '" + name + "' is not numeric");
}

const std::string& DesignPoint::text(const std::string& name) const {
  const auto& v = at(name);
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  throw Error(ErrorKind::schema, "parameter '" + name + "' is not a label");
}

std::string DesignPoint::key() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    if (!out.empty()) out += ';';
    out += k;
    out += '=';
    out += to_string(v);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<ValidityRule> make_builtin_rules() {
  std::vector<ValidityRule> rules;
  // Parallel read activates 2^levelADC rows; a subarray with fewer rows
  // cannot provide them.
  rules.push_back({"row_ge_parallel_read", {"rowACIM", "levelADC"}, [](const DesignPoint& p) {
                     const auto rows = p.integer("rowACIM");
                     const auto bits = p.integer("levelADC");
                     if (bits < 0 || bits > 62) return false;
                     return rows >= (std::int64_t{1} << bits);
                   }});
  return rules;
}

const std::vector<ValidityRule>& builtin_rules() {
  static const std::vector<ValidityRule> rules = make_builtin_rules();
  return rules;
}

}  // namespace

const ValidityRule& builtin_rule(const std::string& name) {
  for (const auto& r : builtin_rules()) {
    if (r.name == name) return r;
  }
  throw Error(ErrorKind::schema, "unknown validity rule '" + name + "'");
}

std::vector<std::string> builtin_rule_names() {
  std::vector<std::string> names;
  for (const auto& r : builtin_rules()) names.push_back(r.name);
  return names;
}

// ---------------------------------------------------------------------------

DesignSpace::DesignSpace(std::vector<ParameterDef> params, std::vector<ValidityRule> rules, std::string name)
    : name_(std::move(name)), params_(std::move(params)), rules_(std::move(rules)) {
  std::set<std::string> seen;
  for (const auto& p : params_) {
    p.validate();
    if (!seen.insert(p.name).second) throw Error(ErrorKind::schema, "duplicate parameter '" + p.name + "'");
  }
  std::set<std::string> rule_names;
  for (const auto& r : rules_) {
    if (!rule_names.insert(r.name).second) throw Error(ErrorKind::schema, "duplicate rule '" + r.name + "'");
    for (const auto& ref : r.params) {
      if (!seen.count(ref)) {
        throw Error(ErrorKind::schema, "rule '" + r.name + "' references undeclared parameter '" + ref + "'");
      }
    }
  }
}

const ParameterDef* DesignSpace::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const ParameterDef& DesignSpace::param(const std::string& name) const {
  if (const auto* p = find(name)) return *p;
  throw Error(ErrorKind::schema, "space has no parameter '" + name + "'");
}

std::vector<std::string> DesignSpace::param_names() const {
  std::vector<std::string> names;
  names.reserve(params_.size());
  for (const auto& p : params_) names.push_back(p.name);
  return names;
}

std::size_t DesignSpace::cartesian_size() const {
  if (params_.empty()) return 0;
  std::size_t n = 1;
  for (const auto& p : params_) n *= p.values.size();
  return n;
}

bool DesignSpace::admits(const DesignPoint& p) const {
  if (p.size() != params_.size()) return false;
  for (const auto& def : params_) {
    const auto& a = p.assignments();
    auto it = a.find(def.name);
    if (it == a.end() || !def.admits(it->second)) return false;
  }
  return true;
}

bool DesignSpace::satisfies_rules(const DesignPoint& p) const {
  for (const auto& r : rules_) {
    if (!r.holds(p)) return false;
  }
  return true;
}

DesignSpace DesignSpace::with_values(const std::string& name, const std::vector<Value>& keep) const {
  auto params = params_;
  bool found = false;
  for (auto& def : params) {
    if (def.name != name) continue;
    found = true;
    std::vector<Value> kept;
    for (const auto& v : def.values) {
      if (std::find(keep.begin(), keep.end(), v) != keep.end()) kept.push_back(v);
    }
    if (kept.empty()) throw Error(ErrorKind::schema, "restriction leaves '" + name + "' without values");
    if (def.default_value && std::find(kept.begin(), kept.end(), *def.default_value) == kept.end()) {
      def.default_value.reset();
    }
    def.values = std::move(kept);
  }
  if (!found) throw Error(ErrorKind::schema, "space has no parameter '" + name + "'");
  return DesignSpace(std::move(params), rules_, name_);
}

bool DesignSpace::is_subspace_of(const DesignSpace& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (const auto& def : params_) {
    const auto* o = other.find(def.name);
    if (!o) return false;
    for (const auto& v : def.values) {
      if (!o->admits(v)) return false;
    }
  }
  return true;
}

DesignPoint DesignSpace::default_point() const {
  std::map<std::string, Value> a;
  for (const auto& def : params_) a.emplace(def.name, def.fallback());
  return DesignPoint(std::move(a));
}

bool operator==(const DesignSpace& a, const DesignSpace& b) {
  if (a.params_.size() != b.params_.size()) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    const auto& x = a.params_[i];
    const auto& y = b.params_[i];
    if (x.name != y.name || x.values != y.values) return false;
  }
  if (a.rules_.size() != b.rules_.size()) return false;
  for (std::size_t i = 0; i < a.rules_.size(); ++i) {
    if (a.rules_[i].name != b.rules_[i].name) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_assignment(const DesignSpace& space, Fn&& fn) {
  const auto& params = space.params();
  if (params.empty()) return;
  std::vector<std::size_t> idx(params.size(), 0);
  std::map<std::string, Value> a;
  for (const auto& def : params) a.emplace(def.name, def.values.front());
  DesignPoint point(a);
  while (true) {
    fn(point);
    // Odometer: last declared parameter varies fastest.
    std::size_t k = params.size();
    while (k > 0) {
      --k;
      if (++idx[k] < params[k].values.size()) {
        point.set(params[k].name, params[k].values[idx[k]]);
        break;
      }
      idx[k] = 0;
      point.set(params[k].name, params[k].values[0]);
      if (k == 0) return;
    }
  }
}

}  // namespace

std::vector<DesignPoint> enumerate(const DesignSpace& space) {
  std::vector<DesignPoint> out;
  for_each_assignment(space, [&](const DesignPoint& p) {
    if (space.satisfies_rules(p)) out.push_back(p);
  });
  return out;
}

std::size_t count_valid(const DesignSpace& space) {
  std::size_t n = 0;
  for_each_assignment(space, [&](const DesignPoint& p) {
    if (space.satisfies_rules(p)) ++n;
  });
  return n;
}

Validity check_validity(const DesignPoint& point, const DesignSpace& space) {
  for (const auto& [name, v] : point.assignments()) {
    const auto* def = space.find(name);
    if (!def) throw Error(ErrorKind::schema, "point assigns unknown parameter '" + name + "'");
    if (!def->admits(v)) {
      throw Error(ErrorKind::schema, "value " + to_string(v) + " is not admissible for '" + name + "'");
    }
  }
  for (const auto& def : space.params()) {
    if (!point.has(def.name)) throw Error(ErrorKind::schema, "point does not assign '" + def.name + "'");
  }
  for (const auto& r : space.rules()) {
    if (!r.holds(point)) return Validity{false, r.name};
  }
  return Validity{};
}

DesignSpace intersection(const DesignSpace& base, const DesignSpace& target) {
  std::vector<ParameterDef> shared;
  for (const auto& b : base.params()) {
    const auto* t = target.find(b.name);
    if (!t) continue;
    ParameterDef def = b;
    def.values.clear();
    for (const auto& v : b.values) {
      if (t->admits(v)) def.values.push_back(v);
    }
    if (def.values.empty()) {
      throw Error(ErrorKind::transfer_infeasible, "parameter '" + b.name + "' shares no values");
    }
    if (def.default_value && !def.admits(*def.default_value)) {
      def.default_value = t->default_value && def.admits(*t->default_value) ? t->default_value : std::nullopt;
    }
    for (const auto& alias : t->aliases) {
      if (std::find(def.aliases.begin(), def.aliases.end(), alias) == def.aliases.end()) def.aliases.push_back(alias);
    }
    shared.push_back(std::move(def));
  }
  if (shared.empty()) throw Error(ErrorKind::transfer_infeasible, "spaces share no parameters");

  auto survives = [&](const ValidityRule& r) {
    return std::all_of(r.params.begin(), r.params.end(), [&](const std::string& n) {
      return std::any_of(shared.begin(), shared.end(), [&](const ParameterDef& d) { return d.name == n; });
    });
  };
  std::vector<ValidityRule> rules;
  std::set<std::string> names;
  for (const auto* src : {&base, &target}) {
    for (const auto& r : src->rules()) {
      if (survives(r) && names.insert(r.name).second) rules.push_back(r);
    }
  }
  return DesignSpace(std::move(shared), std::move(rules), base.name() + "&" + target.name());
}

std::map<std::string, Bounds> boundary_values(const DesignSpace& space, const std::vector<std::string>& keys) {
  std::map<std::string, Bounds> out;
  for (const auto& k : keys) {
    const auto& def = space.param(k);
    out.emplace(k, Bounds{def.values.front(), def.values.back()});
  }
  return out;
}

BinPartition discretize_bins(const ParameterDef& param, std::size_t num_bins) {
  const std::size_t k = param.values.size();
  if (num_bins == 0) throw Error(ErrorKind::partition, "bin count must be at least 1");
  if (num_bins > k) {
    throw Error(ErrorKind::partition, "cannot split " + std::to_string(k) + " values of '" + param.name + "' into " +
                                          std::to_string(num_bins) + " bins");
  }
  static const char* const kThree[] = {"small", "mid", "large"};
  BinPartition part;
  part.parameter = param.name;
  const std::size_t base = k / num_bins;
  const std::size_t extra = k % num_bins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < num_bins; ++b) {
    const std::size_t len = base + (b < extra ? 1 : 0);
    Bin bin;
    bin.label = num_bins == 3 ? kThree[b] : (num_bins == 1 ? "all" : "bin" + std::to_string(b));
    bin.members.assign(param.values.begin() + static_cast<std::ptrdiff_t>(pos),
                       param.values.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    part.bins.push_back(std::move(bin));
  }
  return part;
}

}  // namespace cimdse
