#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cimdse/error.hpp"

namespace cimdse {

// Admissible values are either integers (subarray sizes, ADC bits) or labels
// (device, ADC type).
using Value = std::variant<std::int64_t, std::string>;

std::string to_string(const Value& v);

enum class ParamKind { categorical, ordinal };

const char* to_string(ParamKind kind) noexcept;
ParamKind param_kind_from_string(const std::string& s);

struct ParameterDef {
  std::string name;
  ParamKind kind = ParamKind::categorical;
  std::vector<Value> values;
  std::optional<Value> default_value;
  std::string unit;
  std::vector<std::string> aliases;

  // Throws schema error when values are empty, duplicated, not strictly
  // increasing (ordinal) or the default is not admissible.
  void validate() const;

  bool admits(const Value& v) const;
  // values.size() when absent.
  std::size_t index_of(const Value& v) const;
  // Declared default, or the first admissible value.
  const Value& fallback() const;
};

// One full assignment name -> value. Ordered so it can key maps and sort
// deterministically.
class DesignPoint {
 public:
  DesignPoint() = default;
  explicit DesignPoint(std::map<std::string, Value> assignments)
      : values_(std::move(assignments)) {}

  bool has(const std::string& name) const { return values_.count(name) != 0; }
  const Value& at(const std::string& name) const;
  std::int64_t integer(const std::string& name) const;
  const std::string& text(const std::string& name) const;
  void set(const std::string& name, Value v) { values_[name] = std::move(v); }
  void erase(const std::string& name) { values_.erase(name); }

  const std::map<std::string, Value>& assignments() const { return values_; }
  std::size_t size() const { return values_.size(); }

  // "name=value;..." in name order; stable across runs.
  std::string key() const;

  friend bool operator==(const DesignPoint& a, const DesignPoint& b) { return a.values_ == b.values_; }
  friend bool operator<(const DesignPoint& a, const DesignPoint& b) { return a.values_ < b.values_; }

 private:
  std::map<std::string, Value> values_;
};

struct ValidityRule {
  std::string name;
  std::vector<std::string> params;
  std::function<bool(const DesignPoint&)> holds;
};

// Named rules that schema files may reference. Currently:
//   row_ge_parallel_read : rowACIM >= 2^levelADC
const ValidityRule& builtin_rule(const std::string& name);
std::vector<std::string> builtin_rule_names();

class DesignSpace {
 public:
  DesignSpace() = default;
  DesignSpace(std::vector<ParameterDef> params, std::vector<ValidityRule> rules, std::string name = {});

  const std::string& name() const { return name_; }
  const std::vector<ParameterDef>& params() const { return params_; }
  const std::vector<ValidityRule>& rules() const { return rules_; }

  bool has(const std::string& name) const { return find(name) != nullptr; }
  const ParameterDef* find(const std::string& name) const;
  const ParameterDef& param(const std::string& name) const;
  std::vector<std::string> param_names() const;

  // Product of per-parameter cardinalities, ignoring rules.
  std::size_t cartesian_size() const;
  bool empty() const { return params_.empty(); }

  // All parameters assigned with admissible values and no foreign names.
  bool admits(const DesignPoint& p) const;
  bool satisfies_rules(const DesignPoint& p) const;

  // Copy with one parameter's admissible list replaced (order follows the
  // current list). Throws schema error if the new list is empty.
  DesignSpace with_values(const std::string& name, const std::vector<Value>& keep) const;
  // Each parameter's values are a subset of other's values for the same name.
  bool is_subspace_of(const DesignSpace& other) const;

  // Point built from defaults (first value when no default).
  DesignPoint default_point() const;

  friend bool operator==(const DesignSpace& a, const DesignSpace& b);

 private:
  std::string name_;
  std::vector<ParameterDef> params_;
  std::vector<ValidityRule> rules_;
};

struct Validity {
  bool ok = true;
  std::string violated_rule;
  explicit operator bool() const { return ok; }
};

// Cartesian product filtered by rules; lexicographic over declaration order
// (first declared parameter varies slowest).
std::vector<DesignPoint> enumerate(const DesignSpace& space);
std::size_t count_valid(const DesignSpace& space);

Validity check_validity(const DesignPoint& point, const DesignSpace& space);

// Shared parameters with intersected value lists (base order) and the rules
// whose parameters all survive. Throws transfer_infeasible when nothing is
// shared.
DesignSpace intersection(const DesignSpace& base, const DesignSpace& target);

struct Bounds {
  Value min;
  Value max;
};
std::map<std::string, Bounds> boundary_values(const DesignSpace& space, const std::vector<std::string>& keys);

struct Bin {
  std::string label;
  std::vector<Value> members;
};

struct BinPartition {
  std::string parameter;
  std::vector<Bin> bins;
};

// Contiguous near-equal split; earlier bins take the extra element.
// Three bins are labelled small/mid/large.
BinPartition discretize_bins(const ParameterDef& param, std::size_t num_bins);

}  // namespace cimdse
