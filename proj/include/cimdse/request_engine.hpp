#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cimdse/json_io.hpp"
#include "cimdse/optimizer.hpp"
#include "cimdse/pruning.hpp"

namespace cimdse {

enum class RequestCategory { single_call, multiple_call, testbench_auto_design, ppa_optimization, unknown };

const char* to_string(RequestCategory c) noexcept;  // "SingleCall", ...
RequestCategory request_category_from_string(const std::string& s);

// ---- schema ---------------------------------------------------------------

enum class EntryType { choice, integer, number, text, name_list };

struct SchemaEntry {
  std::string name;
  EntryType type = EntryType::choice;
  std::vector<std::string> values;  // admissible (choice, and integer when nonempty)
  std::optional<double> min;        // integer/number range when values is empty
  std::optional<double> max;
  std::optional<std::string> default_value;
  std::string unit;
  std::vector<std::string> aliases;
  std::map<std::string, std::vector<std::string>> value_aliases;  // canonical value -> spellings
  std::set<RequestCategory> categories;  // applicable
  std::set<RequestCategory> required;    // required in these categories ...
  std::map<std::string, std::vector<std::string>> required_when;  // ... when these entries resolve to one of the values
  std::string extractor;  // built-in text extractor; see the request schema file
  std::string group;      // workload, hardware, accuracy, optimization
  bool sweepable = false;

  bool applies(RequestCategory c) const { return categories.count(c) != 0; }
  // Empty string when admissible, else the reason.
  std::string check(const std::string& value) const;
};

class ParamSchema {
 public:
  ParamSchema() = default;
  ParamSchema(std::vector<SchemaEntry> entries, std::map<std::string, std::vector<std::string>> groups,
              std::map<std::string, std::string> design_spaces, std::vector<std::string> rules);

  const std::vector<SchemaEntry>& entries() const { return entries_; }
  const SchemaEntry* find(const std::string& name) const;
  const SchemaEntry& at(const std::string& name) const;
  // Canonical entry for a name or alias (case-insensitive); nullopt if unknown.
  std::optional<std::string> resolve(const std::string& name_or_alias) const;
  // Group aliases such as "subarray size" -> {rowACIM, colACIM}.
  const std::map<std::string, std::vector<std::string>>& groups() const { return groups_; }
  // Model name -> design-space schema file (relative to the schema directory).
  const std::map<std::string, std::string>& design_spaces() const { return design_spaces_; }
  const std::vector<std::string>& rules() const { return rules_; }

 private:
  std::vector<SchemaEntry> entries_;
  std::map<std::string, std::vector<std::string>> groups_;
  std::map<std::string, std::string> design_spaces_;
  std::vector<std::string> rules_;
  std::map<std::string, std::string> alias_index_;
};

// Throws schema error on duplicate names, non-injective aliases or invalid
// defaults.
ParamSchema request_schema_from_json(const json& j);
ParamSchema load_request_schema(const std::filesystem::path& path);
json to_json(const ParamSchema& s);

// ---- parsed requests --------------------------------------------------------

// 0 = common scope, 1..n = testbench index.
using Location = std::size_t;
constexpr Location kCommon = 0;

std::string location_string(Location loc);  // "common" or "testbench N"

struct MissingEntry {
  Location location = kCommon;
  std::string name;
  friend bool operator==(const MissingEntry&, const MissingEntry&) = default;
};

struct InvalidEntry {
  Location location = kCommon;
  std::string name;
  std::string value;
  std::string reason;
  friend bool operator==(const InvalidEntry&, const InvalidEntry&) = default;
};

enum class ValueSource { text, sweep, defaults, adjustment };
const char* to_string(ValueSource s) noexcept;

struct Provenance {
  ValueSource source = ValueSource::text;
  std::string evidence;  // normalized request fragment for text/sweep values
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

using ParamMap = std::map<std::string, std::string>;

struct ParsedRequest {
  RequestCategory category = RequestCategory::unknown;
  std::vector<ParamMap> testbenches;  // specialized parameters, testbench i at [i-1]
  ParamMap common;
  std::vector<MissingEntry> missing;
  std::vector<InvalidEntry> invalid;
  std::vector<std::string> notes;
  std::map<std::pair<Location, std::string>, Provenance> provenance;

  bool ready() const { return missing.empty() && invalid.empty(); }
  // Value seen by testbench `index` (1-based): specialized, then common.
  std::optional<std::string> lookup(Location index, const std::string& name) const;
  friend bool operator==(const ParsedRequest&, const ParsedRequest&) = default;
};

json to_json(const ParsedRequest& p);
ParsedRequest parsed_request_from_json(const json& j);

// Lower-case, unit and punctuation normalization applied before matching.
std::string normalize_request_text(const std::string& text);

// Re-derives the scope partition (promotion/demotion), compacts indices and
// recomputes missing/invalid. Idempotent.
void finalize(ParsedRequest& p, const ParamSchema& schema);

// ---- backends -------------------------------------------------------------

struct Classification {
  RequestCategory category = RequestCategory::unknown;
  std::string rationale;
  std::string clarification;  // set for unknown
};

class InterpreterBackend {
 public:
  virtual ~InterpreterBackend() = default;
  virtual std::string name() const = 0;
  virtual Classification classify(const std::string& text, const ParamSchema& schema) = 0;
  virtual ParsedRequest parse(const std::string& text, RequestCategory category, const ParamSchema& schema) = 0;
};

// Rule/pattern interpreter over the normalized text.
class DeterministicBackend final : public InterpreterBackend {
 public:
  std::string name() const override { return "deterministic"; }
  Classification classify(const std::string& text, const ParamSchema& schema) override;
  ParsedRequest parse(const std::string& text, RequestCategory category, const ParamSchema& schema) override;
};

// HTTP+JSON client. Request body:
//   {"version": 1, "task": "classify"|"parse", "request", "category", "schema"}
// Response body: {"ok": true, "result": {...}} or {"ok": false, "error"}.
// The API key, if any, comes from the environment variable named by
// api_key_env and is sent as a bearer token.
class HttpLlmBackend final : public InterpreterBackend {
 public:
  struct Options {
    std::string endpoint;  // e.g. http://127.0.0.1:8080/v1/interpret
    std::string api_key_env = "CIMDSE_LLM_API_KEY";
    int timeout_s = 60;
  };
  explicit HttpLlmBackend(Options opts);

  std::string name() const override { return "http-llm"; }
  Classification classify(const std::string& text, const ParamSchema& schema) override;
  ParsedRequest parse(const std::string& text, RequestCategory category, const ParamSchema& schema) override;

 private:
  json call(const json& body);
  Options opts_;
  std::string base_;
  std::string path_;
};

// Nonempty text required (validation error otherwise); propagates backend
// errors.
Classification classify(const std::string& text, InterpreterBackend& backend, const ParamSchema& schema);
// Throws config error for the unknown category.
ParsedRequest parse_params(const std::string& text, RequestCategory category, const ParamSchema& schema,
                           InterpreterBackend& backend);

// ---- adjustment -------------------------------------------------------------

struct AdjustOp {
  enum class Kind { set, remove, add_testbench, remove_testbench, use_defaults };
  Kind kind = Kind::set;
  Location location = kCommon;  // set/remove; scope for use_defaults
  bool all_scopes = false;      // use_defaults over every scope
  std::string name;
  std::string value;
  ParamMap params;  // add_testbench
  std::size_t index = 0;  // remove_testbench

  static AdjustOp set_value(Location loc, std::string name, std::string value);
  static AdjustOp remove_value(Location loc, std::string name);
  static AdjustOp add_testbench(ParamMap params);
  static AdjustOp remove_testbench(std::size_t index);
  static AdjustOp use_defaults(std::optional<Location> scope);  // nullopt = all
};

struct AdjustmentRequest {
  std::vector<AdjustOp> ops;
};

json to_json(const AdjustmentRequest& a);
AdjustmentRequest adjustment_from_json(const json& j);

// Applies ops in order then finalizes. Adjustment error names the failing op.
ParsedRequest adjust(const ParsedRequest& parsed, const AdjustmentRequest& adj, const ParamSchema& schema);

// Recognizes short follow-up messages ("use default values", "set ADC
// precision to 6 bit", "remove testbench 2"); nullopt when the text is not an
// adjustment.
std::optional<AdjustmentRequest> parse_adjustment_text(const std::string& text, const ParsedRequest& current,
                                                       const ParamSchema& schema);

// ---- plans ----------------------------------------------------------------

struct OptimizationPlan {
  std::string model;
  std::string dataset;
  double technode_nm = 22;
  std::string space_file;  // relative to the schema directory
  ParamMap pinned;         // parameters held fixed during the search
  Objective objective;
  std::vector<Constraint> constraints;
  OptimizerConfig optimizer;
  std::optional<PruningConfig> pruning;
  std::string base_model;       // when pruning
  std::string base_space_file;  // when pruning, relative to the schema directory
  friend bool operator==(const OptimizationPlan&, const OptimizationPlan&) = default;
};

struct ExecutionPlan {
  RequestCategory category = RequestCategory::unknown;
  std::vector<ParamMap> testbenches;  // fully resolved
  std::optional<OptimizationPlan> optimization;
  std::vector<std::string> notes;
  std::string hash;  // 16 hex digits, FNV-1a 64 over the canonical JSON
  friend bool operator==(const ExecutionPlan&, const ExecutionPlan&) = default;
};

std::uint64_t fnv1a64(const std::string& bytes);

// Canonical form (sorted keys); `with_hash` = false is what the hash covers.
json to_json(const ExecutionPlan& p, bool with_hash = true);
ExecutionPlan execution_plan_from_json(const json& j);

// not_ready error listing residual missing/invalid entries.
ExecutionPlan make_plan(const ParsedRequest& parsed, const ParamSchema& schema);

}  // namespace cimdse
