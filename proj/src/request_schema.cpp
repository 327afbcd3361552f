#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include "cimdse/request_engine.hpp"

namespace cimdse {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

const char* entry_type_name(EntryType t) {
  switch (t) {
    case EntryType::choice: return "choice";
    case EntryType::integer: return "integer";
    case EntryType::number: return "number";
    case EntryType::text: return "text";
    case EntryType::name_list: return "name_list";
  }
  return "choice";
}

EntryType entry_type_from_string(const std::string& s) {
  for (auto t : {EntryType::choice, EntryType::integer, EntryType::number, EntryType::text, EntryType::name_list}) {
    if (s == entry_type_name(t)) return t;
  }
  throw Error(ErrorKind::schema, "unknown entry type '" + s + "'");
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::set<RequestCategory> categories_from_json(const json& j) {
  std::set<RequestCategory> out;
  for (const auto& c : j) out.insert(request_category_from_string(c.get<std::string>()));
  return out;
}

json categories_to_json(const std::set<RequestCategory>& cats) {
  json out = json::array();
  for (auto c : cats) out.push_back(to_string(c));
  return out;
}

}  // namespace

const char* to_string(RequestCategory c) noexcept {
  switch (c) {
    case RequestCategory::single_call: return "SingleCall";
    case RequestCategory::multiple_call: return "MultipleCall";
    case RequestCategory::testbench_auto_design: return "TestbenchAutoDesign";
    case RequestCategory::ppa_optimization: return "PpaOptimization";
    case RequestCategory::unknown: return "Unknown";
  }
  return "Unknown";
}

RequestCategory request_category_from_string(const std::string& s) {
  for (auto c : {RequestCategory::single_call, RequestCategory::multiple_call, RequestCategory::testbench_auto_design,
                 RequestCategory::ppa_optimization, RequestCategory::unknown}) {
    if (s == to_string(c)) return c;
  }
  throw Error(ErrorKind::config, "unknown request category '" + s + "'");
}

std::string SchemaEntry::check(const std::string& value) const {
  if (value.empty()) return "empty value";
  switch (type) {
    case EntryType::choice:
      if (std::find(values.begin(), values.end(), value) == values.end()) return "not one of the supported values";
      return {};
    case EntryType::integer:
    case EntryType::number: {
      const auto v = parse_number(value);
      if (!v) return "not a number";
      if (type == EntryType::integer && *v != std::floor(*v)) return "not an integer";
      if (!values.empty()) {
        for (const auto& a : values) {
          if (parse_number(a) == v) return {};
        }
        return "not one of the supported values";
      }
      if (min && *v < *min) return "below the supported range";
      if (max && *v > *max) return "above the supported range";
      return {};
    }
    case EntryType::text:
    case EntryType::name_list:
      return {};
  }
  return {};
}

ParamSchema::ParamSchema(std::vector<SchemaEntry> entries, std::map<std::string, std::vector<std::string>> groups,
                         std::map<std::string, std::string> design_spaces, std::vector<std::string> rules)
    : entries_(std::move(entries)),
      groups_(std::move(groups)),
      design_spaces_(std::move(design_spaces)),
      rules_(std::move(rules)) {
  std::set<std::string> names;
  for (const auto& e : entries_) {
    if (e.name.empty()) throw Error(ErrorKind::schema, "request schema entry without a name");
    if (!names.insert(e.name).second) throw Error(ErrorKind::schema, "duplicate request entry '" + e.name + "'");
  }
  for (const auto& e : entries_) {
    for (const auto& key : std::vector<std::string>{e.name}) alias_index_[lower(key)] = e.name;
  }
  for (const auto& e : entries_) {
    for (const auto& a : e.aliases) {
      const auto key = lower(a);
      auto [it, fresh] = alias_index_.emplace(key, e.name);
      if (!fresh && it->second != e.name) {
        throw Error(ErrorKind::schema, "alias '" + a + "' maps to both '" + it->second + "' and '" + e.name + "'");
      }
    }
    if (e.default_value) {
      const auto why = e.check(*e.default_value);
      if (!why.empty()) throw Error(ErrorKind::schema, "default of '" + e.name + "' is invalid: " + why);
    }
    for (const auto& [v, spellings] : e.value_aliases) {
      if (std::find(e.values.begin(), e.values.end(), v) == e.values.end()) {
        throw Error(ErrorKind::schema, "value alias for unknown value '" + v + "' in '" + e.name + "'");
      }
    }
    for (const auto& [cond, vals] : e.required_when) {
      if (!names.count(cond)) throw Error(ErrorKind::schema, "'" + e.name + "' depends on unknown entry '" + cond + "'");
    }
  }
  for (const auto& [g, members] : groups_) {
    for (const auto& m : members) {
      if (!names.count(m)) throw Error(ErrorKind::schema, "group '" + g + "' names unknown entry '" + m + "'");
    }
  }
  for (const auto& r : rules_) builtin_rule(r);
}

const SchemaEntry* ParamSchema::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

const SchemaEntry& ParamSchema::at(const std::string& name) const {
  if (const auto* e = find(name)) return *e;
  throw Error(ErrorKind::not_found, "no request schema entry '" + name + "'");
}

std::optional<std::string> ParamSchema::resolve(const std::string& name_or_alias) const {
  auto it = alias_index_.find(lower(name_or_alias));
  if (it == alias_index_.end()) return std::nullopt;
  return it->second;
}

ParamSchema request_schema_from_json(const json& j) {
  std::vector<SchemaEntry> entries;
  std::map<std::string, std::vector<std::string>> groups;
  std::map<std::string, std::string> spaces;
  std::vector<std::string> rules;
  try {
    for (const auto& je : j.at("entries")) {
      SchemaEntry e;
      e.name = je.at("name").get<std::string>();
      e.type = entry_type_from_string(je.value("type", "choice"));
      if (je.contains("values")) {
        for (const auto& v : je.at("values")) e.values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
      }
      if (je.contains("min")) e.min = je.at("min").get<double>();
      if (je.contains("max")) e.max = je.at("max").get<double>();
      if (je.contains("default") && !je.at("default").is_null()) {
        const auto& d = je.at("default");
        e.default_value = d.is_string() ? d.get<std::string>() : d.dump();
      }
      e.unit = je.value("unit", "");
      if (je.contains("aliases")) e.aliases = je.at("aliases").get<std::vector<std::string>>();
      if (je.contains("value_aliases")) {
        e.value_aliases = je.at("value_aliases").get<std::map<std::string, std::vector<std::string>>>();
      }
      if (je.contains("categories")) e.categories = categories_from_json(je.at("categories"));
      if (je.contains("required")) e.required = categories_from_json(je.at("required"));
      if (je.contains("required_when")) {
        e.required_when = je.at("required_when").get<std::map<std::string, std::vector<std::string>>>();
      }
      e.extractor = je.value("extractor", "");
      e.group = je.value("group", "");
      e.sweepable = je.value("sweepable", false);
      entries.push_back(std::move(e));
    }
    if (j.contains("groups")) groups = j.at("groups").get<std::map<std::string, std::vector<std::string>>>();
    if (j.contains("design_spaces")) spaces = j.at("design_spaces").get<std::map<std::string, std::string>>();
    if (j.contains("rules")) rules = j.at("rules").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("malformed request schema: ") + e.what());
  }
  return ParamSchema(std::move(entries), std::move(groups), std::move(spaces), std::move(rules));
}

ParamSchema load_request_schema(const std::filesystem::path& path) { return request_schema_from_json(read_json_file(path)); }

json to_json(const ParamSchema& s) {
  json entries = json::array();
  for (const auto& e : s.entries()) {
    json je{{"name", e.name}, {"type", entry_type_name(e.type)}, {"unit", e.unit}, {"aliases", e.aliases},
            {"categories", categories_to_json(e.categories)}, {"required", categories_to_json(e.required)},
            {"extractor", e.extractor}, {"group", e.group}, {"sweepable", e.sweepable}};
    if (!e.values.empty()) je["values"] = e.values;
    if (e.min) je["min"] = *e.min;
    if (e.max) je["max"] = *e.max;
    if (e.default_value) je["default"] = *e.default_value;
    if (!e.value_aliases.empty()) je["value_aliases"] = e.value_aliases;
    if (!e.required_when.empty()) je["required_when"] = e.required_when;
    entries.push_back(std::move(je));
  }
  return json{{"entries", entries}, {"groups", s.groups()}, {"design_spaces", s.design_spaces()}, {"rules", s.rules()}};
}

}  // namespace cimdse
