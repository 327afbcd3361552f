#include "cimdse/request_engine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "cimdse/result_io.hpp"

namespace cimdse {

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n.!");
  return s.substr(b, e - b + 1);
}

const char* source_name(ValueSource s) {
  switch (s) {
    case ValueSource::text: return "text";
    case ValueSource::sweep: return "sweep";
    case ValueSource::defaults: return "defaults";
    case ValueSource::adjustment: return "adjustment";
  }
  return "text";
}

ValueSource source_from_string(const std::string& s) {
  for (auto v : {ValueSource::text, ValueSource::sweep, ValueSource::defaults, ValueSource::adjustment}) {
    if (s == source_name(v)) return v;
  }
  throw Error(ErrorKind::config, "unknown value source '" + s + "'");
}

std::optional<std::int64_t> parse_int(const std::string& s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    auto item = trim(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Value an entry resolves to in testbench `tb` (1-based), defaults included.
std::optional<std::string> resolved(const ParsedRequest& p, Location tb, const SchemaEntry& e) {
  if (auto v = p.lookup(tb, e.name)) return v;
  return e.default_value;
}

bool condition_holds(const ParsedRequest& p, Location tb, const SchemaEntry& e, const ParamSchema& schema) {
  for (const auto& [cond, vals] : e.required_when) {
    const auto& ce = schema.at(cond);
    if (!ce.applies(p.category)) continue;
    const auto v = resolved(p, tb, ce);
    if (!v || std::find(vals.begin(), vals.end(), *v) == vals.end()) return false;
  }
  return true;
}

void move_provenance(ParsedRequest& p, Location from, Location to, const std::string& name) {
  auto it = p.provenance.find({from, name});
  if (it == p.provenance.end()) return;
  p.provenance[{to, name}] = it->second;
  if (from != to) p.provenance.erase({from, name});
}

void demote(ParsedRequest& p, const std::string& name) {
  auto it = p.common.find(name);
  if (it == p.common.end()) return;
  const auto value = it->second;
  const auto prov = p.provenance.find({kCommon, name});
  for (std::size_t i = 0; i < p.testbenches.size(); ++i) {
    if (p.testbenches[i].count(name)) continue;
    p.testbenches[i][name] = value;
    if (prov != p.provenance.end()) p.provenance[{i + 1, name}] = prov->second;
  }
  p.common.erase(name);
  p.provenance.erase({kCommon, name});
}

void erase_testbench(ParsedRequest& p, std::size_t index) {
  p.testbenches.erase(p.testbenches.begin() + static_cast<std::ptrdiff_t>(index - 1));
  std::map<std::pair<Location, std::string>, Provenance> moved;
  for (auto& [key, prov] : p.provenance) {
    if (key.first == index) continue;
    moved[{key.first > index ? key.first - 1 : key.first, key.second}] = prov;
  }
  p.provenance = std::move(moved);
}

std::string rule_reason(const std::string& rule) {
  if (rule == "row_ge_parallel_read") return "violates rule row_ge_parallel_read (rowACIM >= 2^levelADC)";
  return "violates rule " + rule;
}

}  // namespace

const char* to_string(ValueSource s) noexcept { return source_name(s); }

std::string location_string(Location loc) {
  return loc == kCommon ? std::string("common") : "testbench " + std::to_string(loc);
}

std::optional<std::string> ParsedRequest::lookup(Location index, const std::string& name) const {
  if (index >= 1 && index <= testbenches.size()) {
    const auto& tb = testbenches[index - 1];
    if (auto it = tb.find(name); it != tb.end()) return it->second;
  }
  if (auto it = common.find(name); it != common.end()) return it->second;
  return std::nullopt;
}

void finalize(ParsedRequest& p, const ParamSchema& schema) {
  if (p.testbenches.empty()) p.testbenches.emplace_back();

  // Drop empty values.
  for (auto it = p.common.begin(); it != p.common.end();) {
    if (it->second.empty()) {
      p.provenance.erase({kCommon, it->first});
      it = p.common.erase(it);
    } else {
      ++it;
    }
  }
  for (std::size_t i = 0; i < p.testbenches.size(); ++i) {
    auto& tb = p.testbenches[i];
    for (auto it = tb.begin(); it != tb.end();) {
      if (it->second.empty()) {
        p.provenance.erase({i + 1, it->first});
        it = tb.erase(it);
      } else {
        ++it;
      }
    }
  }

  // Demotion: a name specialized anywhere leaves the common scope.
  std::set<std::string> specialized;
  for (const auto& tb : p.testbenches) {
    for (const auto& [k, v] : tb) specialized.insert(k);
  }
  for (const auto& name : specialized) demote(p, name);

  // Promotion: identical in every testbench.
  for (const auto& name : specialized) {
    const auto& first = p.testbenches.front();
    auto it = first.find(name);
    if (it == first.end()) continue;
    const auto value = it->second;
    bool same = true;
    for (const auto& tb : p.testbenches) {
      auto jt = tb.find(name);
      same = same && jt != tb.end() && jt->second == value;
    }
    if (!same) continue;
    p.common[name] = value;
    move_provenance(p, 1, kCommon, name);
    for (std::size_t i = 0; i < p.testbenches.size(); ++i) {
      p.testbenches[i].erase(name);
      if (i > 0) p.provenance.erase({i + 1, name});
    }
  }

  // Provenance only for values that exist.
  for (auto it = p.provenance.begin(); it != p.provenance.end();) {
    const auto& [loc, name] = it->first;
    const bool present = loc == kCommon ? p.common.count(name) != 0
                                        : loc <= p.testbenches.size() && p.testbenches[loc - 1].count(name) != 0;
    it = present ? std::next(it) : p.provenance.erase(it);
  }

  const std::size_t n = p.testbenches.size();

  // Missing required entries.
  p.missing.clear();
  for (const auto& e : schema.entries()) {
    if (!e.applies(p.category) || !e.required.count(p.category)) continue;
    std::vector<Location> where;
    for (Location tb = 1; tb <= n; ++tb) {
      if (!condition_holds(p, tb, e, schema)) continue;
      if (!p.lookup(tb, e.name)) where.push_back(tb);
    }
    if (where.empty()) continue;
    if (where.size() == n) {
      p.missing.push_back({kCommon, e.name});
    } else {
      for (auto tb : where) p.missing.push_back({tb, e.name});
    }
  }

  // Invalid values.
  p.invalid.clear();
  auto check_scope = [&](Location loc, const ParamMap& values) {
    for (const auto& [name, value] : values) {
      const auto* e = schema.find(name);
      if (!e) {
        p.invalid.push_back({loc, name, value, "unknown parameter"});
        continue;
      }
      if (!e->applies(p.category)) {
        p.invalid.push_back({loc, name, value, std::string("not applicable to ") + to_string(p.category)});
        continue;
      }
      if (auto why = e->check(value); !why.empty()) {
        p.invalid.push_back({loc, name, value, why});
        continue;
      }
      if (name == "optimizeParams") {
        for (const auto& item : split_list(value)) {
          const auto* pe = schema.find(item);
          if (!pe || pe->group != "hardware" || item == "technode") {
            p.invalid.push_back({loc, name, value, "'" + item + "' is not a searchable hardware parameter"});
          }
        }
      }
    }
  };
  check_scope(kCommon, p.common);
  for (Location tb = 1; tb <= n; ++tb) check_scope(tb, p.testbenches[tb - 1]);

  if (p.category == RequestCategory::ppa_optimization && n > 1) {
    for (Location tb = 1; tb <= n; ++tb) {
      for (const auto& [name, value] : p.testbenches[tb - 1]) {
        p.invalid.push_back({tb, name, value, "optimization takes a single value"});
      }
    }
  }

  for (const auto& rname : schema.rules()) {
    const auto& rule = builtin_rule(rname);
    for (Location tb = 1; tb <= n; ++tb) {
      DesignPoint point;
      bool complete = true;
      for (const auto& param : rule.params) {
        const auto* e = schema.find(param);
        const auto v = e ? resolved(p, tb, *e) : std::nullopt;
        const auto iv = v ? parse_int(*v) : std::nullopt;
        if (!iv) {
          complete = false;
          break;
        }
        point.set(param, *iv);
      }
      if (!complete || rule.holds(point)) continue;
      const std::string anchor = rule.params.back();
      const Location loc = p.testbenches[tb - 1].count(anchor) ? tb : kCommon;
      const auto value = resolved(p, tb, schema.at(anchor)).value_or("");
      p.invalid.push_back({loc, anchor, value, rule_reason(rname)});
    }
  }

  if (p.category == RequestCategory::ppa_optimization) {
    for (const auto* name : {"model", "baseModel"}) {
      for (Location tb = 1; tb <= n; ++tb) {
        const auto v = p.lookup(tb, name);
        if (!v || schema.at(name).check(*v) != "" || schema.design_spaces().count(*v)) continue;
        const Location loc = p.testbenches[tb - 1].count(name) ? tb : kCommon;
        p.invalid.push_back({loc, name, *v, "no design space is available for this model"});
      }
    }
  }

  auto miss_key = [](const MissingEntry& m) { return std::tie(m.location, m.name); };
  std::sort(p.missing.begin(), p.missing.end(),
            [&](const MissingEntry& a, const MissingEntry& b) { return miss_key(a) < miss_key(b); });
  p.missing.erase(std::unique(p.missing.begin(), p.missing.end()), p.missing.end());
  auto inv_key = [](const InvalidEntry& i) { return std::tie(i.location, i.name, i.value, i.reason); };
  std::sort(p.invalid.begin(), p.invalid.end(),
            [&](const InvalidEntry& a, const InvalidEntry& b) { return inv_key(a) < inv_key(b); });
  p.invalid.erase(std::unique(p.invalid.begin(), p.invalid.end()), p.invalid.end());
}

// ---- JSON -------------------------------------------------------------------

json to_json(const ParsedRequest& p) {
  json missing = json::array();
  for (const auto& m : p.missing) {
    missing.push_back({{"location", m.location}, {"scope", location_string(m.location)}, {"name", m.name}});
  }
  json invalid = json::array();
  for (const auto& i : p.invalid) {
    invalid.push_back({{"location", i.location},
                       {"scope", location_string(i.location)},
                       {"name", i.name},
                       {"value", i.value},
                       {"reason", i.reason}});
  }
  json prov = json::array();
  for (const auto& [key, pr] : p.provenance) {
    prov.push_back({{"location", key.first}, {"name", key.second}, {"source", source_name(pr.source)}, {"evidence", pr.evidence}});
  }
  return json{{"category", to_string(p.category)},
              {"common", p.common},
              {"testbenches", p.testbenches},
              {"missing", missing},
              {"invalid", invalid},
              {"notes", p.notes},
              {"provenance", prov},
              {"ready", p.ready()}};
}

ParsedRequest parsed_request_from_json(const json& j) {
  ParsedRequest p;
  auto values = [](const json& obj) {
    ParamMap m;
    for (const auto& [k, v] : obj.items()) m[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return m;
  };
  try {
    p.category = request_category_from_string(j.at("category").get<std::string>());
    if (j.contains("common")) p.common = values(j.at("common"));
    if (j.contains("testbenches")) {
      for (const auto& tb : j.at("testbenches")) p.testbenches.push_back(values(tb));
    }
    if (j.contains("missing")) {
      for (const auto& m : j.at("missing")) p.missing.push_back({m.value("location", Location{0}), m.at("name").get<std::string>()});
    }
    if (j.contains("invalid")) {
      for (const auto& i : j.at("invalid")) {
        p.invalid.push_back({i.value("location", Location{0}), i.at("name").get<std::string>(), i.value("value", ""),
                             i.value("reason", "")});
      }
    }
    if (j.contains("notes")) p.notes = j.at("notes").get<std::vector<std::string>>();
    if (j.contains("provenance")) {
      for (const auto& pr : j.at("provenance")) {
        p.provenance[{pr.at("location").get<Location>(), pr.at("name").get<std::string>()}] = {
            source_from_string(pr.value("source", "text")), pr.value("evidence", "")};
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("malformed parsed request: ") + e.what());
  }
  return p;
}

// ---- adjustment -------------------------------------------------------------

AdjustOp AdjustOp::set_value(Location loc, std::string name, std::string value) {
  AdjustOp op;
  op.kind = Kind::set;
  op.location = loc;
  op.name = std::move(name);
  op.value = std::move(value);
  return op;
}

AdjustOp AdjustOp::remove_value(Location loc, std::string name) {
  AdjustOp op;
  op.kind = Kind::remove;
  op.location = loc;
  op.name = std::move(name);
  return op;
}

AdjustOp AdjustOp::add_testbench(ParamMap params) {
  AdjustOp op;
  op.kind = Kind::add_testbench;
  op.params = std::move(params);
  return op;
}

AdjustOp AdjustOp::remove_testbench(std::size_t index) {
  AdjustOp op;
  op.kind = Kind::remove_testbench;
  op.index = index;
  return op;
}

AdjustOp AdjustOp::use_defaults(std::optional<Location> scope) {
  AdjustOp op;
  op.kind = Kind::use_defaults;
  op.all_scopes = !scope.has_value();
  op.location = scope.value_or(kCommon);
  return op;
}

namespace {

const char* op_name(AdjustOp::Kind k) {
  switch (k) {
    case AdjustOp::Kind::set: return "set";
    case AdjustOp::Kind::remove: return "remove";
    case AdjustOp::Kind::add_testbench: return "add_testbench";
    case AdjustOp::Kind::remove_testbench: return "remove_testbench";
    case AdjustOp::Kind::use_defaults: return "use_defaults";
  }
  return "set";
}

AdjustOp::Kind op_kind_from_string(const std::string& s) {
  for (auto k : {AdjustOp::Kind::set, AdjustOp::Kind::remove, AdjustOp::Kind::add_testbench,
                 AdjustOp::Kind::remove_testbench, AdjustOp::Kind::use_defaults}) {
    if (s == op_name(k)) return k;
  }
  throw Error(ErrorKind::adjustment, "unknown adjustment op '" + s + "'");
}

// "common", "testbench N", or a bare integer.
Location location_from_json(const json& j) {
  if (j.is_number_unsigned() || j.is_number_integer()) {
    const auto v = j.get<std::int64_t>();
    if (v < 0) throw Error(ErrorKind::adjustment, "negative location");
    return static_cast<Location>(v);
  }
  const auto s = j.get<std::string>();
  if (s == "common") return kCommon;
  static const std::regex re(R"(^(?:testbench\s*)?(\d+)$)");
  std::smatch m;
  if (std::regex_match(s, m, re)) return static_cast<Location>(std::stoull(m.str(1)));
  throw Error(ErrorKind::adjustment, "unknown location '" + s + "'");
}

}  // namespace

json to_json(const AdjustmentRequest& a) {
  json ops = json::array();
  for (const auto& op : a.ops) {
    json o{{"op", op_name(op.kind)}};
    switch (op.kind) {
      case AdjustOp::Kind::set:
        o["location"] = location_string(op.location);
        o["name"] = op.name;
        o["value"] = op.value;
        break;
      case AdjustOp::Kind::remove:
        o["location"] = location_string(op.location);
        o["name"] = op.name;
        break;
      case AdjustOp::Kind::add_testbench: o["params"] = op.params; break;
      case AdjustOp::Kind::remove_testbench: o["index"] = op.index; break;
      case AdjustOp::Kind::use_defaults:
        o["location"] = op.all_scopes ? json("all") : json(location_string(op.location));
        break;
    }
    ops.push_back(std::move(o));
  }
  return json{{"ops", ops}};
}

AdjustmentRequest adjustment_from_json(const json& j) {
  AdjustmentRequest a;
  try {
    const json& ops = j.is_array() ? j : j.at("ops");
    for (const auto& o : ops) {
      const auto kind = op_kind_from_string(o.at("op").get<std::string>());
      AdjustOp op;
      op.kind = kind;
      switch (kind) {
        case AdjustOp::Kind::set:
          op.location = o.contains("location") ? location_from_json(o.at("location")) : kCommon;
          op.name = o.at("name").get<std::string>();
          op.value = o.at("value").is_string() ? o.at("value").get<std::string>() : o.at("value").dump();
          break;
        case AdjustOp::Kind::remove:
          op.location = o.contains("location") ? location_from_json(o.at("location")) : kCommon;
          op.name = o.at("name").get<std::string>();
          break;
        case AdjustOp::Kind::add_testbench:
          for (const auto& [k, v] : o.value("params", json::object()).items()) {
            op.params[k] = v.is_string() ? v.get<std::string>() : v.dump();
          }
          break;
        case AdjustOp::Kind::remove_testbench:
          op.index = static_cast<std::size_t>(location_from_json(o.at("index")));
          break;
        case AdjustOp::Kind::use_defaults:
          if (!o.contains("location") || o.at("location") == "all") {
            op.all_scopes = true;
          } else {
            op.location = location_from_json(o.at("location"));
          }
          break;
      }
      a.ops.push_back(std::move(op));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::adjustment, std::string("malformed adjustment: ") + e.what());
  }
  return a;
}

ParsedRequest adjust(const ParsedRequest& parsed, const AdjustmentRequest& adj, const ParamSchema& schema) {
  ParsedRequest p = parsed;
  finalize(p, schema);
  for (std::size_t i = 0; i < adj.ops.size(); ++i) {
    const auto& op = adj.ops[i];
    auto fail = [&](const std::string& why) {
      throw Error(ErrorKind::adjustment, "op " + std::to_string(i) + " (" + op_name(op.kind) + "): " + why);
    };
    auto resolve = [&](const std::string& name) {
      auto r = schema.resolve(name);
      if (!r) fail("unknown parameter '" + name + "'");
      return *r;
    };
    auto check_location = [&](Location loc) {
      if (loc > p.testbenches.size()) fail("no " + location_string(loc));
    };
    switch (op.kind) {
      case AdjustOp::Kind::set: {
        const auto name = resolve(op.name);
        check_location(op.location);
        if (op.value.empty()) fail("empty value for '" + name + "'");
        if (op.location == kCommon) {
          for (std::size_t t = 0; t < p.testbenches.size(); ++t) {
            p.testbenches[t].erase(name);
            p.provenance.erase({t + 1, name});
          }
          p.common[name] = op.value;
        } else {
          demote(p, name);
          p.testbenches[op.location - 1][name] = op.value;
        }
        p.provenance[{op.location, name}] = {ValueSource::adjustment, {}};
        break;
      }
      case AdjustOp::Kind::remove: {
        const auto name = resolve(op.name);
        check_location(op.location);
        if (op.location == kCommon) {
          bool any = p.common.erase(name) != 0;
          for (auto& tb : p.testbenches) any = tb.erase(name) != 0 || any;
          if (!any) fail("'" + name + "' is not set");
        } else {
          auto& tb = p.testbenches[op.location - 1];
          if (!tb.erase(name)) {
            if (!p.common.count(name)) fail("'" + name + "' is not set in " + location_string(op.location));
            demote(p, name);
            tb.erase(name);
          }
        }
        break;
      }
      case AdjustOp::Kind::add_testbench: {
        ParamMap tb;
        for (const auto& [k, v] : op.params) tb[resolve(k)] = v;
        p.testbenches.push_back(tb);
        for (const auto& [k, v] : tb) p.provenance[{p.testbenches.size(), k}] = {ValueSource::adjustment, {}};
        break;
      }
      case AdjustOp::Kind::remove_testbench:
        if (op.index < 1 || op.index > p.testbenches.size()) fail("no testbench " + std::to_string(op.index));
        if (p.testbenches.size() == 1) fail("cannot remove the only testbench");
        erase_testbench(p, op.index);
        break;
      case AdjustOp::Kind::use_defaults: {
        if (!op.all_scopes) check_location(op.location);
        const auto missing = p.missing;
        for (const auto& m : missing) {
          if (!op.all_scopes && m.location != op.location) continue;
          const auto& e = schema.at(m.name);
          if (!e.default_value) continue;
          if (m.location == kCommon) p.common[m.name] = *e.default_value;
          else p.testbenches[m.location - 1][m.name] = *e.default_value;
          p.provenance[{m.location, m.name}] = {ValueSource::defaults, {}};
        }
        break;
      }
    }
    finalize(p, schema);
  }
  return p;
}

namespace {

// Canonical spelling of a user-typed value for an entry; raw text when
// nothing matches so validation can report it.
std::string canonical_value(const SchemaEntry& e, const std::string& raw) {
  const auto v = lower(trim(raw));
  for (const auto& x : e.values) {
    if (lower(x) == v) return x;
  }
  for (const auto& [canon, spellings] : e.value_aliases) {
    for (const auto& s : spellings) {
      if (lower(s) == v) return canon;
    }
  }
  if (e.type == EntryType::integer || e.type == EntryType::number) {
    static const std::regex num(R"(^(-?\d+(?:\.\d+)?)\s*-?\s*([a-z%]*2?)$)");
    std::smatch m;
    if (std::regex_match(v, m, num)) {
      double d = std::stod(m.str(1));
      const auto unit = m.str(2);
      if (unit == "cm2") d *= 100;
      if (unit == "w") d *= 1000;
      if (d == std::floor(d) && std::abs(d) < 9e15) return std::to_string(static_cast<long long>(d));
      char buf[64];
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, d);
      return std::string(buf, ptr);
    }
  }
  if (v == "true" || v == "yes" || v == "enabled") {
    for (const auto* on : {"on", "1"}) {
      if (std::find(e.values.begin(), e.values.end(), on) != e.values.end()) return on;
    }
  }
  if (v == "false" || v == "no" || v == "disabled") {
    for (const auto* off : {"off", "0"}) {
      if (std::find(e.values.begin(), e.values.end(), off) != e.values.end()) return off;
    }
  }
  return trim(raw);
}

std::optional<std::vector<std::string>> resolve_group(const ParamSchema& schema, const std::string& phrase) {
  auto it = schema.groups().find(phrase);
  if (it == schema.groups().end()) return std::nullopt;
  return it->second;
}

}  // namespace

std::optional<AdjustmentRequest> parse_adjustment_text(const std::string& text, const ParsedRequest& current,
                                                       const ParamSchema& schema) {
  const auto s = normalize_request_text(text);
  AdjustmentRequest adj;

  static const std::regex defaults_re(R"(\buse\s+(?:the\s+)?defaults?(?:\s+values?)?(?:\s+for\s+(?:the\s+)?rest)?\b)");
  static const std::regex remove_tb_re(R"(\b(?:remove|delete|drop)\s+testbench\s+(\d+)\b)");
  static const std::regex add_tb_re(R"(\badd\s+(?:a\s+|another\s+|one\s+more\s+)?testbench(?:\s+(?:with|using|where)\s+(.*))?$)");
  static const std::regex set_re(
      R"(\b(?:set|change|make|use)\s+(?:the\s+)?([a-z][a-z0-9 _-]*?)\s+(?:to|=|as|at)\s+([a-z0-9.%/_-]+(?:\s?(?:nm|bits?|b|mm2|cm2|mw|w|us))?)(?:\s+(?:for|in|on)\s+testbench\s+(\d+))?(?=$|[\s,;.]))");
  static const std::regex unset_re(
      R"(\b(?:remove|unset|clear|drop)\s+(?:the\s+)?([a-z][a-z0-9 _-]*?)(?:\s+(?:from|in)\s+testbench\s+(\d+))?(?=$|[,;.]|\s+and\b))");

  std::smatch m;
  if (std::regex_search(s, m, add_tb_re)) {
    ParamMap params;
    const auto rest = m.str(1);
    if (!rest.empty()) {
      DeterministicBackend backend;
      auto parsed = backend.parse(rest, current.category == RequestCategory::unknown ? RequestCategory::single_call
                                                                                     : current.category,
                                  schema);
      params = parsed.common;
      if (!parsed.testbenches.empty()) {
        for (const auto& [k, v] : parsed.testbenches.front()) params[k] = v;
      }
      if (params.empty()) return std::nullopt;
    }
    adj.ops.push_back(AdjustOp::add_testbench(std::move(params)));
    return adj;
  }

  for (auto it = std::sregex_iterator(s.begin(), s.end(), remove_tb_re); it != std::sregex_iterator(); ++it) {
    adj.ops.push_back(AdjustOp::remove_testbench(std::stoull((*it).str(1))));
  }

  for (auto it = std::sregex_iterator(s.begin(), s.end(), set_re); it != std::sregex_iterator(); ++it) {
    const auto name = trim((*it).str(1));
    const auto raw = (*it).str(2);
    const Location loc = (*it)[3].matched ? std::stoull((*it).str(3)) : kCommon;
    if (name == "default" || name == "defaults" || name == "default values") continue;
    if (auto entry = schema.resolve(name)) {
      adj.ops.push_back(AdjustOp::set_value(loc, *entry, canonical_value(schema.at(*entry), raw)));
    } else if (auto group = resolve_group(schema, name)) {
      // "subarray size to 256x256" style
      static const std::regex dims(R"(^(\d+)x(\d+)$)");
      std::smatch dm;
      if (group->size() == 2 && std::regex_match(raw, dm, dims)) {
        adj.ops.push_back(AdjustOp::set_value(loc, (*group)[0], dm.str(1)));
        adj.ops.push_back(AdjustOp::set_value(loc, (*group)[1], dm.str(2)));
      } else {
        for (const auto& g : *group) adj.ops.push_back(AdjustOp::set_value(loc, g, canonical_value(schema.at(g), raw)));
      }
    }
  }

  for (auto it = std::sregex_iterator(s.begin(), s.end(), unset_re); it != std::sregex_iterator(); ++it) {
    const auto name = trim((*it).str(1));
    if (name.rfind("testbench", 0) == 0) continue;
    if (auto entry = schema.resolve(name)) {
      const Location loc = (*it)[2].matched ? std::stoull((*it).str(2)) : kCommon;
      adj.ops.push_back(AdjustOp::remove_value(loc, *entry));
    }
  }

  if (std::regex_search(s, m, defaults_re)) adj.ops.push_back(AdjustOp::use_defaults(std::nullopt));

  if (adj.ops.empty()) return std::nullopt;
  return adj;
}

// ---- plans ----------------------------------------------------------------

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json to_json(const ExecutionPlan& p, bool with_hash) {
  json opt = nullptr;
  if (p.optimization) {
    const auto& o = *p.optimization;
    json constraints = json::array();
    for (const auto& c : o.constraints) constraints.push_back(to_json(c));
    opt = json{{"model", o.model},
               {"dataset", o.dataset},
               {"technode_nm", o.technode_nm},
               {"space_file", o.space_file},
               {"pinned", o.pinned},
               {"objective", to_json(o.objective)},
               {"constraints", constraints},
               {"optimizer", to_json(o.optimizer)},
               {"pruning", o.pruning ? to_json(*o.pruning) : json(nullptr)},
               {"base_model", o.base_model},
               {"base_space_file", o.base_space_file}};
  }
  json j{{"category", to_string(p.category)}, {"testbenches", p.testbenches}, {"optimization", opt}, {"notes", p.notes}};
  if (with_hash) j["hash"] = p.hash;
  return j;
}

ExecutionPlan execution_plan_from_json(const json& j) {
  ExecutionPlan p;
  try {
    p.category = request_category_from_string(j.at("category").get<std::string>());
    p.testbenches = j.at("testbenches").get<std::vector<ParamMap>>();
    p.notes = j.value("notes", std::vector<std::string>{});
    if (j.contains("optimization") && !j.at("optimization").is_null()) {
      const auto& o = j.at("optimization");
      OptimizationPlan op;
      op.model = o.at("model").get<std::string>();
      op.dataset = o.at("dataset").get<std::string>();
      op.technode_nm = o.at("technode_nm").get<double>();
      op.space_file = o.at("space_file").get<std::string>();
      op.pinned = o.at("pinned").get<ParamMap>();
      op.objective = objective_from_json(o.at("objective"));
      for (const auto& c : o.at("constraints")) op.constraints.push_back(constraint_from_json(c));
      op.optimizer = optimizer_config_from_json(o.at("optimizer"));
      if (!o.at("pruning").is_null()) op.pruning = pruning_config_from_json(o.at("pruning"));
      op.base_model = o.value("base_model", "");
      op.base_space_file = o.value("base_space_file", "");
      p.optimization = std::move(op);
    }
    p.hash = j.value("hash", "");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("malformed execution plan: ") + e.what());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(p, false).dump())));
  if (!p.hash.empty() && p.hash != buf) throw Error(ErrorKind::config, "execution plan hash mismatch");
  p.hash = buf;
  return p;
}

ExecutionPlan make_plan(const ParsedRequest& parsed, const ParamSchema& schema) {
  ParsedRequest p = parsed;
  finalize(p, schema);
  if (p.category == RequestCategory::unknown) throw Error(ErrorKind::not_ready, "request category is Unknown");
  if (!p.ready()) {
    std::string msg;
    for (const auto& m : p.missing) msg += (msg.empty() ? "" : "; ") + std::string("missing ") + m.name + " (" + location_string(m.location) + ")";
    for (const auto& i : p.invalid) {
      msg += (msg.empty() ? "" : "; ") + std::string("invalid ") + i.name + "=" + i.value + " (" +
             location_string(i.location) + "): " + i.reason;
    }
    throw Error(ErrorKind::not_ready, msg);
  }

  ExecutionPlan plan;
  plan.category = p.category;
  for (Location tb = 1; tb <= p.testbenches.size(); ++tb) {
    ParamMap values;
    for (const auto& e : schema.entries()) {
      if (!e.applies(p.category)) continue;
      if (auto v = resolved(p, tb, e)) values[e.name] = *v;
    }
    plan.testbenches.push_back(std::move(values));
  }

  const auto& first = plan.testbenches.front();
  auto get = [&](const std::string& name) -> std::optional<std::string> {
    auto it = first.find(name);
    if (it == first.end()) return std::nullopt;
    return it->second;
  };

  if (p.category != RequestCategory::ppa_optimization) {
    bool accuracy = false;
    bool device = false;
    for (const auto& tb : plan.testbenches) {
      auto mode = tb.find("mode");
      accuracy = accuracy || (mode != tb.end() && mode->second != "ppa");
      device = device || tb.count("conductance") || tb.count("variation");
    }
    if (accuracy) plan.notes.push_back("accuracy is not modeled by the surrogate; only PPA metrics are reported");
    if (device) plan.notes.push_back("conductance and variation are recorded but do not affect the PPA surrogate");
  } else {
    OptimizationPlan o;
    o.model = *get("model");
    o.dataset = *get("dataset");
    o.technode_nm = std::stod(get("technode").value_or("22"));
    o.space_file = schema.design_spaces().at(o.model);

    const auto search = split_list(get("optimizeParams").value_or(""));
    for (const auto& e : schema.entries()) {
      if (e.group != "hardware" || e.name == "technode") continue;
      if (std::find(search.begin(), search.end(), e.name) != search.end()) continue;
      if (search.empty()) {
        if (auto v = p.lookup(1, e.name)) o.pinned[e.name] = *v;
      } else if (auto v = get(e.name)) {
        o.pinned[e.name] = *v;
      }
    }

    o.objective.metric = metric_from_string(*get("objectiveMetric"));
    if (auto dir = get("objectiveDirection")) {
      o.objective.direction = *dir == "minimize" ? Direction::minimize : Direction::maximize;
    } else {
      const bool smaller = o.objective.metric == Metric::power || o.objective.metric == Metric::area ||
                           o.objective.metric == Metric::latency;
      o.objective.direction = smaller ? Direction::minimize : Direction::maximize;
    }
    if (auto a = get("areaLimit")) o.constraints.push_back({Metric::area, std::stod(*a)});
    if (auto w = get("powerLimit")) o.constraints.push_back({Metric::power, std::stod(*w)});

    o.optimizer.algorithm = algorithm_from_string(*get("algorithm"));
    if (auto v = get("iterations")) o.optimizer.iterations = std::stoull(*v);
    if (auto v = get("optBatch")) o.optimizer.batch_size = std::stoull(*v);
    if (auto v = get("seed")) o.optimizer.seed = std::stoull(*v);
    o.optimizer.validate();

    if (get("pruning").value_or("off") == "on") {
      PruningConfig pc;
      if (auto v = get("rho")) pc.rho = std::stod(*v);
      if (auto v = get("tau")) pc.tau = std::stod(*v);
      pc.validate();
      o.pruning = pc;
      o.base_model = *get("baseModel");
      o.base_space_file = schema.design_spaces().at(o.base_model);
      if (o.base_model == o.model) plan.notes.push_back("base model equals the target model");
    }
    plan.optimization = std::move(o);
  }

  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(plan, false).dump())));
  plan.hash = buf;
  return plan;
}

// ---- backends -------------------------------------------------------------

HttpLlmBackend::HttpLlmBackend(Options opts) : opts_(std::move(opts)) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(opts_.endpoint, m, re)) {
    throw Error(ErrorKind::config, "backend endpoint must look like http://host:port/path, got '" + opts_.endpoint + "'");
  }
  base_ = m.str(1);
  path_ = m[2].matched ? m.str(2) : "/";
  if (base_.rfind("https://", 0) == 0) throw Error(ErrorKind::config, "https endpoints are not supported");
}

json HttpLlmBackend::call(const json& body) {
  httplib::Client cli(base_);
  cli.set_connection_timeout(opts_.timeout_s, 0);
  cli.set_read_timeout(opts_.timeout_s, 0);
  cli.set_write_timeout(opts_.timeout_s, 0);
  httplib::Headers headers;
  if (!opts_.api_key_env.empty()) {
    if (const char* key = std::getenv(opts_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  auto res = cli.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw Error(ErrorKind::backend, "request to " + base_ + path_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error(ErrorKind::backend, "backend returned HTTP " + std::to_string(res->status));
  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::backend, std::string("backend reply is not JSON: ") + e.what());
  }
  if (!reply.is_object() || !reply.value("ok", false)) {
    const auto err = reply.is_object() && reply.contains("error") ? reply.at("error").dump() : std::string("no detail");
    throw Error(ErrorKind::backend, "backend reported failure: " + err);
  }
  if (!reply.contains("result") || !reply.at("result").is_object()) throw Error(ErrorKind::backend, "backend reply lacks a result");
  return reply.at("result");
}

Classification HttpLlmBackend::classify(const std::string& text, const ParamSchema& schema) {
  const auto r = call(json{{"version", 1}, {"task", "classify"}, {"request", text}, {"category", nullptr}, {"schema", to_json(schema)}});
  Classification c;
  try {
    c.category = request_category_from_string(r.at("category").get<std::string>());
    c.rationale = r.value("rationale", "");
    c.clarification = r.value("clarification", "");
  } catch (const std::exception& e) {
    throw Error(ErrorKind::backend, std::string("malformed classification: ") + e.what());
  }
  return c;
}

ParsedRequest HttpLlmBackend::parse(const std::string& text, RequestCategory category, const ParamSchema& schema) {
  const auto r = call(
      json{{"version", 1}, {"task", "parse"}, {"request", text}, {"category", to_string(category)}, {"schema", to_json(schema)}});
  ParsedRequest p;
  try {
    json body = r;
    body["category"] = to_string(category);
    p = parsed_request_from_json(body);
  } catch (const Error& e) {
    throw Error(ErrorKind::backend, e.what());
  }
  // Missing/invalid are always recomputed locally.
  finalize(p, schema);
  return p;
}

Classification classify(const std::string& text, InterpreterBackend& backend, const ParamSchema& schema) {
  if (trim(text).empty()) throw Error(ErrorKind::validation, "request text is empty");
  return backend.classify(text, schema);
}

ParsedRequest parse_params(const std::string& text, RequestCategory category, const ParamSchema& schema,
                           InterpreterBackend& backend) {
  if (trim(text).empty()) throw Error(ErrorKind::validation, "request text is empty");
  if (category == RequestCategory::unknown) throw Error(ErrorKind::config, "cannot parse an Unknown request");
  auto p = backend.parse(text, category, schema);
  p.category = category;
  finalize(p, schema);
  return p;
}

}  // namespace cimdse
