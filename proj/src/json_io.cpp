#include "cimdse/json_io.hpp"

#include <fstream>

namespace cimdse {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, "malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j, int indent) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << j.dump(indent) << '\n';
}

json to_json(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  return std::get<std::string>(v);
}

Value value_from_json(const json& j) {
  if (j.is_number_integer() || j.is_number_unsigned()) return j.get<std::int64_t>();
  if (j.is_number_float()) {
    const double d = j.get<double>();
    const auto i = static_cast<std::int64_t>(d);
    if (static_cast<double>(i) != d) throw Error(ErrorKind::schema, "non-integer numeric value " + j.dump());
    return i;
  }
  if (j.is_string()) return j.get<std::string>();
  throw Error(ErrorKind::schema, "unsupported value " + j.dump());
}

json to_json(const DesignPoint& p) {
  json j = json::object();
  for (const auto& [k, v] : p.assignments()) j[k] = to_json(v);
  return j;
}

DesignPoint point_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::schema, "design point must be an object");
  std::map<std::string, Value> a;
  for (auto it = j.begin(); it != j.end(); ++it) a.emplace(it.key(), value_from_json(it.value()));
  return DesignPoint(std::move(a));
}

json to_json(const DesignSpace& space) {
  json params = json::array();
  for (const auto& p : space.params()) {
    json e;
    e["name"] = p.name;
    e["kind"] = to_string(p.kind);
    e["values"] = json::array();
    for (const auto& v : p.values) e["values"].push_back(to_json(v));
    e["default"] = p.default_value ? to_json(*p.default_value) : json(nullptr);
    e["unit"] = p.unit;
    e["aliases"] = p.aliases;
    params.push_back(std::move(e));
  }
  json rules = json::array();
  for (const auto& r : space.rules()) rules.push_back(r.name);
  return json{{"name", space.name()}, {"params", params}, {"rules", rules}};
}

DesignSpace design_space_from_json(const json& j) {
  try {
    std::vector<ParameterDef> params;
    for (const auto& e : j.at("params")) {
      ParameterDef p;
      p.name = e.at("name").get<std::string>();
      p.kind = param_kind_from_string(e.value("kind", std::string("categorical")));
      for (const auto& v : e.at("values")) p.values.push_back(value_from_json(v));
      if (e.contains("default") && !e["default"].is_null()) p.default_value = value_from_json(e["default"]);
      p.unit = e.value("unit", std::string());
      if (e.contains("aliases")) p.aliases = e["aliases"].get<std::vector<std::string>>();
      params.push_back(std::move(p));
    }
    std::vector<ValidityRule> rules;
    if (j.contains("rules")) {
      for (const auto& r : j["rules"]) rules.push_back(builtin_rule(r.get<std::string>()));
    }
    return DesignSpace(std::move(params), std::move(rules), j.value("name", std::string()));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("malformed design-space schema: ") + e.what());
  }
}

DesignSpace load_design_space(const std::filesystem::path& path) { return design_space_from_json(read_json_file(path)); }

json to_json(const PpaRecord& r) {
  return json{{"area_mm2", r.area_mm2},
              {"power_mW", r.power_mW},
              {"latency_ms", r.latency_ms},
              {"energy_eff_TOPS_per_W", r.energy_eff},
              {"compute_eff_TOPS_per_mm2", r.compute_eff},
              {"throughput_TOPS", r.throughput},
              {"fom", r.fom}};
}

PpaRecord record_from_json(const json& j) {
  try {
    PpaRecord r;
    r.area_mm2 = j.at("area_mm2").get<double>();
    r.power_mW = j.at("power_mW").get<double>();
    r.latency_ms = j.at("latency_ms").get<double>();
    r.energy_eff = j.at("energy_eff_TOPS_per_W").get<double>();
    r.compute_eff = j.at("compute_eff_TOPS_per_mm2").get<double>();
    r.throughput = j.at("throughput_TOPS").get<double>();
    r.fom = j.at("fom").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, std::string("malformed PPA record: ") + e.what());
  }
}

namespace {

json device_json(const DeviceCoeffs& d) {
  return json{{"cell_area_um2", d.cell_area_um2},
              {"read_energy_fJ", d.read_energy_fJ},
              {"read_delay_ns", d.read_delay_ns},
              {"leakage_mW_per_mm2", d.leakage_mW_per_mm2}};
}

void read_device(const json& j, DeviceCoeffs& d) {
  d.cell_area_um2 = j.value("cell_area_um2", d.cell_area_um2);
  d.read_energy_fJ = j.value("read_energy_fJ", d.read_energy_fJ);
  d.read_delay_ns = j.value("read_delay_ns", d.read_delay_ns);
  d.leakage_mW_per_mm2 = j.value("leakage_mW_per_mm2", d.leakage_mW_per_mm2);
}

// Scalar fields shared by to_json/from_json.
template <typename Fn>
void visit_scalars(SurrogateConfig& c, Fn&& fn) {
  fn("flash_area_um2", c.flash_area_um2);
  fn("flash_energy_fJ", c.flash_energy_fJ);
  fn("flash_delay_ns", c.flash_delay_ns);
  fn("sar_area_um2", c.sar_area_um2);
  fn("sar_energy_fJ", c.sar_energy_fJ);
  fn("sar_delay_ns", c.sar_delay_ns);
  fn("adc_reference_rows", c.adc_reference_rows);
  fn("wordline_area_um2", c.wordline_area_um2);
  fn("column_area_um2", c.column_area_um2);
  fn("bitline_delay_ns_per_row", c.bitline_delay_ns_per_row);
  fn("wordline_delay_ns_per_col", c.wordline_delay_ns_per_col);
  fn("tile_energy_pJ", c.tile_energy_pJ);
  fn("accumulate_energy_fJ", c.accumulate_energy_fJ);
  fn("buffer_energy_fJ", c.buffer_energy_fJ);
  fn("accumulate_area_um2", c.accumulate_area_um2);
  fn("accumulate_delay_ns", c.accumulate_delay_ns);
  fn("dcim_cell_area_um2", c.dcim_cell_area_um2);
  fn("dcim_tree_area_um2", c.dcim_tree_area_um2);
  fn("dcim_cell_energy_fJ", c.dcim_cell_energy_fJ);
  fn("dcim_pass_energy_pJ", c.dcim_pass_energy_pJ);
  fn("dcim_cycle_ns", c.dcim_cycle_ns);
  fn("dcim_tree_delay_ns", c.dcim_tree_delay_ns);
  fn("dcim_macros", c.dcim_macros);
  fn("bubble_factor", c.bubble_factor);
  fn("duplication_factor", c.duplication_factor);
  fn("global_area_mm2", c.global_area_mm2);
  fn("technode_nm", c.technode_nm);
  fn("noise_sigma", c.noise_sigma);
}

}  // namespace

json to_json(const SurrogateConfig& c) {
  json j;
  j["devices"] = {{"SRAM", device_json(c.sram)}, {"RRAM", device_json(c.rram)}, {"FeFET", device_json(c.fefet)}};
  auto copy = c;
  visit_scalars(copy, [&](const char* key, double& v) { j[key] = v; });
  j["input_bits"] = c.input_bits;
  j["weight_bits"] = c.weight_bits;
  j["noise"] = c.noise;
  j["seed"] = c.seed;
  return j;
}

SurrogateConfig surrogate_config_from_json(const json& j) {
  SurrogateConfig c;
  try {
    if (j.contains("devices")) {
      const auto& d = j["devices"];
      if (d.contains("SRAM")) read_device(d["SRAM"], c.sram);
      if (d.contains("RRAM")) read_device(d["RRAM"], c.rram);
      if (d.contains("FeFET")) read_device(d["FeFET"], c.fefet);
    }
    visit_scalars(c, [&](const char* key, double& v) { v = j.value(key, v); });
    c.input_bits = j.value("input_bits", c.input_bits);
    c.weight_bits = j.value("weight_bits", c.weight_bits);
    c.noise = j.value("noise", c.noise);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::model_config, std::string("malformed surrogate config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const RuntimeCostModel& m) {
  json pts = json::array();
  for (const auto& p : m.characterized) {
    pts.push_back({{"batch", p.batch}, {"minutes", p.minutes}, {"source", p.measured ? "measured" : "filled"}});
  }
  return json{{"characterized", pts}, {"logic_overhead_min", m.logic_overhead}};
}

RuntimeCostModel runtime_model_from_json(const json& j) {
  RuntimeCostModel m;
  try {
    for (const auto& p : j.at("characterized")) {
      m.characterized.push_back(
          {p.at("batch").get<double>(), p.at("minutes").get<double>(), p.value("source", "measured") == "measured"});
    }
    m.logic_overhead = j.value("logic_overhead_min", 0.0);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("malformed runtime model: ") + e.what());
  }
  m.validate();
  return m;
}

json to_json(const RunTrace& t) { return json(t.evals); }

RunTrace trace_from_json(const json& j) { return RunTrace{j.get<std::vector<std::size_t>>()}; }

}  // namespace cimdse
