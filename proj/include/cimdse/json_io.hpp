#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "cimdse/design_space.hpp"
#include "cimdse/runtime_model.hpp"
#include "cimdse/surrogate.hpp"

namespace cimdse {

using json = nlohmann::json;

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j, int indent = 2);

json to_json(const Value& v);
Value value_from_json(const json& j);

json to_json(const DesignPoint& p);
DesignPoint point_from_json(const json& j);

// { "name", "params": [{name, kind, values, default, unit, aliases}], "rules": [...] }
json to_json(const DesignSpace& space);
DesignSpace design_space_from_json(const json& j);
DesignSpace load_design_space(const std::filesystem::path& path);

// Fixed field names: area_mm2, power_mW, latency_ms, energy_eff_TOPS_per_W,
// compute_eff_TOPS_per_mm2, throughput_TOPS, fom.
json to_json(const PpaRecord& r);
PpaRecord record_from_json(const json& j);

// Partial objects override the defaults.
json to_json(const SurrogateConfig& c);
SurrogateConfig surrogate_config_from_json(const json& j);

json to_json(const RuntimeCostModel& m);
RuntimeCostModel runtime_model_from_json(const json& j);

json to_json(const RunTrace& t);
RunTrace trace_from_json(const json& j);

}  // namespace cimdse
