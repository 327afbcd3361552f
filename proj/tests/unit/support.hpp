#pragma once

#include <filesystem>
#include <string>

#include "cimdse/design_space.hpp"
#include "cimdse/json_io.hpp"

namespace test {

inline std::filesystem::path data(const std::string& rel) { return std::filesystem::path(CIMDSE_DATA_DIR) / rel; }

inline cimdse::DesignSpace space(const std::string& name) {
  return cimdse::load_design_space(data("schemas/" + name + ".json"));
}

inline cimdse::ParameterDef ordinal(const std::string& name, std::initializer_list<std::int64_t> vals) {
  cimdse::ParameterDef p;
  p.name = name;
  p.kind = cimdse::ParamKind::ordinal;
  for (auto v : vals) p.values.emplace_back(v);
  return p;
}

inline cimdse::ParameterDef categorical(const std::string& name, std::initializer_list<const char*> vals) {
  cimdse::ParameterDef p;
  p.name = name;
  for (auto v : vals) p.values.emplace_back(std::string(v));
  return p;
}

// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cimdse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test
