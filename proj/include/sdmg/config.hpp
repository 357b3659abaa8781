#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "sdmg/dataset.hpp"
#include "sdmg/errors.hpp"
#include "sdmg/model.hpp"
#include "sdmg/training.hpp"

namespace sdmg {

/// Flat `key = value` lines; `#` starts a comment, blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", no);
    auto key = detail::trim(std::string_view(line).substr(0, eq));
    auto value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", no);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
};

/// Applies one setting. `preset` (full, desk, toy) resets every model field.
inline void apply_setting(RunConfig& rc, const std::string& key, const std::string& value) {
  if (key == "preset") {
    if (value == "full") rc.model = ModelConfig::full();
    else if (value == "desk") rc.model = ModelConfig::desk();
    else if (value == "toy") rc.model = ModelConfig::toy();
    else throw ValidationError("unknown preset '" + value + "' (full, desk, toy)");
    return;
  }
  if (key == "ablation") {
    apply_ablation(rc.model, value);
    return;
  }
  if (set_field(rc.model, key, value) || set_field(rc.train, key, value)) return;
  throw ValidationError("unknown setting '" + key + "'");
}

inline void apply_config_file(RunConfig& rc, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  for (const auto& [k, v] : parse_key_values(in)) apply_setting(rc, k, v);
}

}  // namespace sdmg
