#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdmg/errors.hpp"
#include "sdmg/model.hpp"
#include "sdmg/training.hpp"

// Checkpoint directory: manifest.json (format version, model config, ordered
// parameter names and shapes, optional optimizer header) and params.bin
// (little-endian float32 values in manifest order, then Adam first and
// second moments when an optimizer state is stored).
namespace sdmg {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_f32(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  for (int k = 0; k < 4; ++k) out += static_cast<char>((u >> (8 * k)) & 0xFF);
}

inline float get_f32(const unsigned char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
                          static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& dir, const Model<T>& model, const AdamState<T>* opt = nullptr) {
  std::filesystem::create_directories(dir);
  const auto& entries = model.params().entries();
  nlohmann::json params = nlohmann::json::array();
  std::string blob;
  for (const auto& e : entries) {
    params.push_back({{"name", e.name}, {"shape", e.tensor.shape()}});
    for (T x : e.tensor.data()) detail::put_f32(blob, static_cast<float>(x));
  }
  nlohmann::json manifest = {{"format_version", kCheckpointVersion},
                             {"model_config", to_json(model.config())},
                             {"dtype", "float32"},
                             {"params", std::move(params)}};
  if (opt && opt->m.size() == entries.size()) {
    manifest["optimizer"] = {{"kind", "adam"}, {"step", opt->step}, {"beta1", opt->beta1}, {"beta2", opt->beta2}, {"eps", opt->eps}};
    for (const auto* moments : {&opt->m, &opt->v})
      for (const auto& buf : *moments)
        for (T x : buf) detail::put_f32(blob, static_cast<float>(x));
  } else {
    manifest["optimizer"] = nullptr;
  }
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  detail::write_file(dir / "params.bin", blob);
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const std::string text = detail::read_file(dir / "manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
  }
  if (!m.is_object() || !m.contains("format_version") || !m["format_version"].is_number_integer())
    throw CheckpointError("manifest lacks an integer format_version");
  const int version = m["format_version"].get<int>();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  if (!m.contains("model_config") || !m.contains("params") || !m["params"].is_array())
    throw CheckpointError("manifest lacks model_config or params");
  return m;
}

inline ModelConfig checkpoint_config(const std::filesystem::path& dir) {
  return model_config_from_json(read_manifest(dir)["model_config"]);
}

/// Loads parameters (and the optimizer state, when stored and requested)
/// into `model`, whose parameter list must match the manifest exactly.
template <class T>
void load_checkpoint_into(const std::filesystem::path& dir, Model<T>& model, AdamState<T>* opt = nullptr) {
  const auto manifest = read_manifest(dir);
  auto& entries = model.params().entries();
  const auto& listed = manifest["params"];
  if (listed.size() != entries.size())
    throw CheckpointShapeError("checkpoint has " + std::to_string(listed.size()) + " parameters, model has " +
                               std::to_string(entries.size()));
  std::size_t total = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& item = listed[k];
    Shape shape;
    std::string name;
    try {
      name = item.at("name").get<std::string>();
      shape = item.at("shape").get<Shape>();
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("malformed parameter entry: ") + e.what());
    }
    if (name != entries[k].name || shape != entries[k].tensor.shape())
      throw CheckpointShapeError("parameter " + std::to_string(k) + ": checkpoint has " + name + " " + shape_str(shape) +
                                 ", model expects " + entries[k].name + " " + shape_str(entries[k].tensor.shape()));
    total += entries[k].tensor.numel();
  }
  const bool has_opt = manifest.contains("optimizer") && manifest["optimizer"].is_object();
  const std::size_t need = (has_opt ? 3 : 1) * total * 4;
  const std::string blob = detail::read_file(dir / "params.bin");
  if (blob.size() < need)
    throw CheckpointTruncatedError("params.bin holds " + std::to_string(blob.size()) + " bytes, manifest needs " +
                                   std::to_string(need));
  if (blob.size() > need)
    throw CheckpointShapeError("params.bin holds " + std::to_string(blob.size() - need) + " unexpected trailing bytes");
  const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
  for (auto& e : entries) {
    auto t = e.tensor;
    for (auto& x : t.mutable_data()) {
      x = static_cast<T>(detail::get_f32(p));
      p += 4;
    }
  }
  if (has_opt && opt) {
    const auto& o = manifest["optimizer"];
    opt->step = o.at("step").get<std::uint64_t>();
    opt->beta1 = o.at("beta1").get<double>();
    opt->beta2 = o.at("beta2").get<double>();
    opt->eps = o.at("eps").get<double>();
    for (auto* moments : {&opt->m, &opt->v}) {
      moments->clear();
      for (const auto& e : entries) {
        std::vector<T> buf(e.tensor.numel());
        for (auto& x : buf) {
          x = static_cast<T>(detail::get_f32(p));
          p += 4;
        }
        moments->push_back(std::move(buf));
      }
    }
  }
}

/// Builds the model described by the manifest and fills its parameters.
template <class T>
std::unique_ptr<Model<T>> load_checkpoint(const std::filesystem::path& dir, AdamState<T>* opt = nullptr) {
  auto model = std::make_unique<Model<T>>(checkpoint_config(dir));
  load_checkpoint_into(dir, *model, opt);
  return model;
}

}  // namespace sdmg
