#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdmg/categories.hpp"
#include "sdmg/errors.hpp"
#include "sdmg/image.hpp"

namespace sdmg {

/// One text box: top-left corner, extents in pixels, and recognized text.
struct TextRegion {
  double x = 0, y = 0, h = 0, w = 0;
  std::string text;
  std::optional<int> label;

  double right() const { return x + w; }
  double bottom() const { return y + h; }
  bool operator==(const TextRegion&) const = default;
};

struct DocumentSample {
  std::string file_name;
  std::string source_id;
  std::string template_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<TextRegion> regions;
  Image image;  // empty until loaded

  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& r : regions) {
      if (!r.label) throw ValidationError("region without label in " + source_id);
      out.push_back(*r.label);
    }
    return out;
  }

  /// Equality of the annotation record; the raster is not compared.
  bool same_annotation(const DocumentSample& o) const {
    return file_name == o.file_name && source_id == o.source_id && template_id == o.template_id && height == o.height &&
           width == o.width && regions == o.regions;
  }
};

using Corpus = std::vector<DocumentSample>;

struct ParseOptions {
  /// External label → internal category; empty means identity.
  std::vector<int> label_map;
  /// Clamp boxes that poke outside the image instead of rejecting them.
  bool clamp_to_image = true;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string normalize_store_name(const std::string& s) {
  std::string out;
  for (unsigned char c : s)
    if (std::isalnum(c)) out += static_cast<char>(std::toupper(c));
  return out;
}

}  // namespace detail

/// Template key: normalized store-name value text, else the parent directory
/// of the image, else the file name.
inline std::string derive_template_id(const DocumentSample& s) {
  std::string name;
  for (const auto& r : s.regions)
    if (r.label && *r.label == category::kStoreNameValue) name += detail::normalize_store_name(r.text);
  if (!name.empty()) return name;
  auto parent = std::filesystem::path(s.file_name).parent_path().string();
  return parent.empty() ? s.file_name : parent;
}

/// Parses one JSON-lines record. `line_no` is used in error messages.
inline DocumentSample parse_record(const std::string& line, std::size_t line_no, const ParseOptions& opts = {}) {
  using nlohmann::json;
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
  }
  auto field = [&](const json& obj, const char* key) -> const json& {
    if (!obj.is_object() || !obj.contains(key)) throw ParseError(std::string("missing field '") + key + "'", line_no);
    return obj.at(key);
  };
  DocumentSample s;
  try {
    s.file_name = field(rec, "file_name").get<std::string>();
    s.height = field(rec, "height").get<std::size_t>();
    s.width = field(rec, "width").get<std::size_t>();
    const auto& anns = field(rec, "annotations");
    if (!anns.is_array()) throw ParseError("'annotations' is not an array", line_no);
    for (const auto& a : anns) {
      const auto& box = field(a, "box");
      if (!box.is_array() || box.size() != 8) throw ParseError("'box' must hold 8 numbers", line_no);
      double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
      for (std::size_t k = 0; k < 8; k += 2) {
        const double px = box[k].get<double>(), py = box[k + 1].get<double>();
        x0 = std::min(x0, px);
        x1 = std::max(x1, px);
        y0 = std::min(y0, py);
        y1 = std::max(y1, py);
      }
      TextRegion r;
      r.text = field(a, "text").get<std::string>();
      if (detail::trim(r.text).empty()) throw ValidationError("line " + std::to_string(line_no) + ": empty text");
      if (a.contains("label") && !a.at("label").is_null()) {
        int lab = a.at("label").get<int>();
        if (!opts.label_map.empty()) {
          if (lab < 0 || static_cast<std::size_t>(lab) >= opts.label_map.size())
            throw ValidationError("line " + std::to_string(line_no) + ": label " + std::to_string(lab) + " not in label map");
          lab = opts.label_map[static_cast<std::size_t>(lab)];
        }
        if (!CategorySet::valid(lab))
          throw ValidationError("line " + std::to_string(line_no) + ": label " + std::to_string(lab) + " outside [0,25)");
        r.label = lab;
      }
      if (opts.clamp_to_image) {
        x0 = std::clamp(x0, 0.0, static_cast<double>(s.width));
        x1 = std::clamp(x1, 0.0, static_cast<double>(s.width));
        y0 = std::clamp(y0, 0.0, static_cast<double>(s.height));
        y1 = std::clamp(y1, 0.0, static_cast<double>(s.height));
      }
      if (!(x1 > x0) || !(y1 > y0))
        throw ValidationError("line " + std::to_string(line_no) + ": degenerate box (zero area) for '" + r.text + "'");
      if (x0 < 0 || y0 < 0 || x1 > static_cast<double>(s.width) || y1 > static_cast<double>(s.height))
        throw ValidationError("line " + std::to_string(line_no) + ": box outside the image for '" + r.text + "'");
      r.x = x0;
      r.y = y0;
      r.w = x1 - x0;
      r.h = y1 - y0;
      s.regions.push_back(std::move(r));
    }
    if (s.regions.empty()) throw ValidationError("line " + std::to_string(line_no) + ": record has no text regions");
    s.source_id = rec.contains("source_id") ? rec.at("source_id").get<std::string>() : s.file_name;
    s.template_id = rec.contains("template_id") ? rec.at("template_id").get<std::string>() : derive_template_id(s);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad field type: ") + e.what(), line_no);
  }
  return s;
}

/// Parses UTF-8 JSON lines, one document per non-blank line.
inline Corpus parse_annotations(std::istream& in, const ParseOptions& opts = {}) {
  Corpus out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    out.push_back(parse_record(line, line_no, opts));
  }
  return out;
}

inline Corpus parse_annotations_file(const std::filesystem::path& path, const ParseOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path.string());
  return parse_annotations(in, opts);
}

inline nlohmann::json to_json(const DocumentSample& s) {
  nlohmann::json anns = nlohmann::json::array();
  for (const auto& r : s.regions) {
    nlohmann::json a;
    a["box"] = {r.x, r.y, r.x + r.w, r.y, r.x + r.w, r.y + r.h, r.x, r.y + r.h};
    a["text"] = r.text;
    if (r.label) a["label"] = *r.label;
    anns.push_back(std::move(a));
  }
  nlohmann::json rec;
  rec["file_name"] = s.file_name;
  rec["height"] = s.height;
  rec["width"] = s.width;
  rec["annotations"] = std::move(anns);
  if (s.source_id != s.file_name) rec["source_id"] = s.source_id;
  rec["template_id"] = s.template_id;
  return rec;
}

inline void serialize_annotations(const Corpus& corpus, std::ostream& out) {
  for (const auto& s : corpus) out << to_json(s).dump() << '\n';
}

/// Loads every sample's raster from `root / file_name`.
inline void load_images(Corpus& corpus, const std::filesystem::path& root) {
  for (auto& s : corpus) {
    s.image = read_image(root / s.file_name);
    if (s.image.height != s.height || s.image.width != s.width) {
      throw ValidationError(s.file_name + ": image is " + std::to_string(s.image.width) + "x" + std::to_string(s.image.height) +
                            " but annotation says " + std::to_string(s.width) + "x" + std::to_string(s.height));
    }
  }
}

/// Resamples the raster to target×target and scales boxes proportionally.
inline DocumentSample resize_sample(const DocumentSample& s, std::size_t target) {
  if (target == 0) throw ValidationError("resize target must be positive");
  DocumentSample out = s;
  const double sx = static_cast<double>(target) / s.width, sy = static_cast<double>(target) / s.height;
  const double lim = static_cast<double>(target);
  for (auto& r : out.regions) {
    r.x = std::min(r.x * sx, lim);
    r.w = std::min(r.w * sx, lim - r.x);
    r.y = std::min(r.y * sy, lim);
    r.h = std::min(r.h * sy, lim - r.y);
  }
  out.width = out.height = target;
  if (!s.image.empty()) out.image = resize_bilinear(s.image, target, target);
  return out;
}

/// With probability `p`, crops to a random rectangle that still contains
/// every box; the crop edges are drawn between the image border and the
/// border of the box union.
template <class Rng>
DocumentSample random_crop(const DocumentSample& s, double p, Rng& rng) {
  if (p < 0 || p > 1) throw ValidationError("crop probability outside [0,1]");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (!(coin(rng) < p) || s.regions.empty()) return s;
  double ux0 = 1e300, uy0 = 1e300, ux1 = -1e300, uy1 = -1e300;
  for (const auto& r : s.regions) {
    ux0 = std::min(ux0, r.x);
    uy0 = std::min(uy0, r.y);
    ux1 = std::max(ux1, r.right());
    uy1 = std::max(uy1, r.bottom());
  }
  auto draw = [&rng](long lo, long hi) { return std::uniform_int_distribution<long>(lo, std::max(lo, hi))(rng); };
  const long W = static_cast<long>(s.width), H = static_cast<long>(s.height);
  const long left = draw(0, static_cast<long>(std::floor(ux0)));
  const long top = draw(0, static_cast<long>(std::floor(uy0)));
  const long right = draw(std::min(W, static_cast<long>(std::ceil(ux1))), W);
  const long bottom = draw(std::min(H, static_cast<long>(std::ceil(uy1))), H);
  DocumentSample out = s;
  for (auto& r : out.regions) {
    r.x -= static_cast<double>(left);
    r.y -= static_cast<double>(top);
  }
  out.width = static_cast<std::size_t>(right - left);
  out.height = static_cast<std::size_t>(bottom - top);
  if (!s.image.empty())
    out.image = crop(s.image, static_cast<std::size_t>(left), static_cast<std::size_t>(top), static_cast<std::size_t>(right),
                     static_cast<std::size_t>(bottom));
  return out;
}

/// True when every box lies inside the sample frame and has positive extent.
inline bool regions_contained(const DocumentSample& s, double tol = 1e-9) {
  for (const auto& r : s.regions) {
    if (!(r.w > 0) || !(r.h > 0) || r.x < -tol || r.y < -tol || r.right() > s.width + tol || r.bottom() > s.height + tol)
      return false;
  }
  return true;
}

struct SplitReport {
  std::vector<std::string> overlap;  // sorted
  std::size_t train_templates = 0;
  std::size_t test_templates = 0;
  bool disjoint() const { return overlap.empty(); }
};

inline SplitReport verify_split_disjoint(const Corpus& train, const Corpus& test) {
  std::set<std::string> a, b;
  for (const auto& s : train) a.insert(s.template_id);
  for (const auto& s : test) b.insert(s.template_id);
  SplitReport rep;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(rep.overlap));
  rep.train_templates = a.size();
  rep.test_templates = b.size();
  return rep;
}

inline std::array<std::size_t, CategorySet::kCount> label_histogram(const Corpus& corpus) {
  std::array<std::size_t, CategorySet::kCount> hist{};
  for (const auto& s : corpus)
    for (const auto& r : s.regions)
      if (r.label) ++hist[static_cast<std::size_t>(*r.label)];
  return hist;
}

}  // namespace sdmg
