#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdmg/categories.hpp"
#include "sdmg/dataset.hpp"
#include "sdmg/errors.hpp"

namespace sdmg {

struct CategoryScore {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
  /// No ground truth and no predictions in the evaluated set.
  bool vacuous() const { return tp + fp + fn == 0; }
  std::size_t support() const { return tp + fn; }
};

struct CategoryReport {
  std::array<CategoryScore, CategorySet::kCount> per{};
  double macro_f1 = 0;
  std::size_t macro_count = 0;  // value categories that entered the average
  std::size_t boxes = 0;
};

namespace detail {

inline void finish_scores(CategoryReport& rep) {
  double sum = 0;
  rep.macro_count = 0;
  for (std::size_t c = 0; c < CategorySet::kCount; ++c) {
    auto& s = rep.per[c];
    s.precision = s.tp + s.fp ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
    s.recall = s.tp + s.fn ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    if (CategorySet::is_value(static_cast<int>(c)) && !s.vacuous()) {
      sum += s.f1;
      ++rep.macro_count;
    }
  }
  rep.macro_f1 = rep.macro_count ? sum / static_cast<double>(rep.macro_count) : 0.0;
}

}  // namespace detail

/// Per-category box counts and F1; the macro average runs over the 12 value
/// categories that are not vacuous.
inline CategoryReport f1_report(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size())
    throw ValidationError("f1_report: " + std::to_string(predicted.size()) + " predictions for " + std::to_string(truth.size()) +
                          " ground-truth boxes");
  CategoryReport rep;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (!CategorySet::valid(p) || !CategorySet::valid(t))
      throw ValidationError("f1_report: label outside [0,25) at box " + std::to_string(i));
    if (p == t) {
      ++rep.per[static_cast<std::size_t>(t)].tp;
    } else {
      ++rep.per[static_cast<std::size_t>(p)].fp;
      ++rep.per[static_cast<std::size_t>(t)].fn;
    }
  }
  rep.boxes = truth.size();
  detail::finish_scores(rep);
  return rep;
}

inline nlohmann::json to_json(const CategoryReport& rep) {
  nlohmann::json cats = nlohmann::json::array();
  for (std::size_t c = 0; c < CategorySet::kCount; ++c) {
    const auto& s = rep.per[c];
    cats.push_back({{"id", c},
                    {"name", std::string(CategorySet::kNames[c])},
                    {"tp", s.tp},
                    {"fp", s.fp},
                    {"fn", s.fn},
                    {"precision", s.precision},
                    {"recall", s.recall},
                    {"f1", s.f1},
                    {"in_macro", CategorySet::is_value(static_cast<int>(c)) && !s.vacuous()}});
  }
  return {{"boxes", rep.boxes}, {"macro_f1", rep.macro_f1}, {"macro_categories", rep.macro_count}, {"categories", std::move(cats)}};
}

/// Aligned text: one row per category, then the value-category F1 strip.
inline std::string to_table(const CategoryReport& rep) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %6s %6s %6s %9s %9s %9s\n", "category", "TP", "FP", "FN", "precision", "recall", "F1");
  os << line;
  for (std::size_t c = 0; c < CategorySet::kCount; ++c) {
    const auto& s = rep.per[c];
    std::snprintf(line, sizeof line, "%-20s %6zu %6zu %6zu %9.4f %9.4f %9.4f\n", std::string(CategorySet::kNames[c]).c_str(), s.tp,
                  s.fp, s.fn, s.precision, s.recall, s.f1);
    os << line;
  }
  os << '\n';
  for (std::size_t k = 0; k < CategorySet::kPairs; ++k) {
    std::snprintf(line, sizeof line, "%-11s", std::string(CategorySet::kShortNames[k]).c_str());
    os << line;
  }
  os << "Avg.\n";
  for (std::size_t k = 0; k < CategorySet::kPairs; ++k) {
    const auto& s = rep.per[static_cast<std::size_t>(CategorySet::value(k))];
    if (s.vacuous()) std::snprintf(line, sizeof line, "%-11s", "-");
    else std::snprintf(line, sizeof line, "%-11.1f", 100.0 * s.f1);
    os << line;
  }
  std::snprintf(line, sizeof line, "%.1f\n", 100.0 * rep.macro_f1);
  os << line;
  return os.str();
}

/// Intersection over union of two axis-aligned boxes; 0 when the union is empty.
inline double iou(const TextRegion& a, const TextRegion& b) {
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Label of the ground-truth region with maximal IOU (lowest index on ties);
/// Others when no region overlaps.
inline std::vector<int> transfer_labels_by_iou(const std::vector<TextRegion>& detected, const std::vector<TextRegion>& truth) {
  std::vector<int> out;
  out.reserve(detected.size());
  for (const auto& d : detected) {
    double best = 0;
    int label = CategorySet::kOthers;
    for (const auto& g : truth) {
      const double v = iou(d, g);
      if (v > best) {
        if (!g.label) throw ValidationError("transfer_labels_by_iou: ground-truth region '" + g.text + "' has no label");
        best = v;
        label = *g.label;
      }
    }
    out.push_back(label);
  }
  return out;
}

}  // namespace sdmg
