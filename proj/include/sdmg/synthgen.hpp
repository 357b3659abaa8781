#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sdmg/bitmap_font.hpp"
#include "sdmg/categories.hpp"
#include "sdmg/char_dictionary.hpp"
#include "sdmg/dataset.hpp"
#include "sdmg/image.hpp"

// Synthetic receipts. Money-valued categories share one grammar within a
// template, so only the neighbouring key tells Subtotal, Tax, Tips, Total
// and product prices apart.
namespace sdmg::synth {

struct PlacedText {
  double x = 0, y = 0;
  std::string text;
  int scale = 1;
  int label = CategorySet::kOthers;
};

struct Layout {
  std::size_t width = 0, height = 0;
  std::vector<PlacedText> items;
};

/// Box extent of `text` rendered at `scale`: glyph cells plus a 1px margin.
inline std::pair<double, double> text_extent(std::string_view text, int scale) {
  const auto n = static_cast<double>(utf8_decode(text).size());
  return {(font::kAdvance * n - 1) * scale + 2, static_cast<double>(font::kGlyphHeight * scale + 2)};
}

/// Black glyphs on a white single-channel canvas.
inline Image render_image(const Layout& layout) {
  Image img(1, layout.height, layout.width, 1.0f);
  for (const auto& it : layout.items) {
    const auto cps = utf8_decode(it.text);
    const long ox = static_cast<long>(it.x) + 1, oy = static_cast<long>(it.y) + 1;
    for (std::size_t k = 0; k < cps.size(); ++k) {
      const auto g = font::glyph(cps[k]);
      for (int col = 0; col < font::kGlyphWidth; ++col)
        for (int row = 0; row < font::kGlyphHeight; ++row) {
          if (!((g[col] >> row) & 1)) continue;
          for (int sy = 0; sy < it.scale; ++sy)
            for (int sx = 0; sx < it.scale; ++sx) {
              const long px = ox + (static_cast<long>(k) * font::kAdvance + col) * it.scale + sx;
              const long py = oy + row * it.scale + sy;
              if (px >= 0 && py >= 0 && px < static_cast<long>(layout.width) && py < static_cast<long>(layout.height))
                img.at(0, static_cast<std::size_t>(py), static_cast<std::size_t>(px)) = 0.0f;
            }
        }
    }
  }
  return img;
}

enum class Placement { kLeftOf, kAbove };

struct TemplateSpec {
  std::string template_id;
  std::string store_name, address, phone;
  std::size_t width = 280;
  int margin = 8;
  int line_gap = 4;
  int header_scale = 1;
  bool center_header = true;
  bool store_key = false, addr_key = false;
  bool has_qty = true, qty_first = false, has_tips = false, has_item_header = true;
  bool date_time_one_line = false, cash_lines = false;
  Placement info_placement = Placement::kLeftOf;
  Placement totals_placement = Placement::kLeftOf;
  std::array<std::string, CategorySet::kPairs> keys;  // key text per pair index
  int money_style = 0, date_style = 0, time_style = 0;
  int min_items = 2, max_items = 5;
};

namespace detail {

template <class Rng>
std::size_t pick(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

template <class Rng, class C>
const auto& choose(Rng& rng, const C& c) {
  return c[pick(rng, std::size(c))];
}

template <class Rng>
bool chance(Rng& rng, double p) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

inline constexpr std::array<std::string_view, 20> kNameFirst = {
    "GOLDEN", "BLUE",  "SUNNY",  "GREEN", "RED",    "HAPPY", "FRESH", "URBAN",  "LUCKY", "ROYAL",
    "SILVER", "MAPLE", "OCEAN",  "CORNER", "PRIME", "EAGLE", "NORTH", "RIVER",  "STAR",  "OAK"};
inline constexpr std::array<std::string_view, 16> kNameSecond = {
    "MART", "CAFE", "DELI", "MARKET", "GROCERY", "BAKERY", "DINER", "BISTRO",
    "FOODS", "STORE", "KITCHEN", "PANTRY", "GRILL", "SHOP", "TAVERN", "EXPRESS"};
inline constexpr std::array<std::string_view, 16> kStreets = {
    "MAIN", "OAK", "PINE", "ELM", "MAPLE", "CEDAR", "LAKE", "HILL", "PARK", "WASHINGTON", "FIRST", "SECOND",
    "MARKET", "RIVER", "CHURCH", "BROAD"};
inline constexpr std::array<std::string_view, 5> kStreetKinds = {"ST", "AVE", "RD", "BLVD", "DR"};
inline constexpr std::array<std::string_view, 32> kItems = {
    "COFFEE",  "BAGEL",   "MILK",     "EGGS",     "BREAD",   "APPLE",   "BANANA",  "WRAP",
    "SALAD",   "SOUP",    "TEA",      "JUICE",    "MUFFIN",  "COOKIE",  "PASTA",   "PIZZA",
    "BURGER",  "FRIES",   "SODA",     "WATER",    "CHEESE",  "RICE",    "BEANS",   "TACO",
    "LATTE",   "DONUT",   "SANDWICH", "YOGURT",   "CEREAL",  "BUTTER",  "ONION",   "TOMATO"};
inline constexpr std::array<std::string_view, 8> kItemSuffix = {"", " LG", " SM", " 2PK", " 1L", " X2", " REG", " DBL"};
inline constexpr std::array<std::string_view, 10> kFooters = {
    "THANK YOU",      "PLEASE COME AGAIN", "HAVE A NICE DAY", "THANKS FOR SHOPPING", "SEE YOU SOON",
    "NO REFUNDS",     "KEEP YOUR RECEIPT", "WWW.SHOP.COM",    "CUSTOMER COPY",       "ALL SALES FINAL"};
inline constexpr std::array<std::string_view, 8> kNames = {"ALEX", "SAM", "JO", "KIM", "LEE", "PAT", "MAX", "ANA"};

inline const std::array<std::vector<std::string_view>, CategorySet::kPairs>& key_variants() {
  static const std::array<std::vector<std::string_view>, CategorySet::kPairs> v = {{
      {"Store:", "Merchant:", "STORE"},
      {"Address:", "Addr:", "ADDRESS"},
      {"Tel:", "TEL", "Phone:", "PH:", "Telephone"},
      {"Date:", "DATE", "Date"},
      {"Time:", "TIME", "Time"},
      {"ITEM", "Item", "DESCRIPTION", "Description"},
      {"QTY", "Qty", "QUANTITY"},
      {"PRICE", "Price", "AMOUNT", "AMT"},
      {"SUBTOTAL", "Subtotal:", "Sub Total", "SUB-TOTAL"},
      {"TAX", "Tax:", "Sales Tax", "VAT", "HST"},
      {"TIP", "Tip:", "Tips", "GRATUITY"},
      {"TOTAL", "Total:", "Amount Due", "TOTAL DUE", "BALANCE"},
  }};
  return v;
}

template <class Rng>
std::string money(Rng& rng, int style) {
  const int cents = std::uniform_int_distribution<int>(50, 9999)(rng);
  char buf[32];
  switch (style) {
    case 0: std::snprintf(buf, sizeof buf, "$%d.%02d", cents / 100, cents % 100); break;
    case 1: std::snprintf(buf, sizeof buf, "%d.%02d", cents / 100, cents % 100); break;
    default: std::snprintf(buf, sizeof buf, "$ %d.%02d", cents / 100, cents % 100); break;
  }
  return buf;
}

template <class Rng>
std::string date(Rng& rng, int style) {
  const int y = std::uniform_int_distribution<int>(2015, 2023)(rng);
  const int m = std::uniform_int_distribution<int>(1, 12)(rng);
  const int d = std::uniform_int_distribution<int>(1, 28)(rng);
  char buf[32];
  switch (style) {
    case 0: std::snprintf(buf, sizeof buf, "%02d/%02d/%04d", m, d, y); break;
    case 1: std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, d); break;
    default: std::snprintf(buf, sizeof buf, "%02d.%02d.%02d", d, m, y % 100); break;
  }
  return buf;
}

template <class Rng>
std::string clock(Rng& rng, int style) {
  const int h = std::uniform_int_distribution<int>(0, 23)(rng);
  const int m = std::uniform_int_distribution<int>(0, 59)(rng);
  const int s = std::uniform_int_distribution<int>(0, 59)(rng);
  char buf[32];
  switch (style) {
    case 0: std::snprintf(buf, sizeof buf, "%02d:%02d", h, m); break;
    case 1: std::snprintf(buf, sizeof buf, "%d:%02d %s", h % 12 == 0 ? 12 : h % 12, m, h < 12 ? "AM" : "PM"); break;
    default: std::snprintf(buf, sizeof buf, "%02d:%02d:%02d", h, m, s); break;
  }
  return buf;
}

template <class Rng>
std::string digits(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += static_cast<char>('0' + pick(rng, 10));
  return s;
}

// Places lines top to bottom.
class LayoutBuilder {
 public:
  explicit LayoutBuilder(const TemplateSpec& t) : t_(t), y_(t.margin) { layout_.width = t.width; }

  double width_of(std::string_view text, int scale = 1) const { return text_extent(text, scale).first; }
  double left() const { return t_.margin; }
  double right_aligned(std::string_view text, int scale = 1) const { return t_.width - t_.margin - width_of(text, scale); }
  double centered(std::string_view text, int scale = 1) const { return (t_.width - width_of(text, scale)) / 2.0; }

  void put(double x, std::string text, int label, int scale = 1) {
    x = std::max<double>(x, 0.0);
    layout_.items.push_back({std::floor(x), y_, std::move(text), scale, label});
    line_scale_ = std::max(line_scale_, scale);
  }
  void newline() {
    y_ += font::kGlyphHeight * line_scale_ + 2 + t_.line_gap;
    line_scale_ = 1;
  }

  /// Key then value: same line (value inline or flush right), or value on
  /// the next line under the key.
  void key_value(std::string key, int key_label, std::string value, int value_label, Placement p, bool flush_right,
                 double x = -1) {
    const double kx = x < 0 ? left() : x;
    put(kx, key, key_label);
    if (p == Placement::kLeftOf) {
      const double vx = flush_right ? right_aligned(value) : kx + width_of(key) + font::kAdvance;
      put(vx, std::move(value), value_label);
    } else {
      newline();
      put(kx, std::move(value), value_label);
    }
    newline();
  }

  Layout finish() {
    layout_.height = static_cast<std::size_t>(y_ + t_.margin);
    return std::move(layout_);
  }

 private:
  const TemplateSpec& t_;
  Layout layout_;
  double y_;
  int line_scale_ = 1;
};

}  // namespace detail

/// Draws the fixed per-template choices (store identity, layout rules, key
/// wording, value formats). Rare key categories cycle over template indices
/// so every category shows up in small corpora.
template <class Rng>
TemplateSpec make_template(std::size_t index, Rng& rng) {
  using namespace detail;
  TemplateSpec t;
  char id[16];
  std::snprintf(id, sizeof id, "T%03zu", index);
  t.template_id = id;
  t.store_name = std::string(choose(rng, kNameFirst)) + " " + std::string(choose(rng, kNameSecond));
  t.address = std::to_string(std::uniform_int_distribution<int>(1, 9999)(rng)) + " " + std::string(choose(rng, kStreets)) +
              " " + std::string(choose(rng, kStreetKinds));
  const std::string area = digits(rng, 3), mid = digits(rng, 3), tail = digits(rng, 4);
  switch (pick(rng, 3)) {
    case 0: t.phone = "(" + area + ") " + mid + "-" + tail; break;
    case 1: t.phone = area + "-" + mid + "-" + tail; break;
    default: t.phone = area + "." + mid + "." + tail; break;
  }
  t.width = 240 + 8 * pick(rng, 11);
  t.margin = 4 + static_cast<int>(pick(rng, 9));
  t.line_gap = 2 + static_cast<int>(pick(rng, 6));
  t.header_scale = chance(rng, 0.4) ? 2 : 1;
  t.center_header = chance(rng, 0.6);
  t.store_key = index % 4 == 0;
  t.addr_key = index % 4 == 1;
  t.has_qty = chance(rng, 0.8);
  t.qty_first = chance(rng, 0.4);
  t.has_tips = index % 2 == 0 || chance(rng, 0.3);
  t.has_item_header = chance(rng, 0.8);
  t.date_time_one_line = chance(rng, 0.5);
  t.cash_lines = chance(rng, 0.5);
  t.info_placement = chance(rng, 0.7) ? Placement::kLeftOf : Placement::kAbove;
  t.totals_placement = chance(rng, 0.65) ? Placement::kLeftOf : Placement::kAbove;
  for (std::size_t k = 0; k < CategorySet::kPairs; ++k) t.keys[k] = std::string(choose(rng, key_variants()[k]));
  t.money_style = static_cast<int>(pick(rng, 3));
  t.date_style = static_cast<int>(pick(rng, 3));
  t.time_style = static_cast<int>(pick(rng, 3));
  t.min_items = 2 + static_cast<int>(pick(rng, 2));
  t.max_items = t.min_items + 1 + static_cast<int>(pick(rng, 3));
  return t;
}

/// One receipt of template `t`, fully determined by (t, rng state).
template <class Rng>
Layout make_layout(const TemplateSpec& t, Rng& rng) {
  using namespace detail;
  namespace cat = sdmg::category;
  LayoutBuilder b(t);
  const auto key = [&t](int value_category) { return t.keys[static_cast<std::size_t>(value_category / 2 - 1)]; };

  // Header: store name and address.
  if (t.store_key) {
    b.put(b.left(), key(cat::kStoreNameValue), cat::kStoreNameKey);
    b.put(b.left() + b.width_of(key(cat::kStoreNameValue)) + font::kAdvance, t.store_name, cat::kStoreNameValue, t.header_scale);
  } else {
    b.put(t.center_header ? b.centered(t.store_name, t.header_scale) : b.left(), t.store_name, cat::kStoreNameValue,
          t.header_scale);
  }
  b.newline();
  if (t.addr_key) {
    b.key_value(key(cat::kStoreAddrValue), cat::kStoreAddrKey, t.address, cat::kStoreAddrValue, Placement::kLeftOf, false);
  } else {
    b.put(t.center_header ? b.centered(t.address) : b.left(), t.address, cat::kStoreAddrValue);
    b.newline();
  }
  b.key_value(key(cat::kTelValue), cat::kTelKey, t.phone, cat::kTelValue, t.info_placement, false,
              t.center_header && t.info_placement == Placement::kLeftOf ? b.centered(key(cat::kTelValue) + " " + t.phone) : -1);

  if (chance(rng, 0.5)) {
    b.put(b.left(), std::string(chance(rng, 0.5) ? "CASHIER: " : "SERVER: ") + std::string(choose(rng, kNames)), CategorySet::kOthers);
    b.newline();
  }

  const std::string d = date(rng, t.date_style), tm = clock(rng, t.time_style);
  if (t.date_time_one_line && t.info_placement == Placement::kLeftOf) {
    b.put(b.left(), key(cat::kDateValue), cat::kDateKey);
    b.put(b.left() + b.width_of(key(cat::kDateValue)) + font::kAdvance, d, cat::kDateValue);
    const double tx = t.width / 2.0 + 6;
    b.put(tx, key(cat::kTimeValue), cat::kTimeKey);
    b.put(tx + b.width_of(key(cat::kTimeValue)) + font::kAdvance, tm, cat::kTimeValue);
    b.newline();
  } else {
    b.key_value(key(cat::kDateValue), cat::kDateKey, d, cat::kDateValue, t.info_placement, false);
    b.key_value(key(cat::kTimeValue), cat::kTimeKey, tm, cat::kTimeValue, t.info_placement, false);
  }
  if (chance(rng, 0.4)) {
    b.put(b.left(), "ORDER #" + digits(rng, 4), CategorySet::kOthers);
    b.newline();
  }

  // Item table. Column x positions are fixed per template.
  const double price_right = static_cast<double>(t.width - t.margin);
  const double qty_x = t.qty_first ? b.left() : std::floor(t.width * 0.58);
  const double item_x = t.qty_first ? b.left() + 5 * font::kAdvance : b.left();
  const std::size_t item_chars =
      static_cast<std::size_t>(((t.qty_first ? price_right - 8 * font::kAdvance : qty_x) - item_x) / font::kAdvance) - 2;
  if (t.has_item_header) {
    b.put(item_x, key(cat::kProdItemValue), cat::kProdItemKey);
    if (t.has_qty) b.put(qty_x, key(cat::kProdQtyValue), cat::kProdQtyKey);
    b.put(b.right_aligned(key(cat::kProdPriceValue)), key(cat::kProdPriceValue), cat::kProdPriceKey);
    b.newline();
  }
  const int n_items = std::uniform_int_distribution<int>(t.min_items, t.max_items)(rng);
  for (int i = 0; i < n_items; ++i) {
    std::string item = std::string(choose(rng, kItems)) + std::string(choose(rng, kItemSuffix));
    if (item.size() > item_chars) item.resize(item_chars);
    const std::string price = money(rng, t.money_style);
    b.put(item_x, item, cat::kProdItemValue);
    if (t.has_qty) b.put(qty_x, std::to_string(std::uniform_int_distribution<int>(1, 9)(rng)), cat::kProdQtyValue);
    b.put(b.right_aligned(price), price, cat::kProdPriceValue);
    b.newline();
  }
  if (chance(rng, 0.5)) {
    b.put(b.left(), std::string(static_cast<std::size_t>((t.width - 2 * t.margin - 2) / font::kAdvance), '-'),
          CategorySet::kOthers);
    b.newline();
  }

  // Totals block.
  std::vector<int> totals = {cat::kSubtotalValue, cat::kTaxValue};
  if (t.has_tips && chance(rng, 0.7)) totals.push_back(cat::kTipsValue);
  totals.push_back(cat::kTotalValue);
  for (int v : totals)
    b.key_value(key(v), CategorySet::key_of_value(v), money(rng, t.money_style), v, t.totals_placement, true);

  if (t.cash_lines) {
    b.key_value(chance(rng, 0.5) ? "CASH" : "Cash", CategorySet::kOthers, money(rng, t.money_style), CategorySet::kOthers,
                t.totals_placement, true);
    b.key_value(chance(rng, 0.5) ? "CHANGE" : "Change", CategorySet::kOthers, money(rng, t.money_style),
                CategorySet::kOthers, t.totals_placement, true);
  } else if (chance(rng, 0.5)) {
    b.put(b.left(), "VISA ****" + digits(rng, 4), CategorySet::kOthers);
    b.newline();
  }
  const std::size_t n_footer = 1 + pick(rng, 2);
  for (std::size_t i = 0; i < n_footer; ++i) {
    const std::string f(choose(rng, kFooters));
    b.put(t.center_header ? b.centered(f) : b.left(), f, CategorySet::kOthers);
    b.newline();
  }
  return b.finish();
}

/// Converts a layout to an annotated sample with its rendered raster.
inline DocumentSample to_sample(const Layout& layout, std::string file_name, std::string template_id) {
  DocumentSample s;
  s.file_name = std::move(file_name);
  s.source_id = s.file_name;
  s.template_id = std::move(template_id);
  s.width = layout.width;
  s.height = layout.height;
  for (const auto& it : layout.items) {
    const auto [w, h] = text_extent(it.text, it.scale);
    s.regions.push_back({it.x, it.y, h, w, it.text, it.label});
  }
  s.image = render_image(layout);
  return s;
}

struct SplitCorpus {
  Corpus train;
  Corpus test;
};

/// Template-disjoint train/test corpora. round(n_templates·test_fraction)
/// templates (at least one) go to test.
inline SplitCorpus generate_corpus(std::size_t n_templates, std::size_t docs_per_template, std::uint64_t seed,
                                   double test_fraction = 0.2) {
  if (n_templates < 2) throw ValidationError("generate_corpus: need at least 2 templates, got " + std::to_string(n_templates));
  if (docs_per_template == 0) throw ValidationError("generate_corpus: docs_per_template must be positive");
  std::mt19937_64 rng(seed);
  std::vector<TemplateSpec> specs;
  std::set<std::string> names;
  for (std::size_t i = 0; i < n_templates; ++i) {
    TemplateSpec t = make_template(i, rng);
    while (!names.insert(t.store_name).second) t.store_name += " " + std::to_string(i);
    specs.push_back(std::move(t));
  }
  std::size_t n_test = static_cast<std::size_t>(std::lround(static_cast<double>(n_templates) * test_fraction));
  n_test = std::clamp<std::size_t>(n_test, 1, n_templates - 1);
  SplitCorpus out;
  for (std::size_t i = 0; i < n_templates; ++i) {
    const bool is_test = i >= n_templates - n_test;
    for (std::size_t d = 0; d < docs_per_template; ++d) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(i),
                        static_cast<std::uint32_t>(d)};
      std::mt19937_64 doc_rng(seq);
      char name[64];
      std::snprintf(name, sizeof name, "images/%s_%03zu.png", specs[i].template_id.c_str(), d);
      auto sample = to_sample(make_layout(specs[i], doc_rng), name, specs[i].template_id);
      (is_test ? out.test : out.train).push_back(std::move(sample));
    }
  }
  return out;
}

/// Writes `dir/annotations.jsonl` and every raster under `dir/`.
inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream out(dir / "annotations.jsonl", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "annotations.jsonl").string());
  serialize_annotations(corpus, out);
  for (const auto& s : corpus) write_png(dir / s.file_name, s.image);
}

}  // namespace sdmg::synth
