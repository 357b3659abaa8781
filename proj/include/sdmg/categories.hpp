#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace sdmg {

/// The 25 receipt categories: Others at 0, then key/value pairs with the key
/// at the odd index and its value right after it.
class CategorySet {
 public:
  static constexpr std::size_t kCount = 25;
  static constexpr std::size_t kPairs = 12;
  static constexpr int kOthers = 0;

  static constexpr std::array<std::string_view, kCount> kNames = {
      "Others",         "Store_name_key",  "Store_name_value", "Store_addr_key",   "Store_addr_value",
      "Tel_key",        "Tel_value",       "Date_key",         "Date_value",       "Time_key",
      "Time_value",     "Prod_item_key",   "Prod_item_value",  "Prod_quantity_key", "Prod_quantity_value",
      "Prod_price_key", "Prod_price_value", "Subtotal_key",    "Subtotal_value",   "Tax_key",
      "Tax_value",      "Tips_key",        "Tips_value",       "Total_key",        "Total_value"};

  /// Short column headers used by the plain-text report.
  static constexpr std::array<std::string_view, kPairs> kShortNames = {
      "Str nm", "Str addr", "Tel", "Date", "Time", "Prod item", "Prod qty", "Prod price", "Subtotal", "Tax", "Tips", "Total"};

  static constexpr std::size_t size() { return kCount; }
  static constexpr std::string_view name(int c) { return kNames[static_cast<std::size_t>(c)]; }
  static constexpr bool valid(int c) { return c >= 0 && c < static_cast<int>(kCount); }
  static constexpr bool is_key(int c) { return valid(c) && c != kOthers && c % 2 == 1; }
  static constexpr bool is_value(int c) { return valid(c) && c != kOthers && c % 2 == 0; }

  /// k-th key category, k in [0,12).
  static constexpr int key(std::size_t k) { return static_cast<int>(2 * k + 1); }
  /// k-th value category, k in [0,12).
  static constexpr int value(std::size_t k) { return static_cast<int>(2 * k + 2); }
  static constexpr int value_of_key(int key_category) { return key_category + 1; }
  static constexpr int key_of_value(int value_category) { return value_category - 1; }

  static constexpr std::array<int, kPairs> value_indices() {
    std::array<int, kPairs> out{};
    for (std::size_t k = 0; k < kPairs; ++k) out[k] = value(k);
    return out;
  }
  static constexpr std::array<int, kPairs> key_indices() {
    std::array<int, kPairs> out{};
    for (std::size_t k = 0; k < kPairs; ++k) out[k] = key(k);
    return out;
  }

  static std::optional<int> find(std::string_view name) {
    for (std::size_t i = 0; i < kCount; ++i)
      if (kNames[i] == name) return static_cast<int>(i);
    return std::nullopt;
  }
};

namespace category {
inline constexpr int kStoreNameKey = 1, kStoreNameValue = 2, kStoreAddrKey = 3, kStoreAddrValue = 4;
inline constexpr int kTelKey = 5, kTelValue = 6, kDateKey = 7, kDateValue = 8, kTimeKey = 9, kTimeValue = 10;
inline constexpr int kProdItemKey = 11, kProdItemValue = 12, kProdQtyKey = 13, kProdQtyValue = 14;
inline constexpr int kProdPriceKey = 15, kProdPriceValue = 16, kSubtotalKey = 17, kSubtotalValue = 18;
inline constexpr int kTaxKey = 19, kTaxValue = 20, kTipsKey = 21, kTipsValue = 22, kTotalKey = 23, kTotalValue = 24;
}  // namespace category

}  // namespace sdmg
