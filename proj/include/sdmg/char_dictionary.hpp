#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sdmg {

/// Decodes UTF-8 into code points. Malformed sequences decode to U+FFFD.
inline std::vector<char32_t> utf8_decode(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(s[i + k]);
      ok = (b & 0xC0) == 0x80;
      cp = (cp << 6) | (b & 0x3F);
    }
    if (!ok) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

/// Character vocabulary: digits, a-z, A-Z, 28 receipt punctuation/currency
/// symbols, and one trailing unknown token. Lookup is total.
class CharDictionary {
 public:
  static constexpr std::size_t kSize = 91;
  static constexpr std::size_t kUnknown = 90;

  static constexpr std::array<char32_t, 28> kSpecials = {
      U'/', U'\\', U'.', U'$', U'€', U'₤', U'¥', U':', U'-', U'*', U'#', U'(', U')', U'%',
      U'@', U'!', U'\'', U'&', U'=', U'>', U'+', U'"', U'×', U'?', U'<', U'[', U']', U'_'};

  CharDictionary() {
    for (char32_t c = U'0'; c <= U'9'; ++c) push(c);
    for (char32_t c = U'a'; c <= U'z'; ++c) push(c);
    for (char32_t c = U'A'; c <= U'Z'; ++c) push(c);
    for (char32_t c : kSpecials) push(c);
  }

  static const CharDictionary& instance() {
    static const CharDictionary dict;
    return dict;
  }

  std::size_t size() const { return chars_.size() + 1; }
  std::size_t index(char32_t c) const {
    auto it = lookup_.find(c);
    return it == lookup_.end() ? kUnknown : it->second;
  }
  /// Character at `i`; the unknown slot has none and yields U+FFFD.
  char32_t at(std::size_t i) const { return i < chars_.size() ? chars_[i] : U'�'; }

 private:
  void push(char32_t c) {
    lookup_.emplace(c, chars_.size());
    chars_.push_back(c);
  }

  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, std::size_t> lookup_;
};

/// One dictionary index per code point of `s`; empty for empty input.
inline std::vector<std::size_t> encode_text(std::string_view s, const CharDictionary& dict = CharDictionary::instance()) {
  std::vector<std::size_t> out;
  for (char32_t c : utf8_decode(s)) out.push_back(dict.index(c));
  return out;
}

}  // namespace sdmg
