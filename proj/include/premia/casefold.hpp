#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <utility>

namespace premia::text {

namespace detail {

#include "premia/detail/casefold_table.inc"

inline char32_t lower_codepoint(char32_t cp) {
  auto it = std::lower_bound(std::begin(kLowercaseMap), std::end(kLowercaseMap),
                             std::pair<char32_t, char32_t>{cp, 0},
                             [](const auto& a, const auto& b) { return a.first < b.first; });
  if (it != std::end(kLowercaseMap) && it->first == cp) return it->second;
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

}  // namespace detail

// Per-code-point default lowercase mapping over UTF-8 input. Invalid byte
// sequences are copied through untouched so lowercasing never fails.
inline std::string fold_lowercase(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  size_t i = 0;
  while (i < in.size()) {
    unsigned char b = static_cast<unsigned char>(in[i]);
    char32_t cp = 0;
    size_t n = 0;
    if (b < 0x80) {
      cp = b;
      n = 1;
    } else if ((b & 0xE0) == 0xC0) {
      cp = b & 0x1F;
      n = 2;
    } else if ((b & 0xF0) == 0xE0) {
      cp = b & 0x0F;
      n = 3;
    } else if ((b & 0xF8) == 0xF0) {
      cp = b & 0x07;
      n = 4;
    } else {
      out.push_back(in[i++]);
      continue;
    }
    if (i + n > in.size()) {
      out.push_back(in[i++]);
      continue;
    }
    bool valid = true;
    for (size_t k = 1; k < n; ++k) {
      unsigned char c = static_cast<unsigned char>(in[i + k]);
      if ((c & 0xC0) != 0x80) {
        valid = false;
        break;
      }
      cp = (cp << 6) | (c & 0x3F);
    }
    if (!valid) {
      out.push_back(in[i++]);
      continue;
    }
    detail::append_utf8(out, detail::lower_codepoint(cp));
    i += n;
  }
  return out;
}

}  // namespace premia::text
