#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sparsemt {

// Byte length of the UTF-8 sequence starting at s[i] (malformed bytes are
// treated as single-byte characters).
inline std::size_t utf8_char_len(const std::string& s, std::size_t i) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  if ((c & 0xE0) == 0xC0) len = 2;
  else if ((c & 0xF0) == 0xE0) len = 3;
  else if ((c & 0xF8) == 0xF0) len = 4;
  if (i + len > s.size()) len = 1;
  for (std::size_t j = 1; j < len; ++j)
    if ((static_cast<unsigned char>(s[i + j]) & 0xC0) != 0x80) return 1;
  return len;
}

inline std::uint32_t utf8_codepoint(const std::string& s, std::size_t i, std::size_t len) {
  const unsigned char c = static_cast<unsigned char>(s[i]);
  if (len == 1) return c;
  std::uint32_t cp = c & (0x7F >> len);
  for (std::size_t j = 1; j < len; ++j)
    cp = (cp << 6) | (static_cast<unsigned char>(s[i + j]) & 0x3F);
  return cp;
}

inline bool is_unicode_space(std::uint32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

inline std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const std::size_t len = utf8_char_len(s, i);
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

// Split on Unicode whitespace; never returns empty tokens.
inline std::vector<std::string> split_whitespace(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < s.size();) {
    const std::size_t len = utf8_char_len(s, i);
    if (is_unicode_space(utf8_codepoint(s, i, len))) {
      if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.append(s, i, len);
    }
    i += len;
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace sparsemt
