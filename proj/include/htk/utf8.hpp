#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace htk::utf8 {

/// Decodes `bytes` as UTF-8, replacing every invalid sequence with U+FFFD.
/// The result is always valid UTF-8.
std::string sanitize(std::string_view bytes);

/// Number of code points in valid UTF-8 text.
std::size_t length(std::string_view text);

void append(std::string& out, char32_t cp);

/// Decodes one code point starting at `pos` and advances `pos`. Assumes valid
/// UTF-8 (use sanitize() first).
char32_t next(std::string_view text, std::size_t& pos);

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Collapses runs of ASCII whitespace into one space and trims both ends.
std::string collapse_whitespace(std::string_view text);

std::string to_lower_ascii(std::string_view s);

}  // namespace htk::utf8
