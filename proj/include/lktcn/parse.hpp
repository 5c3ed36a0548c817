#pragma once

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lktcn {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::uint64_t parse_u64(const std::string& key, std::string_view text) {
  text = trim(text);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw std::invalid_argument("'" + key + "' expects a non-negative integer, got '" + std::string(text) + "'");
  return v;
}

inline std::size_t parse_size(const std::string& key, std::string_view text) {
  return static_cast<std::size_t>(parse_u64(key, text));
}

/// Strict decimal parse: the whole token must be consumed.
inline bool try_parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  std::string buf(text);
  char* end = nullptr;
  errno = 0;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size() && errno != ERANGE;
}

inline double parse_double(const std::string& key, std::string_view text) {
  double v = 0.0;
  if (!try_parse_double(text, v))
    throw std::invalid_argument("'" + key + "' expects a number, got '" + std::string(trim(text)) + "'");
  return v;
}

inline bool parse_bool(const std::string& key, std::string_view text) {
  text = trim(text);
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  throw std::invalid_argument("'" + key + "' expects true/false, got '" + std::string(text) + "'");
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace lktcn
