#pragma once

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>

#include "kdlab/attention_map.hpp"
#include "kdlab/metrics/metrics.hpp"

namespace kdl::metrics {

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Inverse of format_real. strtod rather than stod: stod rejects denormals.
inline std::optional<double> parse_real(const std::string& s) {
  if (s.empty() || std::isspace(static_cast<unsigned char>(s.front()))) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

inline std::string reliability_csv(const ReliabilityBins& bins) {
  std::string out = "bin_low,bin_high,count,accuracy,confidence\n";
  for (const auto& b : bins) {
    out += format_real(b.low) + ',' + format_real(b.high) + ',' + std::to_string(b.count) + ',' +
           format_real(b.accuracy) + ',' + format_real(b.confidence) + '\n';
  }
  return out;
}

/// Binary (P5) 8-bit greyscale; value 1.0 maps to 255.
inline std::string attention_pgm(const AttentionMap& map) {
  std::string out = "P5\n" + std::to_string(map.width) + ' ' + std::to_string(map.height) + "\n255\n";
  for (double v : map.values)
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  return out;
}

/// One CSV row per map row, full round-trip precision.
inline std::string attention_csv(const AttentionMap& map) {
  std::string out;
  for (std::size_t y = 0; y < map.height; ++y) {
    for (std::size_t x = 0; x < map.width; ++x) {
      if (x) out += ',';
      out += format_real(map.at(y, x));
    }
    out += '\n';
  }
  return out;
}

}  // namespace kdl::metrics
