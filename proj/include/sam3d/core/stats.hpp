#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace sam3d {

/// p-th percentile (0..100) of sorted values, linear interpolation between
/// order statistics: rank = p/100 * (n - 1).
inline double percentile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) return std::nan("");
  const double rank = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline double percentile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, p);
}

}  // namespace sam3d
