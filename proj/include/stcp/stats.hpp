#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "stcp/common.hpp"

namespace stcp {

// Type-7 (linear interpolation of order statistics) quantile.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw invalid_input("quantile: empty sample");
  std::sort(v.begin(), v.end());
  if (p <= 0.0) return v.front();
  if (p >= 1.0) return v.back();
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

inline double median(const std::vector<double>& v) { return quantile(v, 0.5); }

// Median over the non-NaN entries; NaN when none remain.
inline double median_defined(const std::vector<double>& v) {
  std::vector<double> keep;
  for (double x : v)
    if (!std::isnan(x)) keep.push_back(x);
  if (keep.empty()) return std::numeric_limits<double>::quiet_NaN();
  return median(keep);
}

}  // namespace stcp
