#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace dlt {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// logsumexp with -inf treated as an exact zero: terms at -inf are skipped
// and an all -inf input yields -inf (never NaN).
inline double logsumexp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) {
    if (x != kNegInf) s += std::exp(x - m);
  }
  return m + std::log(s);
}

inline double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

}  // namespace dlt
