#pragma once

// Central finite differences, kept independent of the analytic backward code.

#include <cmath>
#include <functional>
#include <vector>

namespace shiftnas::testing {

inline double central_difference(const std::function<double()>& loss, double& param, double h = 1e-5) {
  const double saved = param;
  param = saved + h;
  const double up = loss();
  param = saved - h;
  const double down = loss();
  param = saved;
  return (up - down) / (2.0 * h);
}

// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero gradients from
// dominating through round-off.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace shiftnas::testing
