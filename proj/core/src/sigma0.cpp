#include "affes/sigma0.hpp"

#include <cmath>
#include <numbers>

#include "affes/errors.hpp"

namespace affes {

double resample_probability(double sigma0, int d) {
  const double inside = std::erf(1.0 / (sigma0 * std::numbers::sqrt2));
  return 1.0 - std::pow(inside, d);
}

double sigma0_solve(double epsilon, int d) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) {
    throw ConfigError("epsilon must lie in (0, 1)");
  }
  if (d < 1) throw ConfigError("dimension must be >= 1");

  double lo = 1e-3;
  double hi = 1.0;
  while (resample_probability(lo, d) > epsilon) lo *= 0.5;
  while (resample_probability(hi, d) < epsilon) {
    hi *= 2.0;
    if (hi > 1e300) throw NumericalError("sigma0 bracket overflow");
  }
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (resample_probability(mid, d) < epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double lo_res = std::abs(resample_probability(lo, d) - epsilon);
  const double hi_res = std::abs(resample_probability(hi, d) - epsilon);
  const double sigma = lo_res <= hi_res ? lo : hi;
  if (std::min(lo_res, hi_res) >= 1e-10) {
    throw NumericalError("sigma0 bisection did not reach residual 1e-10");
  }
  return sigma;
}

}  // namespace affes
