#pragma once

namespace affes {

/// Probability that a draw X ~ N(0, sigma0^2 I_d) falls outside [-1, 1]^d:
/// 1 - erf(1 / (sigma0 sqrt 2))^d.
double resample_probability(double sigma0, int d);

/// Initial step size whose first-iterate resampling probability equals
/// epsilon. Bisection on the monotone map above; |residual| < 1e-10.
/// Throws ConfigError unless 0 < epsilon < 1 and d >= 1.
double sigma0_solve(double epsilon, int d);

}  // namespace affes
