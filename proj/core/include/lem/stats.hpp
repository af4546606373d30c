#pragma once

#include <cstdint>
#include <random>

namespace lem::stats {

// Inverse standard-normal CDF, absolute error below 1e-9 on (0,1).
// Throws std::domain_error outside the open interval.
double normal_quantile(double p);

// Standard-normal CDF (erfc-based, used as the oracle inverse).
double normal_cdf(double x);

// One standard-normal draw via Box-Muller. std::normal_distribution is
// implementation-defined, which would break byte-identical reports; this
// sampler is pinned to the exact uniform-to-normal map below.
double standard_normal(std::mt19937_64& rng);

// Regularized lower incomplete gamma P(s, x); s > 0, x >= 0.
double regularized_gamma_p(double s, double x);

// Chi-square CDF with k degrees of freedom.
double chi_square_cdf(double x, int k);

}  // namespace lem::stats
