#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lem/field.hpp"

namespace lem::mpc {

// One party's share of a secret: the polynomial evaluation at x = party + 1.
struct SecretShare {
  int party = 0;           // 0-based party index; evaluation point is party + 1
  FieldElement value = 0;
  int threshold = 0;       // polynomial degree; threshold+1 shares reconstruct
  std::uint64_t session = 0;
};

// Uniform field element from a 64-bit generator (rejection sampling).
FieldElement random_field_element(const PrimeField& field, std::mt19937_64& rng);

// Split `secret` into n shares of a degree-theta polynomial with free term
// `secret`. Requires 0 <= theta and 2*theta < n (multiplication headroom).
std::vector<SecretShare> share(const PrimeField& field, FieldElement secret, int theta,
                               int n, std::mt19937_64& rng, std::uint64_t session = 0);

// Reconstruct the secret from at least theta+1 shares with distinct parties.
// Throws std::invalid_argument on too few shares, duplicate parties, or
// mismatched sessions/thresholds.
FieldElement reconstruct(const PrimeField& field, std::span<const SecretShare> shares);

// Lagrange weights w_i with p(0) = sum_i w_i * p(x_i) for any polynomial of
// degree < points.size(); points are the x-coordinates (all distinct, nonzero).
std::vector<FieldElement> lagrange_weights_at_zero(const PrimeField& field,
                                                   std::span<const FieldElement> points);

}  // namespace lem::mpc
