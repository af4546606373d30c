#include "lem/shamir.hpp"

#include <algorithm>
#include <stdexcept>

namespace lem::mpc {

FieldElement random_field_element(const PrimeField& field, std::mt19937_64& rng) {
  const FieldElement q = field.modulus();
  // Rejection sampling keeps the draw exactly uniform for any modulus.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % q;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % q;
}

std::vector<SecretShare> share(const PrimeField& field, FieldElement secret, int theta,
                               int n, std::mt19937_64& rng, std::uint64_t session) {
  if (theta < 0 || n < 1) throw std::invalid_argument("share: need theta >= 0 and n >= 1");
  if (2 * theta >= n)
    throw std::invalid_argument("share: need 2*theta < n for multiplication headroom");
  std::vector<FieldElement> coeff(static_cast<std::size_t>(theta) + 1);
  coeff[0] = secret % field.modulus();
  for (int i = 1; i <= theta; ++i) coeff[static_cast<std::size_t>(i)] = random_field_element(field, rng);

  std::vector<SecretShare> out(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) {
    const FieldElement x = static_cast<FieldElement>(p + 1) % field.modulus();
    FieldElement v = 0;  // Horner evaluation
    for (int i = theta; i >= 0; --i) v = field.add(field.mul(v, x), coeff[static_cast<std::size_t>(i)]);
    out[static_cast<std::size_t>(p)] = SecretShare{p, v, theta, session};
  }
  return out;
}

std::vector<FieldElement> lagrange_weights_at_zero(const PrimeField& field,
                                                   std::span<const FieldElement> points) {
  std::vector<FieldElement> w(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    FieldElement num = 1, den = 1;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j == i) continue;
      num = field.mul(num, field.neg(points[j]));                 // (0 - x_j)
      den = field.mul(den, field.sub(points[i], points[j]));      // (x_i - x_j)
    }
    w[i] = field.mul(num, field.inv(den));
  }
  return w;
}

FieldElement reconstruct(const PrimeField& field, std::span<const SecretShare> shares) {
  if (shares.empty()) throw std::invalid_argument("reconstruct: no shares");
  const int theta = shares[0].threshold;
  const std::uint64_t session = shares[0].session;
  if (static_cast<int>(shares.size()) < theta + 1)
    throw std::invalid_argument("reconstruct: fewer than threshold+1 shares");

  std::vector<FieldElement> points;
  points.reserve(shares.size());
  for (const auto& s : shares) {
    if (s.threshold != theta) throw std::invalid_argument("reconstruct: mixed thresholds");
    if (s.session != session) throw std::invalid_argument("reconstruct: mixed sessions");
    const FieldElement x = static_cast<FieldElement>(s.party + 1) % field.modulus();
    if (std::find(points.begin(), points.end(), x) != points.end())
      throw std::invalid_argument("reconstruct: duplicate party");
    points.push_back(x);
  }
  // Interpolate from the first theta+1 shares; any surplus share must lie on
  // the same polynomial, otherwise the set is inconsistent.
  const std::size_t k = static_cast<std::size_t>(theta) + 1;
  const std::span<const FieldElement> base(points.data(), k);
  for (std::size_t extra = k; extra < shares.size(); ++extra) {
    FieldElement predicted = 0;
    for (std::size_t i = 0; i < k; ++i) {
      FieldElement num = 1, den = 1;
      for (std::size_t j = 0; j < k; ++j) {
        if (j == i) continue;
        num = field.mul(num, field.sub(points[extra], base[j]));
        den = field.mul(den, field.sub(base[i], base[j]));
      }
      predicted = field.add(predicted, field.mul(shares[i].value, field.mul(num, field.inv(den))));
    }
    if (predicted != shares[extra].value)
      throw std::invalid_argument("reconstruct: inconsistent shares (off-polynomial point)");
  }

  const auto w = lagrange_weights_at_zero(field, base);
  FieldElement acc = 0;
  for (std::size_t i = 0; i < k; ++i) acc = field.add(acc, field.mul(w[i], shares[i].value));
  return acc;
}

}  // namespace lem::mpc
