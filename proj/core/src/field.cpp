#include "lem/field.hpp"

namespace lem::mpc {

namespace {

bool is_prime(std::uint64_t n) {
  if (n < 2) return false;
  for (std::uint64_t d = 2; d * d <= n; ++d)
    if (n % d == 0) return false;
  return true;
}

}  // namespace

PrimeField::PrimeField(FieldElement modulus) : q_(modulus) {
  if (modulus < 2) throw std::invalid_argument("field modulus must be >= 2");
  // Exhaustive primality is fine: the modulus is either the fixed 61-bit prime
  // or a small test prime.
  if (modulus != kMersenne61 && (modulus > (1u << 20) || !is_prime(modulus)))
    throw std::invalid_argument("field modulus must be the 61-bit Mersenne prime or a small prime");
}

FieldElement PrimeField::pow(FieldElement base, std::uint64_t exp) const {
  FieldElement r = 1 % q_;
  FieldElement b = base % q_;
  while (exp) {
    if (exp & 1) r = mul(r, b);
    b = mul(b, b);
    exp >>= 1;
  }
  return r;
}

FieldElement PrimeField::inv(FieldElement a) const {
  if (a % q_ == 0) throw std::domain_error("inverse of zero");
  return pow(a, q_ - 2);
}

FieldElement PrimeField::sqrt(FieldElement a) const {
  a %= q_;
  if (a == 0) return 0;
  if (q_ % 4 != 3) throw std::domain_error("sqrt requires q == 3 (mod 4)");
  FieldElement r = pow(a, (q_ + 1) / 4);
  if (mul(r, r) != a) throw std::domain_error("not a quadratic residue");
  FieldElement other = neg(r);
  return r <= other ? r : other;
}

}  // namespace lem::mpc
