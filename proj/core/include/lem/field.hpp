#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lem::mpc {

// A field element is a residue in [0, q). Plain integers keep the share and
// protocol code free of wrapper ceremony; all arithmetic goes through PrimeField.
using FieldElement = std::uint64_t;

// Prime field Z_q with a runtime modulus. The production modulus is the 61-bit
// Mersenne prime 2^61 - 1; tiny moduli (e.g. q = 11) are used by threshold and
// privacy tests where exhaustive enumeration over the field is needed.
class PrimeField {
 public:
  static constexpr FieldElement kMersenne61 = (std::uint64_t{1} << 61) - 1;

  explicit PrimeField(FieldElement modulus = kMersenne61);

  FieldElement modulus() const { return q_; }

  FieldElement add(FieldElement a, FieldElement b) const {
    FieldElement s = a + b;  // q < 2^62, no uint64 overflow
    return s >= q_ ? s - q_ : s;
  }
  FieldElement sub(FieldElement a, FieldElement b) const {
    return a >= b ? a - b : a + q_ - b;
  }
  FieldElement neg(FieldElement a) const { return a == 0 ? 0 : q_ - a; }

  FieldElement mul(FieldElement a, FieldElement b) const {
    unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
    if (q_ == kMersenne61) {
      // 2^61 == 1 (mod q): fold the high bits twice.
      FieldElement lo = static_cast<FieldElement>(p & kMersenne61);
      FieldElement hi = static_cast<FieldElement>(p >> 61);
      FieldElement s = lo + hi;
      if (s >= q_) s -= q_;
      return s;
    }
    return static_cast<FieldElement>(p % q_);
  }

  FieldElement pow(FieldElement base, std::uint64_t exp) const;
  FieldElement inv(FieldElement a) const;  // a != 0

  // Square root for q == 3 (mod 4); returns the smaller of the two roots.
  // Throws if a is not a quadratic residue.
  FieldElement sqrt(FieldElement a) const;

  // Signed representative in (-q/2, q/2].
  std::int64_t to_signed(FieldElement a) const {
    return a <= q_ / 2 ? static_cast<std::int64_t>(a)
                       : static_cast<std::int64_t>(a) - static_cast<std::int64_t>(q_);
  }
  FieldElement from_signed(std::int64_t v) const {
    if (v >= 0) return static_cast<FieldElement>(v) % q_;
    std::uint64_t m = static_cast<std::uint64_t>(-(v + 1)) + 1;  // |v| without UB
    return neg(m % q_);
  }

  bool operator==(const PrimeField& other) const { return q_ == other.q_; }

 private:
  FieldElement q_;
};

}  // namespace lem::mpc
