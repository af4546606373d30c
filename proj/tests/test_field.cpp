#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cstdint>
#include <random>

#include "doctest.h"
#include "lem/field.hpp"

using lem::mpc::FieldElement;
using lem::mpc::PrimeField;

TEST_CASE("modulus validation accepts the production prime and small primes") {
  CHECK_NOTHROW(PrimeField{});
  CHECK_NOTHROW(PrimeField{11});
  CHECK_NOTHROW(PrimeField{101});
  CHECK_NOTHROW(PrimeField{809});
  CHECK_THROWS_AS(PrimeField{1}, std::invalid_argument);
  CHECK_THROWS_AS(PrimeField{9}, std::invalid_argument);
  CHECK_THROWS_AS(PrimeField{(std::uint64_t{1} << 21) + 1}, std::invalid_argument);
}

TEST_CASE("small-field arithmetic matches plain modular arithmetic exhaustively") {
  const PrimeField f(11);
  for (FieldElement a = 0; a < 11; ++a) {
    CHECK(f.neg(a) == (11 - a) % 11);
    for (FieldElement b = 0; b < 11; ++b) {
      CHECK(f.add(a, b) == (a + b) % 11);
      CHECK(f.sub(a, b) == (a + 11 - b) % 11);
      CHECK(f.mul(a, b) == (a * b) % 11);
    }
  }
}

TEST_CASE("mersenne multiplication agrees with wide-integer reduction") {
  const PrimeField f;
  const FieldElement q = f.modulus();
  CHECK(q == (std::uint64_t{1} << 61) - 1);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const FieldElement a = rng() % q;
    const FieldElement b = rng() % q;
    const auto ref = static_cast<FieldElement>(
        (static_cast<unsigned __int128>(a) * b) % q);
    CHECK(f.mul(a, b) == ref);
  }
  // boundary operands
  CHECK(f.mul(q - 1, q - 1) == 1);  // (-1)*(-1)
  CHECK(f.mul(q - 1, 2) == q - 2);
  CHECK(f.mul(0, q - 1) == 0);
}

TEST_CASE("pow and inv satisfy the field identities") {
  const PrimeField f;
  const FieldElement q = f.modulus();
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const FieldElement a = 1 + rng() % (q - 1);
    CHECK(f.mul(a, f.inv(a)) == 1);
    CHECK(f.pow(a, q - 1) == 1);  // Fermat
  }
  CHECK(f.pow(2, 61) == 1);  // 2^61 == 1 for the Mersenne prime
  CHECK(f.inv(1) == 1);
  CHECK_THROWS_AS(f.inv(0), std::domain_error);
}

TEST_CASE("sqrt returns the smaller root and rejects non-residues") {
  const PrimeField f;
  const FieldElement q = f.modulus();
  REQUIRE(q % 4 == 3);
  std::mt19937_64 rng(13);
  for (int i = 0; i < 200; ++i) {
    const FieldElement a = rng() % q;
    const FieldElement sq = f.mul(a, a);
    const FieldElement r = f.sqrt(sq);
    CHECK(f.mul(r, r) == sq);
    CHECK(r <= f.neg(r));
  }
  // -1 is a non-residue when q == 3 (mod 4)
  CHECK_THROWS_AS(f.sqrt(q - 1), std::domain_error);
  CHECK(f.sqrt(0) == 0);

  const PrimeField g(11);
  CHECK(g.sqrt(4) == 2);
  CHECK(g.sqrt(5) == 4);  // 4^2 = 16 = 5, roots {4, 7}
  CHECK_THROWS_AS(g.sqrt(2), std::domain_error);
}

TEST_CASE("signed representatives round-trip") {
  const PrimeField f;
  const FieldElement q = f.modulus();
  CHECK(f.to_signed(0) == 0);
  CHECK(f.to_signed(q - 1) == -1);
  CHECK(f.to_signed(1) == 1);
  CHECK(f.from_signed(-1) == q - 1);
  CHECK(f.from_signed(0) == 0);

  std::mt19937_64 rng(17);
  for (int i = 0; i < 500; ++i) {
    const FieldElement a = rng() % q;
    CHECK(f.from_signed(f.to_signed(a)) == a);
    const auto v = static_cast<std::int64_t>(rng() % (q / 2));
    CHECK(f.to_signed(f.from_signed(v)) == v);
    CHECK(f.to_signed(f.from_signed(-v)) == -v);
  }
  // INT64_MIN must not trip undefined behaviour in negation
  const std::int64_t vmin = std::numeric_limits<std::int64_t>::min();
  const FieldElement m = f.from_signed(vmin);
  CHECK(m == f.neg((std::uint64_t{1} << 63) % q));
}
