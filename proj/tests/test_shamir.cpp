#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <array>
#include <random>
#include <vector>

#include "doctest.h"
#include "lem/shamir.hpp"

using namespace lem::mpc;

TEST_CASE("hand-checked reconstruction over Z_11") {
  // Polynomial 7 + 3x over Z_11 evaluated at x = 1, 2, 3.
  const PrimeField f(11);
  const std::vector<SecretShare> shares{
      {0, 10, 1, 0},  // f(1) = 10
      {1, 2, 1, 0},   // f(2) = 13 mod 11
      {2, 5, 1, 0},   // f(3) = 16 mod 11
  };
  CHECK(reconstruct(f, shares) == 7);
  // any 2 of the 3 suffice for threshold 1
  CHECK(reconstruct(f, std::vector<SecretShare>{shares[0], shares[1]}) == 7);
  CHECK(reconstruct(f, std::vector<SecretShare>{shares[1], shares[2]}) == 7);
  CHECK(reconstruct(f, std::vector<SecretShare>{shares[0], shares[2]}) == 7);
}

TEST_CASE("lagrange weights at zero over Z_11") {
  const PrimeField f(11);
  const std::array<FieldElement, 3> pts{1, 2, 3};
  const auto w = lagrange_weights_at_zero(f, pts);
  REQUIRE(w.size() == 3);
  CHECK(w[0] == 3);
  CHECK(w[1] == 8);  // -3 mod 11
  CHECK(w[2] == 1);
  // exact for quadratics: f(x) = x^2 has f(0) = 0
  CHECK(f.add(f.add(f.mul(w[0], 1), f.mul(w[1], 4)), f.mul(w[2], 9)) == 0);
}

TEST_CASE("every admissible subset reconstructs, smaller subsets are refused") {
  const PrimeField f;
  std::mt19937_64 rng(23);
  const int n = 7, theta = 2;
  for (int trial = 0; trial < 5; ++trial) {
    const FieldElement secret = random_field_element(f, rng);
    const auto shares = share(f, secret, theta, n, rng, 42);

    // all subsets of size theta+1
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        for (int k = j + 1; k < n; ++k) {
          const std::vector<SecretShare> sub{shares[static_cast<std::size_t>(i)],
                                             shares[static_cast<std::size_t>(j)],
                                             shares[static_cast<std::size_t>(k)]};
          CHECK(reconstruct(f, sub) == secret);
        }

    const std::vector<SecretShare> few{shares[0], shares[4]};
    CHECK_THROWS_AS(reconstruct(f, few), std::invalid_argument);
  }
}

TEST_CASE("share validates its preconditions") {
  const PrimeField f;
  std::mt19937_64 rng(29);
  CHECK_THROWS_AS(share(f, 5, -1, 3, rng), std::invalid_argument);
  CHECK_THROWS_AS(share(f, 5, 1, 2, rng), std::invalid_argument);  // 2*theta >= n
  CHECK_THROWS_AS(share(f, 5, 2, 4, rng), std::invalid_argument);
  CHECK_NOTHROW(share(f, 5, 1, 3, rng));
  CHECK_NOTHROW(share(f, 5, 0, 1, rng));
}

TEST_CASE("reconstruct rejects malformed share sets") {
  const PrimeField f;
  std::mt19937_64 rng(31);
  auto shares = share(f, 99, 1, 3, rng, 7);

  std::vector<SecretShare> dup{shares[0], shares[0]};
  CHECK_THROWS_AS(reconstruct(f, dup), std::invalid_argument);

  auto other = share(f, 99, 1, 3, rng, 8);  // different session
  std::vector<SecretShare> mixed{shares[0], other[1]};
  CHECK_THROWS_AS(reconstruct(f, mixed), std::invalid_argument);

  auto wide = share(f, 99, 2, 5, rng, 7);  // different threshold
  std::vector<SecretShare> cross{shares[0], wide[1], wide[2]};
  CHECK_THROWS_AS(reconstruct(f, cross), std::invalid_argument);

  CHECK_THROWS_AS(reconstruct(f, std::vector<SecretShare>{}), std::invalid_argument);
}

TEST_CASE("surplus shares must lie on the shared polynomial") {
  const PrimeField f;
  std::mt19937_64 rng(43);
  auto shares = share(f, 555, 1, 5, rng, 3);
  CHECK(reconstruct(f, shares) == 555);

  auto tampered = shares;
  tampered[4].value = f.add(tampered[4].value, 1);
  CHECK_THROWS_AS(reconstruct(f, tampered), std::invalid_argument);

  // tampering inside the interpolation basis is also caught by the surplus check
  auto early = shares;
  early[0].value = f.add(early[0].value, 1);
  CHECK_THROWS_AS(reconstruct(f, early), std::invalid_argument);
}

TEST_CASE("a single share is marginally uniform") {
  // With theta >= 1 the lone share s + c*x is a bijection of the uniform
  // coefficient, so its empirical distribution over Z_11 must be flat.
  const PrimeField f(11);
  std::mt19937_64 rng(37);
  std::array<int, 11> counts{};
  const int draws = 11000;
  for (int i = 0; i < draws; ++i) {
    const auto shares = share(f, 4, 1, 3, rng);
    ++counts[shares[0].value];
  }
  for (int c : counts) {
    CHECK(c > draws / 11 - 250);
    CHECK(c < draws / 11 + 250);
  }
}

TEST_CASE("shares of equal secrets from independent draws differ") {
  const PrimeField f;
  std::mt19937_64 rng(41);
  const auto a = share(f, 1234, 2, 5, rng);
  const auto b = share(f, 1234, 2, 5, rng);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) any_diff |= (a[i].value != b[i].value);
  CHECK(any_diff);
}
