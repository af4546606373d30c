#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "lem/protocols.hpp"

using namespace lem::mpc;

namespace {

std::vector<FieldElement> enc(const PrimeField& f, std::initializer_list<std::int64_t> vs) {
  std::vector<FieldElement> out;
  for (auto v : vs) out.push_back(f.from_signed(v));
  return out;
}

std::vector<std::int64_t> open_signed(PartyFabric& f, const SharedVec& v) {
  auto raw = proto::open_to(f, v, {}, "test", "final-output");
  std::vector<std::int64_t> out;
  for (auto x : raw) out.push_back(f.field().to_signed(x));
  return out;
}

}  // namespace

TEST_CASE("dealt inputs open back to the dealt values") {
  PartyFabric f(5, PrimeField{}, 1);
  const auto vals = enc(f.field(), {3, 0, -7, 123456});
  const SharedVec s = proto::input(f, 2, vals);
  CHECK(open_signed(f, s) == std::vector<std::int64_t>{3, 0, -7, 123456});

  // no single row equals the secrets themselves
  bool any_row_equals = false;
  for (int p = 0; p < 5; ++p) any_row_equals |= (s.shares[static_cast<std::size_t>(p)] == vals);
  CHECK_FALSE(any_row_equals);
}

TEST_CASE("input_all deals one vector per party in a single round") {
  PartyFabric f(3, PrimeField{}, 2);
  std::vector<std::vector<FieldElement>> per_party{
      enc(f.field(), {1, 2}), enc(f.field(), {-5}), enc(f.field(), {7, 8, 9})};
  const int before = f.round();
  auto dealt = proto::input_all(f, per_party);
  CHECK(f.round() == before + 1);
  REQUIRE(dealt.size() == 3);
  CHECK(open_signed(f, dealt[0]) == std::vector<std::int64_t>{1, 2});
  CHECK(open_signed(f, dealt[1]) == std::vector<std::int64_t>{-5});
  CHECK(open_signed(f, dealt[2]) == std::vector<std::int64_t>{7, 8, 9});
}

TEST_CASE("linear operations act share-wise without communication") {
  PartyFabric f(5, PrimeField{}, 3);
  const SharedVec a = proto::input(f, 0, enc(f.field(), {10, -4, 0}));
  const SharedVec b = proto::input(f, 1, enc(f.field(), {-3, 5, 9}));
  const int rounds = f.round();

  CHECK(open_signed(f, proto::add(f, a, b)) == std::vector<std::int64_t>{7, 1, 9});
  CHECK(open_signed(f, proto::sub(f, a, b)) == std::vector<std::int64_t>{13, -9, -9});
  CHECK(open_signed(f, proto::scale(f, a, 3)) == std::vector<std::int64_t>{30, -12, 0});
  CHECK(open_signed(f, proto::add_constant(f, a, enc(f.field(), {1, 1, -1}))) ==
        std::vector<std::int64_t>{11, -3, -1});
  CHECK(open_signed(f, proto::scale_each(f, a, enc(f.field(), {2, -1, 5}))) ==
        std::vector<std::int64_t>{20, 4, 0});
  // the five opens above each cost one round; the operations themselves none
  CHECK(f.round() == rounds + 5);
}

TEST_CASE("products reduce back to the sharing threshold") {
  PartyFabric f(5, PrimeField{}, 4);
  REQUIRE(f.threshold() == 2);
  const SharedVec a = proto::input(f, 0, enc(f.field(), {3, -6, 11}));
  const SharedVec b = proto::input(f, 1, enc(f.field(), {4, 7, -2}));
  const SharedVec p = proto::mul(f, a, b);
  CHECK(open_signed(f, p) == std::vector<std::int64_t>{12, -42, -22});

  // threshold+1 shares alone must already determine the product
  const auto& field = f.field();
  const std::vector<FieldElement> pts{1, 2, 3};
  const auto w = lagrange_weights_at_zero(field, pts);
  for (std::size_t i = 0; i < 3; ++i) {
    FieldElement acc = 0;
    for (int q = 0; q < 3; ++q)
      acc = field.add(acc, field.mul(w[static_cast<std::size_t>(q)],
                                     p.shares[static_cast<std::size_t>(q)][i]));
    CHECK(field.to_signed(acc) == std::vector<std::int64_t>{12, -42, -22}[i]);
  }
}

TEST_CASE("random bits are bits with a sane mean") {
  PartyFabric f(5, PrimeField{}, 5);
  const SharedVec bits = proto::random_bits(f, 400);
  const auto opened = open_signed(f, bits);
  int ones = 0;
  for (auto b : opened) {
    REQUIRE((b == 0 || b == 1));
    ones += static_cast<int>(b);
  }
  CHECK(ones > 120);
  CHECK(ones < 280);
}

TEST_CASE("sign test matches the signed interpretation") {
  PartyFabric f(5, PrimeField{}, 6);
  const std::vector<std::int64_t> vals{-1, 0, 1, -(std::int64_t{1} << 20),
                                       (std::int64_t{1} << 20) - 1, 12345, -12345};
  std::vector<FieldElement> raw;
  for (auto v : vals) raw.push_back(f.field().from_signed(v));
  const SharedVec s = proto::input(f, 0, raw);
  const auto b = open_signed(f, proto::ltz(f, s, 24, 34));
  REQUIRE(b.size() == vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) CHECK(b[i] == (vals[i] < 0 ? 1 : 0));

  CHECK_THROWS_AS(proto::ltz(f, s, 50, 34), std::invalid_argument);
}

TEST_CASE("floor shift matches integer floor division") {
  PartyFabric f(5, PrimeField{}, 7);
  const std::vector<std::int64_t> vals{13, -13, 12, -12, 0, (std::int64_t{1} << 20) + 3,
                                       -((std::int64_t{1} << 20) + 3)};
  std::vector<FieldElement> raw;
  for (auto v : vals) raw.push_back(f.field().from_signed(v));
  const SharedVec s = proto::input(f, 0, raw);

  for (int shift : {2, 16}) {
    const auto got = open_signed(f, proto::shift_right(f, s, shift, 24, 34));
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const auto expect = static_cast<std::int64_t>(
          std::floor(static_cast<double>(vals[i]) / std::pow(2.0, shift)));
      CHECK(got[i] == expect);
    }
  }
}

TEST_CASE("fixed-point encoding rejects out-of-range plaintext") {
  const FixedParams p{};
  CHECK(fixed_encode(3.0, p) == 3 * 65536);
  CHECK(fixed_encode(-0.5, p) == -32768);
  CHECK(fixed_decode(fixed_encode(1.25, p), p) == 1.25);
  CHECK_THROWS_AS(fixed_encode(300.0, p), std::overflow_error);
  CHECK_THROWS_AS(fixed_encode(-300.0, p), std::overflow_error);
}

TEST_CASE("fixed multiplication is exact on dyadic inputs") {
  PartyFabric f(5, PrimeField{}, 8);
  const std::vector<double> xs{3.0, 1.5, -0.5};
  const std::vector<double> ys{4.0, 2.25, 0.25};
  const SharedFixed a = fixed_input(f, 0, xs);
  const SharedFixed b = fixed_input(f, 1, ys);
  const auto got = fixed_open_to(f, fixed_mul(f, a, b), {}, "prod", "final-output");
  REQUIRE(got.size() == 3);
  CHECK(got[0] == 12.0);
  CHECK(got[1] == 3.375);
  CHECK(got[2] == -0.125);

  // declared-bound overflow is refused before any communication happens
  const SharedFixed wide = fixed_redeclare(a, 26);
  CHECK_THROWS_AS(fixed_mul(f, wide, fixed_redeclare(b, 26)), std::overflow_error);
}

TEST_CASE("public scaling truncates with one-sided sub-resolution error") {
  PartyFabric f(5, PrimeField{}, 9);
  std::mt19937_64 rng(99);
  std::vector<double> vals(16);
  for (auto& v : vals) v = (static_cast<double>(rng() % 20000) - 10000.0) / 1000.0;
  const SharedFixed a = fixed_input(f, 0, vals);

  for (double c : {0.1, -0.37, 2.5}) {
    const auto got = fixed_open_to(f, fixed_scale_public(f, a, c), {}, "scaled", "final-output");
    const FixedParams p = a.params;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double exact = fixed_decode(fixed_encode(vals[i], p), p) *
                           fixed_decode(fixed_encode(c, p), p);
      CHECK(got[i] <= exact + 1e-12);
      CHECK(got[i] > exact - p.resolution());
    }
  }
}

TEST_CASE("strict comparison and tolerance zero-test") {
  PartyFabric f(5, PrimeField{}, 10);
  const std::vector<double> xs{1.0, 0.999, -3.0, 2.0};
  const std::vector<double> ys{1.0, 1.0, -2.0, -3.0};
  const SharedFixed a = fixed_input(f, 0, xs);
  const SharedFixed b = fixed_input(f, 1, ys);
  CHECK(open_signed(f, fixed_less_than(f, a, b)) == std::vector<std::int64_t>{0, 1, 1, 0});

  const FixedParams p{};
  const double ulp = p.resolution();
  const std::vector<double> zs{0.0, 2 * ulp, 3 * ulp, -ulp, 0.5, -2 * ulp};
  const SharedFixed z = fixed_input(f, 2, zs);
  CHECK(open_signed(f, fixed_is_zero(f, z, 2 * ulp)) ==
        std::vector<std::int64_t>{1, 1, 0, 1, 0, 1});
}

TEST_CASE("absolute value, max tournament, conjunction, element sum") {
  PartyFabric f(5, PrimeField{}, 11);
  const std::vector<double> xs{-1.5, 2.25, 0.0, -0.25, 2.125};
  const SharedFixed a = fixed_input(f, 0, xs);

  const auto abs_got = fixed_open_to(f, fixed_abs(f, a), {}, "abs", "final-output");
  CHECK(abs_got == std::vector<double>{1.5, 2.25, 0.0, 0.25, 2.125});

  const auto max_got = fixed_open_to(f, fixed_max_tree(f, a), {}, "max", "final-output");
  REQUIRE(max_got.size() == 1);
  CHECK(max_got[0] == 2.25);

  const SharedFixed single = fixed_slice(a, 1, 1);
  CHECK(fixed_open_to(f, fixed_max_tree(f, single), {}, "max1", "final-output")[0] == 2.25);

  const auto sum_got = fixed_open_to(f, fixed_sum_elements(f, a), {}, "sum", "final-output");
  REQUIRE(sum_got.size() == 1);
  CHECK(sum_got[0] == 2.625);  // dyadic inputs sum exactly

  const SharedVec ones = proto::constant(f, enc(f.field(), {1, 1, 1, 1}));
  CHECK(open_signed(f, bit_and_tree(f, ones)) == std::vector<std::int64_t>{1});
  const SharedVec mix = proto::constant(f, enc(f.field(), {1, 1, 0, 1}));
  CHECK(open_signed(f, bit_and_tree(f, mix)) == std::vector<std::int64_t>{0});
}

TEST_CASE("slices and concatenation preserve shares") {
  PartyFabric f(3, PrimeField{}, 12);
  const std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
  const SharedFixed a = fixed_input(f, 0, xs);
  const SharedFixed head = fixed_slice(a, 0, 2);
  const SharedFixed tail = fixed_slice(a, 2, 2);
  const std::vector<SharedFixed> parts{tail, head};
  const auto got = fixed_open_to(f, fixed_concat(parts), {}, "cat", "final-output");
  CHECK(got == std::vector<double>{3.0, 4.0, 1.0, 2.0});
}

TEST_CASE("secure average sums locally pre-scaled contributions") {
  PartyFabric f(5, PrimeField{}, 13);
  std::vector<std::pair<int, std::vector<double>>> contributions{
      {0, {1.0, 2.0}}, {3, {3.0, -1.0}}};
  const auto got = fixed_open_to(f, secure_average(f, contributions), {}, "avg", "final-output");
  CHECK(got == std::vector<double>{2.0, 0.5});

  std::vector<std::pair<int, std::vector<double>>> thirds{
      {0, {1.0}}, {1, {1.0}}, {4, {1.0}}};
  const auto three = fixed_open_to(f, secure_average(f, thirds), {}, "avg3", "final-output");
  REQUIRE(three.size() == 1);
  CHECK(std::abs(three[0] - 1.0) < 1e-4);
}

TEST_CASE("audit log records every opening with its category") {
  PartyFabric f(5, PrimeField{}, 14);
  f.clear_audit();
  const SharedFixed a = fixed_input(f, 0, std::vector<double>{1.0, -2.0});
  const SharedFixed b = fixed_input(f, 1, std::vector<double>{0.5, 0.5});
  (void)fixed_mul(f, a, b);  // truncation opens masked values only
  bool saw_mask = false, saw_output = false;
  for (const auto& e : f.audit()) {
    if (e.category == "mask") saw_mask = true;
    CHECK(e.category != "final-output");
  }
  (void)fixed_open_to(f, a, {}, "a", "final-output");
  for (const auto& e : f.audit())
    if (e.category == "final-output") saw_output = true;
  CHECK(saw_mask);
  CHECK(saw_output);
  f.clear_audit();
  CHECK(f.audit().empty());
}

TEST_CASE("identical seeds replay identically, fresh seeds re-randomize") {
  auto run = [](std::uint64_t seed) {
    PartyFabric f(5, PrimeField{}, seed);
    const SharedFixed a = fixed_input(f, 0, std::vector<double>{1.5, -2.5});
    const SharedFixed b = fixed_input(f, 1, std::vector<double>{0.25, 4.0});
    auto opened = fixed_open_to(f, fixed_mul(f, a, b), {}, "p", "final-output");
    return std::make_pair(opened, a.enc.shares);
  };
  const auto [open1, shares1] = run(77);
  const auto [open2, shares2] = run(77);
  const auto [open3, shares3] = run(78);
  CHECK(open1 == open2);
  CHECK(shares1 == shares2);
  CHECK(open1 == open3);  // same function of the same inputs
  CHECK(shares1 != shares3);
}

TEST_CASE("random linear programs agree with a plaintext oracle") {
  std::mt19937_64 rng(4242);
  for (int program = 0; program < 30; ++program) {
    PartyFabric f(5, PrimeField{}, 1000 + static_cast<std::uint64_t>(program));
    const std::size_t m = 1 + rng() % 4;
    auto draw = [&] {
      return (static_cast<double>(rng() % 2001) - 1000.0) / 1000.0;  // [-1, 1]
    };
    std::vector<double> x(m), y(m);
    for (auto& v : x) v = draw();
    for (auto& v : y) v = draw();
    SharedFixed sx = fixed_input(f, 0, x);
    SharedFixed sy = fixed_input(f, 1, y);

    const int steps = 1 + static_cast<int>(rng() % 5);
    for (int s = 0; s < steps; ++s) {
      switch (rng() % 4) {
        case 0: {
          sx = fixed_add(f, sx, sy);
          for (std::size_t i = 0; i < m; ++i) x[i] += y[i];
          break;
        }
        case 1: {
          sx = fixed_sub(f, sx, sy);
          for (std::size_t i = 0; i < m; ++i) x[i] -= y[i];
          break;
        }
        case 2: {
          const double c = draw();
          sx = fixed_scale_public(f, sx, c);
          for (std::size_t i = 0; i < m; ++i) x[i] *= c;
          break;
        }
        default: {
          sx = fixed_mul(f, sx, sy);
          for (std::size_t i = 0; i < m; ++i) x[i] *= y[i];
          break;
        }
      }
      sx = fixed_redeclare(sx, 24);  // |x| stays below 32 by construction
    }
    const auto got = fixed_open_to(f, sx, {}, "out", "final-output");
    for (std::size_t i = 0; i < m; ++i) CHECK(std::abs(got[i] - x[i]) <= 1e-3);
  }
}
