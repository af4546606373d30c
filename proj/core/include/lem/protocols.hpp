#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lem/fabric.hpp"
#include "lem/field.hpp"
#include "lem/shamir.hpp"

namespace lem::mpc {

// Global simulation view of a vector of Shamir-shared field values:
// shares[p][i] is party p's share of element i. Party isolation is a code
// discipline: protocol steps only combine a party's own state with messages
// addressed to it through the fabric.
struct SharedVec {
  std::vector<std::vector<FieldElement>> shares;  // [party][element]

  SharedVec() = default;
  SharedVec(int parties, std::size_t n) : shares(static_cast<std::size_t>(parties)) {
    for (auto& s : shares) s.assign(n, 0);
  }
  std::size_t size() const { return shares.empty() ? 0 : shares[0].size(); }
  int parties() const { return static_cast<int>(shares.size()); }
};

namespace proto {

// --- sharing and opening ---------------------------------------------------

// Dealer splits `values` into degree-theta sharings (one fabric round).
SharedVec input(PartyFabric& f, int dealer, std::span<const FieldElement> values);

// Every party deals its own vector in the same round; result[p] holds party
// p's contributed sharing (vectors may have different lengths).
std::vector<SharedVec> input_all(PartyFabric& f, std::span<const std::vector<FieldElement>> per_party);

// Public constants as degree-0 sharings (every party holds the constant).
SharedVec constant(const PartyFabric& f, std::span<const FieldElement> values);

// Open every element to `recipients` (everyone if empty). Returns the opened
// values; logs one audit event under `category`.
std::vector<FieldElement> open_to(PartyFabric& f, const SharedVec& v,
                                  std::span<const int> recipients, const std::string& item,
                                  const std::string& category);

// --- local linear algebra (no communication) --------------------------------

SharedVec add(const PartyFabric& f, const SharedVec& a, const SharedVec& b);
SharedVec sub(const PartyFabric& f, const SharedVec& a, const SharedVec& b);
SharedVec add_constant(const PartyFabric& f, const SharedVec& a, std::span<const FieldElement> c);
SharedVec scale(const PartyFabric& f, const SharedVec& a, FieldElement c);
SharedVec scale_each(const PartyFabric& f, const SharedVec& a, std::span<const FieldElement> c);

// --- interactive primitives --------------------------------------------------

// Element-wise product via degree reduction (one fabric round).
SharedVec mul(PartyFabric& f, const SharedVec& a, const SharedVec& b);

// `count` uniformly random shared bits, unknown to any threshold coalition.
SharedVec random_bits(PartyFabric& f, std::size_t count);

// Sign test: result bit_i = 1 iff decoded signed value of v_i < 0.
// Requires |signed value| < 2^bound_bits and bound_bits + kappa + 2 <= 61.
SharedVec ltz(PartyFabric& f, const SharedVec& v, int bound_bits, int kappa);

// Exact floor division by 2^shift of the signed values (|v| < 2^bound_bits).
SharedVec shift_right(PartyFabric& f, const SharedVec& v, int shift, int bound_bits, int kappa);

}  // namespace proto

// --- fixed-point layer -------------------------------------------------------

// Fixed-point protocol parameters. The field is the 61-bit Mersenne prime;
// encoded integers round(v * 2^F) must stay below 2^magnitude_bits, and the
// comparison protocols statistically mask operands with kappa extra bits
// (magnitude_bits + kappa + 2 <= 61).
struct FixedParams {
  int fraction_bits = 16;
  int magnitude_bits = 24;
  int kappa = 34;

  double resolution() const { return 1.0 / static_cast<double>(std::uint64_t{1} << fraction_bits); }
};

// A vector of secret-shared fixed-point values. `bound_bits` is the declared
// magnitude bound of the *encoded* integers (checked on every operation, never
// against the actual values, which stay hidden).
struct SharedFixed {
  SharedVec enc;
  FixedParams params;
  int bound_bits = 0;

  std::size_t size() const { return enc.size(); }
};

std::int64_t fixed_encode(double v, const FixedParams& p);
double fixed_decode(std::int64_t e, const FixedParams& p);

SharedFixed fixed_input(PartyFabric& f, int dealer, std::span<const double> values,
                        const FixedParams& p = {});
SharedFixed fixed_constant(const PartyFabric& f, std::span<const double> values,
                           const FixedParams& p = {});
SharedFixed fixed_add(const PartyFabric& f, const SharedFixed& a, const SharedFixed& b);
SharedFixed fixed_sub(const PartyFabric& f, const SharedFixed& a, const SharedFixed& b);

// Multiply by one public scalar (or one per element); exact floor rounding,
// result error <= 2^-F.
SharedFixed fixed_scale_public(PartyFabric& f, const SharedFixed& a, double c);
SharedFixed fixed_scale_public_each(PartyFabric& f, const SharedFixed& a,
                                    std::span<const double> c);

// Secure product of two shared fixed-point vectors.
SharedFixed fixed_mul(PartyFabric& f, const SharedFixed& a, const SharedFixed& b);

// Strict comparison: bit_i = 1 iff a_i < b_i (equality gives 0).
SharedVec fixed_less_than(PartyFabric& f, const SharedFixed& a, const SharedFixed& b);

// bit_i = 1 iff |a_i| <= tol; composed from two comparisons and one AND.
SharedVec fixed_is_zero(PartyFabric& f, const SharedFixed& a, double tol);

// Open to recipients (everyone if empty) and decode.
std::vector<double> fixed_open_to(PartyFabric& f, const SharedFixed& a,
                                  std::span<const int> recipients, const std::string& item,
                                  const std::string& category);

// Arithmetic mean of one value per contributor. Field division would break the
// fixed-point encoding, so every contributor scales its input by 1/k locally
// (in plaintext, on its own data) before sharing; the secure part is the sum.
// contributions[j] = (party, values); all value vectors share one length.
SharedFixed secure_average(PartyFabric& f,
                           std::span<const std::pair<int, std::vector<double>>> contributions,
                           const FixedParams& p = {});

// Every party contributes a vector of fixed-point inputs in one round.
std::vector<SharedFixed> fixed_input_all(PartyFabric& f,
                                         std::span<const std::vector<double>> per_party,
                                         const FixedParams& p = {});

// --- shared reductions and helpers ------------------------------------------

// Caller-asserted tighter magnitude bound (used where the protocol context
// guarantees a range the type system cannot see, e.g. converged residuals).
SharedFixed fixed_redeclare(const SharedFixed& a, int bound_bits);

SharedFixed fixed_slice(const SharedFixed& a, std::size_t start, std::size_t len);
SharedFixed fixed_concat(std::span<const SharedFixed> parts);

// Local sum of all elements into a single-element vector.
SharedFixed fixed_sum_elements(const PartyFabric& f, const SharedFixed& a);

// Element-wise |a| via one sign test and one oblivious select.
SharedFixed fixed_abs(PartyFabric& f, const SharedFixed& a);

// Maximum of all elements by a pairwise less-than tournament (log-depth).
SharedFixed fixed_max_tree(PartyFabric& f, const SharedFixed& a);

// Conjunction of all bits into a single shared bit (multiplication tree).
SharedVec bit_and_tree(PartyFabric& f, const SharedVec& bits);

}  // namespace lem::mpc
