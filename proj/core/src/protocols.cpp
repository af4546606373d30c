#include "lem/protocols.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace lem::mpc {
namespace proto {

namespace {

// Lagrange weights to interpolate p(0) from the full point set {1..n}; exact
// for any polynomial of degree <= n-1, so one weight set serves both degree
// theta sharings and degree 2*theta product sharings.
const std::vector<FieldElement>& full_weights(const PartyFabric& f) {
  static std::map<std::pair<std::uint64_t, int>, std::vector<FieldElement>> cache;
  auto key = std::make_pair(f.field().modulus(), f.parties());
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::vector<FieldElement> pts(static_cast<std::size_t>(f.parties()));
  for (int p = 0; p < f.parties(); ++p) pts[static_cast<std::size_t>(p)] = static_cast<FieldElement>(p + 1) % f.field().modulus();
  auto [ins, ok] = cache.emplace(key, lagrange_weights_at_zero(f.field(), pts));
  (void)ok;
  return ins->second;
}

void check_same_size(const SharedVec& a, const SharedVec& b) {
  if (a.size() != b.size() || a.parties() != b.parties())
    throw std::invalid_argument("shared vectors have mismatched shapes");
}

// Dealer-local sharing of a batch: returns the share matrix [party][element].
std::vector<std::vector<FieldElement>> make_sharings(PartyFabric& f, int dealer,
                                                     std::span<const FieldElement> values) {
  const auto& field = f.field();
  const int n = f.parties();
  const int theta = f.threshold();
  auto& rng = f.rng(dealer);
  std::vector<std::vector<FieldElement>> out(static_cast<std::size_t>(n));
  for (auto& v : out) v.resize(values.size());
  std::vector<FieldElement> coeff(static_cast<std::size_t>(theta) + 1);
  for (std::size_t i = 0; i < values.size(); ++i) {
    coeff[0] = values[i] % field.modulus();
    for (int k = 1; k <= theta; ++k) coeff[static_cast<std::size_t>(k)] = random_field_element(field, rng);
    for (int p = 0; p < n; ++p) {
      const FieldElement x = static_cast<FieldElement>(p + 1) % field.modulus();
      FieldElement v = 0;
      for (int k = theta; k >= 0; --k) v = field.add(field.mul(v, x), coeff[static_cast<std::size_t>(k)]);
      out[static_cast<std::size_t>(p)][i] = v;
    }
  }
  return out;
}

}  // namespace

SharedVec input(PartyFabric& f, int dealer, std::span<const FieldElement> values) {
  const int n = f.parties();
  auto mat = make_sharings(f, dealer, values);
  for (int p = 0; p < n; ++p) f.post(dealer, p, mat[static_cast<std::size_t>(p)]);
  f.deliver();
  SharedVec out(n, values.size());
  for (int p = 0; p < n; ++p) {
    auto got = f.received(p, dealer);
    out.shares[static_cast<std::size_t>(p)].assign(got.begin(), got.end());
  }
  return out;
}

std::vector<SharedVec> input_all(PartyFabric& f, std::span<const std::vector<FieldElement>> per_party) {
  const int n = f.parties();
  if (static_cast<int>(per_party.size()) != n)
    throw std::invalid_argument("input_all: one vector per party required");
  for (int d = 0; d < n; ++d) {
    auto mat = make_sharings(f, d, per_party[static_cast<std::size_t>(d)]);
    for (int p = 0; p < n; ++p) f.post(d, p, mat[static_cast<std::size_t>(p)]);
  }
  f.deliver();
  std::vector<SharedVec> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int d = 0; d < n; ++d) {
    SharedVec v(n, per_party[static_cast<std::size_t>(d)].size());
    for (int p = 0; p < n; ++p) {
      auto got = f.received(p, d);
      v.shares[static_cast<std::size_t>(p)].assign(got.begin(), got.end());
    }
    out.push_back(std::move(v));
  }
  return out;
}

SharedVec constant(const PartyFabric& f, std::span<const FieldElement> values) {
  SharedVec out(f.parties(), values.size());
  for (int p = 0; p < f.parties(); ++p)
    for (std::size_t i = 0; i < values.size(); ++i)
      out.shares[static_cast<std::size_t>(p)][i] = values[i] % f.field().modulus();
  return out;
}

std::vector<FieldElement> open_to(PartyFabric& f, const SharedVec& v,
                                  std::span<const int> recipients, const std::string& item,
                                  const std::string& category) {
  const int n = f.parties();
  std::vector<int> recv(recipients.begin(), recipients.end());
  if (recv.empty())
    for (int p = 0; p < n; ++p) recv.push_back(p);

  for (int p = 0; p < n; ++p)
    for (int r : recv) f.post(p, r, v.shares[static_cast<std::size_t>(p)]);
  f.log_open(item, recv, category, v.size());
  f.deliver();

  const auto& w = full_weights(f);
  const auto& field = f.field();
  std::vector<FieldElement> out(v.size(), 0);
  // All recipients compute the same interpolation; evaluate it once per
  // recipient so transcripts carry the opened values.
  for (int r : recv) {
    std::vector<FieldElement> vals(v.size(), 0);
    for (int p = 0; p < n; ++p) {
      auto got = f.received(r, p);
      for (std::size_t i = 0; i < vals.size(); ++i)
        vals[i] = field.add(vals[i], field.mul(w[static_cast<std::size_t>(p)], got[i]));
    }
    for (FieldElement x : vals) f.note_opened_value(r, x);
    out = std::move(vals);
  }
  return out;
}

SharedVec add(const PartyFabric& f, const SharedVec& a, const SharedVec& b) {
  check_same_size(a, b);
  const auto& field = f.field();
  SharedVec out = a;
  for (int p = 0; p < out.parties(); ++p)
    for (std::size_t i = 0; i < out.size(); ++i)
      out.shares[static_cast<std::size_t>(p)][i] =
          field.add(out.shares[static_cast<std::size_t>(p)][i], b.shares[static_cast<std::size_t>(p)][i]);
  return out;
}

SharedVec sub(const PartyFabric& f, const SharedVec& a, const SharedVec& b) {
  check_same_size(a, b);
  const auto& field = f.field();
  SharedVec out = a;
  for (int p = 0; p < out.parties(); ++p)
    for (std::size_t i = 0; i < out.size(); ++i)
      out.shares[static_cast<std::size_t>(p)][i] =
          field.sub(out.shares[static_cast<std::size_t>(p)][i], b.shares[static_cast<std::size_t>(p)][i]);
  return out;
}

SharedVec add_constant(const PartyFabric& f, const SharedVec& a, std::span<const FieldElement> c) {
  if (c.size() != a.size()) throw std::invalid_argument("add_constant: size mismatch");
  const auto& field = f.field();
  SharedVec out = a;
  for (int p = 0; p < out.parties(); ++p)
    for (std::size_t i = 0; i < out.size(); ++i)
      out.shares[static_cast<std::size_t>(p)][i] =
          field.add(out.shares[static_cast<std::size_t>(p)][i], c[i] % field.modulus());
  return out;
}

SharedVec scale(const PartyFabric& f, const SharedVec& a, FieldElement c) {
  const auto& field = f.field();
  SharedVec out = a;
  c %= field.modulus();
  for (auto& row : out.shares)
    for (auto& x : row) x = field.mul(x, c);
  return out;
}

SharedVec scale_each(const PartyFabric& f, const SharedVec& a, std::span<const FieldElement> c) {
  if (c.size() != a.size()) throw std::invalid_argument("scale_each: size mismatch");
  const auto& field = f.field();
  SharedVec out = a;
  for (auto& row : out.shares)
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = field.mul(row[i], c[i] % field.modulus());
  return out;
}

SharedVec mul(PartyFabric& f, const SharedVec& a, const SharedVec& b) {
  check_same_size(a, b);
  const int n = f.parties();
  const auto& field = f.field();
  const std::size_t m = a.size();

  // Each party reshares its local degree-2theta product points with fresh
  // degree-theta polynomials; recombining with the public interpolation
  // weights reduces the degree back to theta.
  for (int p = 0; p < n; ++p) {
    std::vector<FieldElement> prod(m);
    for (std::size_t i = 0; i < m; ++i)
      prod[i] = field.mul(a.shares[static_cast<std::size_t>(p)][i], b.shares[static_cast<std::size_t>(p)][i]);
    auto mat = make_sharings(f, p, prod);
    for (int r = 0; r < n; ++r) f.post(p, r, mat[static_cast<std::size_t>(r)]);
  }
  f.deliver();

  const auto& w = full_weights(f);
  SharedVec out(n, m);
  for (int r = 0; r < n; ++r) {
    auto& row = out.shares[static_cast<std::size_t>(r)];
    for (int p = 0; p < n; ++p) {
      auto got = f.received(r, p);
      for (std::size_t i = 0; i < m; ++i)
        row[i] = field.add(row[i], field.mul(w[static_cast<std::size_t>(p)], got[i]));
    }
  }
  return out;
}

SharedVec random_bits(PartyFabric& f, std::size_t count) {
  const int n = f.parties();
  const auto& field = f.field();
  if (field.modulus() % 4 != 3)
    throw std::invalid_argument("random_bits requires q == 3 (mod 4)");
  const FieldElement inv2 = field.inv(2);

  SharedVec bits(n, count);
  std::vector<std::size_t> pending(count);
  for (std::size_t i = 0; i < count; ++i) pending[i] = i;

  while (!pending.empty()) {
    const std::size_t m = pending.size();
    // Joint uniform elements: theta+1 dealers suffice (any threshold coalition
    // misses at least one honest contribution).
    const int dealers = f.threshold() + 1;
    SharedVec a(n, m);
    for (int d = 0; d < dealers; ++d) {
      std::vector<FieldElement> r(m);
      for (auto& x : r) x = random_field_element(field, f.rng(d));
      auto mat = make_sharings(f, d, r);
      for (int p = 0; p < n; ++p) f.post(d, p, mat[static_cast<std::size_t>(p)]);
    }
    f.deliver();
    for (int p = 0; p < n; ++p) {
      auto& row = a.shares[static_cast<std::size_t>(p)];
      for (int d = 0; d < dealers; ++d) {
        auto got = f.received(p, d);
        for (std::size_t i = 0; i < m; ++i) row[i] = field.add(row[i], got[i]);
      }
    }

    SharedVec sq = mul(f, a, a);
    auto opened = open_to(f, sq, {}, "random-bit square", "mask");

    std::vector<std::size_t> still;
    for (std::size_t i = 0; i < m; ++i) {
      if (opened[i] == 0) {
        still.push_back(pending[i]);
        continue;
      }
      const FieldElement c = field.sqrt(opened[i]);
      const FieldElement cinv = field.inv(c);
      for (int p = 0; p < n; ++p) {
        FieldElement s = field.mul(a.shares[static_cast<std::size_t>(p)][i], cinv);  // share of +-1
        bits.shares[static_cast<std::size_t>(p)][pending[i]] = field.mul(field.add(s, 1), inv2);
      }
    }
    // Retry only the indices whose masked square was zero.
    if (!still.empty()) {
      std::vector<std::size_t> remap = std::move(still);
      pending = std::move(remap);
    } else {
      pending.clear();
    }
  }
  return bits;
}

namespace {

// Shares of floor(d / 2^shift) for positively-shifted d with 0 <= d < 2^total_bits.
// Statistically masks d with kappa_eff extra bits, opens the masked value, and
// resolves the low-part borrow exactly with a public-vs-shared bit comparison.
SharedVec masked_floor(PartyFabric& f, const SharedVec& d, int total_bits, int shift, int kappa) {
  const int n = f.parties();
  const auto& field = f.field();
  const std::size_t m = d.size();
  const int kappa_eff = std::min(kappa, 59 - total_bits);
  if (kappa_eff < 8)
    throw std::invalid_argument("masked_floor: operand bound leaves too little masking headroom");
  const int high_bits = (total_bits - shift) + kappa_eff;
  const int per = shift + high_bits;

  SharedVec rb = random_bits(f, m * static_cast<std::size_t>(per));

  // r_low = sum 2^k b_k (shift bits), r_high = sum 2^k b_{shift+k}.
  SharedVec masked = d;
  SharedVec r_high(n, m);
  for (int p = 0; p < n; ++p) {
    auto& mrow = masked.shares[static_cast<std::size_t>(p)];
    auto& hrow = r_high.shares[static_cast<std::size_t>(p)];
    const auto& brow = rb.shares[static_cast<std::size_t>(p)];
    for (std::size_t i = 0; i < m; ++i) {
      FieldElement lo = 0, hi = 0;
      for (int k = shift - 1; k >= 0; --k)
        lo = field.add(field.add(lo, lo), brow[i * static_cast<std::size_t>(per) + static_cast<std::size_t>(k)]);
      for (int k = high_bits - 1; k >= 0; --k)
        hi = field.add(field.add(hi, hi), brow[i * static_cast<std::size_t>(per) + static_cast<std::size_t>(shift + k)]);
      hrow[i] = hi;
      FieldElement sh = hi;
      for (int k = 0; k < shift; ++k) sh = field.add(sh, sh);  // hi * 2^shift
      mrow[i] = field.add(mrow[i], field.add(lo, sh));
    }
  }
  auto c = open_to(f, masked, {}, "comparison mask", "mask");

  // Borrow w = [c_low < r_low], computed from the public low bits of c and the
  // shared bits of r_low: the most significant differing index decides.
  SharedVec w(n, m);
  if (shift > 0) {
    SharedVec x(n, m * static_cast<std::size_t>(shift));
    std::vector<std::vector<bool>> cbit(m, std::vector<bool>(static_cast<std::size_t>(shift)));
    for (std::size_t i = 0; i < m; ++i) {
      const std::uint64_t clow = c[i] & ((std::uint64_t{1} << shift) - 1);
      for (int k = 0; k < shift; ++k) cbit[i][static_cast<std::size_t>(k)] = (clow >> k) & 1;
    }
    for (int p = 0; p < n; ++p) {
      auto& xrow = x.shares[static_cast<std::size_t>(p)];
      const auto& brow = rb.shares[static_cast<std::size_t>(p)];
      for (std::size_t i = 0; i < m; ++i)
        for (int k = 0; k < shift; ++k) {
          const FieldElement r = brow[i * static_cast<std::size_t>(per) + static_cast<std::size_t>(k)];
          // x = r XOR c: r + c - 2rc with public c.
          xrow[i * static_cast<std::size_t>(shift) + static_cast<std::size_t>(k)] =
              cbit[i][static_cast<std::size_t>(k)] ? field.sub(1, r) : r;
        }
    }
    // Prefix-OR from the most significant bit down; f_k = f_{k+1} OR x_k.
    SharedVec fcur(n, m), fprev(n, m);
    for (int p = 0; p < n; ++p)
      for (std::size_t i = 0; i < m; ++i)
        fcur.shares[static_cast<std::size_t>(p)][i] =
            x.shares[static_cast<std::size_t>(p)][i * static_cast<std::size_t>(shift) + static_cast<std::size_t>(shift - 1)];
    // e_k contributes to w only where the public bit c_k is 0.
    for (int p = 0; p < n; ++p)
      for (std::size_t i = 0; i < m; ++i)
        if (!cbit[i][static_cast<std::size_t>(shift - 1)])
          w.shares[static_cast<std::size_t>(p)][i] = fcur.shares[static_cast<std::size_t>(p)][i];
    for (int k = shift - 2; k >= 0; --k) {
      SharedVec xk(n, m);
      for (int p = 0; p < n; ++p)
        for (std::size_t i = 0; i < m; ++i)
          xk.shares[static_cast<std::size_t>(p)][i] =
              x.shares[static_cast<std::size_t>(p)][i * static_cast<std::size_t>(shift) + static_cast<std::size_t>(k)];
      SharedVec prod = mul(f, fcur, xk);
      fprev = fcur;
      for (int p = 0; p < n; ++p)
        for (std::size_t i = 0; i < m; ++i) {
          const FieldElement fk = field.sub(
              field.add(fprev.shares[static_cast<std::size_t>(p)][i], xk.shares[static_cast<std::size_t>(p)][i]),
              prod.shares[static_cast<std::size_t>(p)][i]);
          if (!cbit[i][static_cast<std::size_t>(k)]) {
            const FieldElement e = field.sub(fk, fprev.shares[static_cast<std::size_t>(p)][i]);
            w.shares[static_cast<std::size_t>(p)][i] = field.add(w.shares[static_cast<std::size_t>(p)][i], e);
          }
          fcur.shares[static_cast<std::size_t>(p)][i] = fk;
        }
    }
  }

  // floor(d/2^shift) = c_high - r_high - w.
  SharedVec out(n, m);
  for (int p = 0; p < n; ++p)
    for (std::size_t i = 0; i < m; ++i) {
      const FieldElement chigh = (c[i] >> shift) % field.modulus();
      const FieldElement v = field.sub(field.neg(r_high.shares[static_cast<std::size_t>(p)][i]),
                                       w.shares[static_cast<std::size_t>(p)][i]);
      // c_high enters as a public constant sharing.
      out.shares[static_cast<std::size_t>(p)][i] = field.add(v, chigh);
    }
  return out;
}

std::vector<FieldElement> constant_vec(const PrimeField& field, std::size_t n, FieldElement v) {
  return std::vector<FieldElement>(n, v % field.modulus());
}

}  // namespace

SharedVec ltz(PartyFabric& f, const SharedVec& v, int bound_bits, int kappa) {
  const auto& field = f.field();
  if (bound_bits + kappa + 2 > 61)
    throw std::invalid_argument("ltz: plaintext bound overflow (bound + kappa too large for field)");
  // d = v + 2^bound is positive; its top bit is 0 iff v < 0.
  const FieldElement shiftc = field.pow(2, static_cast<std::uint64_t>(bound_bits));
  SharedVec d = add_constant(f, v, constant_vec(field, v.size(), shiftc));
  SharedVec fl = masked_floor(f, d, bound_bits + 1, bound_bits, kappa);
  SharedVec out(f.parties(), v.size());
  for (int p = 0; p < out.parties(); ++p)
    for (std::size_t i = 0; i < v.size(); ++i)
      out.shares[static_cast<std::size_t>(p)][i] =
          field.sub(1, fl.shares[static_cast<std::size_t>(p)][i]);
  return out;
}

SharedVec shift_right(PartyFabric& f, const SharedVec& v, int shift, int bound_bits, int kappa) {
  const auto& field = f.field();
  if (bound_bits + std::min(kappa, 59 - (bound_bits + 1)) + 2 > 61 || bound_bits + 10 > 61)
    throw std::invalid_argument("shift_right: plaintext bound overflow");
  const FieldElement shiftc = field.pow(2, static_cast<std::uint64_t>(bound_bits));
  SharedVec d = add_constant(f, v, constant_vec(field, v.size(), shiftc));
  SharedVec fl = masked_floor(f, d, bound_bits + 1, shift, kappa);
  const FieldElement back = field.pow(2, static_cast<std::uint64_t>(bound_bits - shift));
  SharedVec out(f.parties(), v.size());
  for (int p = 0; p < out.parties(); ++p)
    for (std::size_t i = 0; i < v.size(); ++i)
      out.shares[static_cast<std::size_t>(p)][i] =
          field.sub(fl.shares[static_cast<std::size_t>(p)][i], back);
  return out;
}

}  // namespace proto

// --- fixed-point layer -------------------------------------------------------

std::int64_t fixed_encode(double v, const FixedParams& p) {
  const double scaled = std::round(v * static_cast<double>(std::uint64_t{1} << p.fraction_bits));
  const double limit = static_cast<double>(std::int64_t{1} << p.magnitude_bits);
  if (!(std::abs(scaled) < limit))
    throw std::overflow_error("fixed_encode: plaintext bound overflow (declared magnitude exceeded)");
  return static_cast<std::int64_t>(scaled);
}

double fixed_decode(std::int64_t e, const FixedParams& p) {
  return static_cast<double>(e) / static_cast<double>(std::uint64_t{1} << p.fraction_bits);
}

namespace {

std::vector<FieldElement> encode_all(const PrimeField& field, std::span<const double> values,
                                     const FixedParams& p) {
  std::vector<FieldElement> enc(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    enc[i] = field.from_signed(fixed_encode(values[i], p));
  return enc;
}

void check_compatible(const SharedFixed& a, const SharedFixed& b) {
  if (a.params.fraction_bits != b.params.fraction_bits)
    throw std::invalid_argument("mixed fixed-point formats");
}

}  // namespace

SharedFixed fixed_input(PartyFabric& f, int dealer, std::span<const double> values,
                        const FixedParams& p) {
  auto enc = encode_all(f.field(), values, p);
  return SharedFixed{proto::input(f, dealer, enc), p, p.magnitude_bits};
}

SharedFixed fixed_constant(const PartyFabric& f, std::span<const double> values,
                           const FixedParams& p) {
  auto enc = encode_all(f.field(), values, p);
  return SharedFixed{proto::constant(f, enc), p, p.magnitude_bits};
}

SharedFixed fixed_add(const PartyFabric& f, const SharedFixed& a, const SharedFixed& b) {
  check_compatible(a, b);
  return SharedFixed{proto::add(f, a.enc, b.enc), a.params, std::max(a.bound_bits, b.bound_bits) + 1};
}

SharedFixed fixed_sub(const PartyFabric& f, const SharedFixed& a, const SharedFixed& b) {
  check_compatible(a, b);
  return SharedFixed{proto::sub(f, a.enc, b.enc), a.params, std::max(a.bound_bits, b.bound_bits) + 1};
}

SharedFixed fixed_scale_public(PartyFabric& f, const SharedFixed& a, double c) {
  std::vector<double> cs(a.size(), c);
  return fixed_scale_public_each(f, a, cs);
}

SharedFixed fixed_scale_public_each(PartyFabric& f, const SharedFixed& a,
                                    std::span<const double> c) {
  const auto& field = f.field();
  std::vector<FieldElement> enc(c.size());
  int cbits = 1;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const std::int64_t e = fixed_encode(c[i], a.params);
    enc[i] = field.from_signed(e);
    int b = 1;
    while ((std::int64_t{1} << b) <= std::abs(e)) ++b;
    cbits = std::max(cbits, b + 1);
  }
  const int prod_bits = a.bound_bits + cbits;
  if (prod_bits + 10 > 61)
    throw std::overflow_error("fixed_scale_public: plaintext bound overflow");
  SharedVec scaled = proto::scale_each(f, a.enc, enc);
  SharedVec trunc = proto::shift_right(f, scaled, a.params.fraction_bits, prod_bits, a.params.kappa);
  return SharedFixed{std::move(trunc), a.params, prod_bits + 1 - a.params.fraction_bits};
}

SharedFixed fixed_mul(PartyFabric& f, const SharedFixed& a, const SharedFixed& b) {
  check_compatible(a, b);
  const int prod_bits = a.bound_bits + b.bound_bits;
  if (prod_bits + 10 > 61)
    throw std::overflow_error("fixed_mul: plaintext bound overflow");
  SharedVec prod = proto::mul(f, a.enc, b.enc);
  SharedVec trunc = proto::shift_right(f, prod, a.params.fraction_bits, prod_bits, a.params.kappa);
  return SharedFixed{std::move(trunc), a.params, prod_bits + 1 - a.params.fraction_bits};
}

SharedVec fixed_less_than(PartyFabric& f, const SharedFixed& a, const SharedFixed& b) {
  check_compatible(a, b);
  SharedVec diff = proto::sub(f, a.enc, b.enc);
  return proto::ltz(f, diff, std::max(a.bound_bits, b.bound_bits) + 1, a.params.kappa);
}

SharedVec fixed_is_zero(PartyFabric& f, const SharedFixed& a, double tol) {
  const auto& field = f.field();
  const std::int64_t t = fixed_encode(std::abs(tol), a.params);
  const int bound = a.bound_bits + 1;
  // |a| <= tol  <=>  (a - tol - 1 < 0) AND NOT(a + tol < 0), on encoded integers.
  SharedVec low = proto::add_constant(
      f, a.enc, std::vector<FieldElement>(a.size(), field.from_signed(-t - 1)));
  SharedVec hi = proto::add_constant(
      f, a.enc, std::vector<FieldElement>(a.size(), field.from_signed(t)));
  SharedVec ble = proto::ltz(f, low, bound, a.params.kappa);
  SharedVec blt = proto::ltz(f, hi, bound, a.params.kappa);
  SharedVec bge(f.parties(), a.size());
  for (int p = 0; p < f.parties(); ++p)
    for (std::size_t i = 0; i < a.size(); ++i)
      bge.shares[static_cast<std::size_t>(p)][i] =
          field.sub(1, blt.shares[static_cast<std::size_t>(p)][i]);
  return proto::mul(f, ble, bge);
}

std::vector<double> fixed_open_to(PartyFabric& f, const SharedFixed& a,
                                  std::span<const int> recipients, const std::string& item,
                                  const std::string& category) {
  auto raw = proto::open_to(f, a.enc, recipients, item, category);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out[i] = fixed_decode(f.field().to_signed(raw[i]), a.params);
  return out;
}

SharedFixed secure_average(PartyFabric& f,
                           std::span<const std::pair<int, std::vector<double>>> contributions,
                           const FixedParams& p) {
  if (contributions.empty()) throw std::invalid_argument("secure_average: no contributions");
  const std::size_t len = contributions[0].second.size();
  const double k = static_cast<double>(contributions.size());
  std::vector<std::vector<FieldElement>> per_party(static_cast<std::size_t>(f.parties()));
  std::vector<std::vector<std::size_t>> owner_idx(static_cast<std::size_t>(f.parties()));
  for (std::size_t j = 0; j < contributions.size(); ++j) {
    const auto& [party, vals] = contributions[j];
    if (vals.size() != len) throw std::invalid_argument("secure_average: length mismatch");
    auto& dst = per_party[static_cast<std::size_t>(party)];
    for (double v : vals) dst.push_back(f.field().from_signed(fixed_encode(v / k, p)));
    owner_idx[static_cast<std::size_t>(party)].push_back(j);
  }
  auto dealt = proto::input_all(f, per_party);
  SharedFixed out{SharedVec(f.parties(), len), p, p.magnitude_bits + 1};
  for (int d = 0; d < f.parties(); ++d) {
    std::size_t offset = 0;
    for (std::size_t cnt = 0; cnt < owner_idx[static_cast<std::size_t>(d)].size(); ++cnt) {
      for (int q = 0; q < f.parties(); ++q)
        for (std::size_t i = 0; i < len; ++i)
          out.enc.shares[static_cast<std::size_t>(q)][i] =
              f.field().add(out.enc.shares[static_cast<std::size_t>(q)][i],
                            dealt[static_cast<std::size_t>(d)].shares[static_cast<std::size_t>(q)][offset + i]);
      offset += len;
    }
  }
  return out;
}

std::vector<SharedFixed> fixed_input_all(PartyFabric& f,
                                         std::span<const std::vector<double>> per_party,
                                         const FixedParams& p) {
  std::vector<std::vector<FieldElement>> enc(per_party.size());
  for (std::size_t d = 0; d < per_party.size(); ++d) enc[d] = encode_all(f.field(), per_party[d], p);
  auto dealt = proto::input_all(f, enc);
  std::vector<SharedFixed> out;
  out.reserve(dealt.size());
  for (auto& v : dealt) out.push_back(SharedFixed{std::move(v), p, p.magnitude_bits});
  return out;
}

SharedFixed fixed_redeclare(const SharedFixed& a, int bound_bits) {
  SharedFixed out = a;
  out.bound_bits = bound_bits;
  return out;
}

SharedFixed fixed_slice(const SharedFixed& a, std::size_t start, std::size_t len) {
  SharedFixed out{SharedVec(a.enc.parties(), len), a.params, a.bound_bits};
  for (int p = 0; p < a.enc.parties(); ++p)
    for (std::size_t i = 0; i < len; ++i)
      out.enc.shares[static_cast<std::size_t>(p)][i] = a.enc.shares[static_cast<std::size_t>(p)][start + i];
  return out;
}

SharedFixed fixed_concat(std::span<const SharedFixed> parts) {
  if (parts.empty()) throw std::invalid_argument("fixed_concat: no parts");
  int bound = 0;
  std::size_t total = 0;
  for (const auto& part : parts) {
    bound = std::max(bound, part.bound_bits);
    total += part.size();
  }
  SharedFixed out{SharedVec(parts[0].enc.parties(), total), parts[0].params, bound};
  std::size_t at = 0;
  for (const auto& part : parts) {
    for (int p = 0; p < part.enc.parties(); ++p)
      for (std::size_t i = 0; i < part.size(); ++i)
        out.enc.shares[static_cast<std::size_t>(p)][at + i] = part.enc.shares[static_cast<std::size_t>(p)][i];
    at += part.size();
  }
  return out;
}

SharedFixed fixed_sum_elements(const PartyFabric& f, const SharedFixed& a) {
  SharedFixed out{SharedVec(a.enc.parties(), 1), a.params, a.bound_bits};
  const auto& field = f.field();
  for (int p = 0; p < a.enc.parties(); ++p) {
    FieldElement acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc = field.add(acc, a.enc.shares[static_cast<std::size_t>(p)][i]);
    out.enc.shares[static_cast<std::size_t>(p)][0] = acc;
  }
  int extra = 0;
  std::size_t n = std::max<std::size_t>(a.size(), 1);
  while (n > 1) {
    n = (n + 1) / 2;
    ++extra;
  }
  out.bound_bits = a.bound_bits + extra;
  return out;
}

SharedFixed fixed_abs(PartyFabric& f, const SharedFixed& a) {
  const auto& field = f.field();
  SharedVec s = proto::ltz(f, a.enc, a.bound_bits, a.params.kappa);
  SharedVec prod = proto::mul(f, a.enc, s);  // a where negative, else 0
  SharedFixed out = a;
  for (int p = 0; p < a.enc.parties(); ++p)
    for (std::size_t i = 0; i < a.size(); ++i) {
      const FieldElement twice = field.add(prod.shares[static_cast<std::size_t>(p)][i],
                                           prod.shares[static_cast<std::size_t>(p)][i]);
      out.enc.shares[static_cast<std::size_t>(p)][i] =
          field.sub(a.enc.shares[static_cast<std::size_t>(p)][i], twice);
    }
  return out;
}

SharedFixed fixed_max_tree(PartyFabric& f, const SharedFixed& a) {
  if (a.size() == 0) throw std::invalid_argument("fixed_max_tree: empty vector");
  const auto& field = f.field();
  SharedFixed cur = a;
  while (cur.size() > 1) {
    const std::size_t pairs = cur.size() / 2;
    SharedFixed x = fixed_slice(cur, 0, pairs);
    SharedFixed y = fixed_slice(cur, pairs, pairs);
    SharedVec b = fixed_less_than(f, x, y);              // [x < y]
    SharedVec diff = proto::sub(f, y.enc, x.enc);
    SharedVec gain = proto::mul(f, b, diff);             // (y-x) where y wins
    SharedFixed next{SharedVec(cur.enc.parties(), pairs + (cur.size() % 2)), cur.params, cur.bound_bits};
    for (int p = 0; p < cur.enc.parties(); ++p) {
      for (std::size_t i = 0; i < pairs; ++i)
        next.enc.shares[static_cast<std::size_t>(p)][i] =
            field.add(x.enc.shares[static_cast<std::size_t>(p)][i], gain.shares[static_cast<std::size_t>(p)][i]);
      if (cur.size() % 2)
        next.enc.shares[static_cast<std::size_t>(p)][pairs] =
            cur.enc.shares[static_cast<std::size_t>(p)][cur.size() - 1];
    }
    cur = std::move(next);
  }
  return cur;
}

SharedVec bit_and_tree(PartyFabric& f, const SharedVec& bits) {
  if (bits.size() == 0) throw std::invalid_argument("bit_and_tree: empty vector");
  SharedVec cur = bits;
  while (cur.size() > 1) {
    const std::size_t pairs = cur.size() / 2;
    SharedVec x(cur.parties(), pairs), y(cur.parties(), pairs);
    for (int p = 0; p < cur.parties(); ++p)
      for (std::size_t i = 0; i < pairs; ++i) {
        x.shares[static_cast<std::size_t>(p)][i] = cur.shares[static_cast<std::size_t>(p)][i];
        y.shares[static_cast<std::size_t>(p)][i] = cur.shares[static_cast<std::size_t>(p)][pairs + i];
      }
    SharedVec prod = proto::mul(f, x, y);
    SharedVec next(cur.parties(), pairs + (cur.size() % 2));
    for (int p = 0; p < cur.parties(); ++p) {
      for (std::size_t i = 0; i < pairs; ++i)
        next.shares[static_cast<std::size_t>(p)][i] = prod.shares[static_cast<std::size_t>(p)][i];
      if (cur.size() % 2)
        next.shares[static_cast<std::size_t>(p)][pairs] = cur.shares[static_cast<std::size_t>(p)][cur.size() - 1];
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace lem::mpc
