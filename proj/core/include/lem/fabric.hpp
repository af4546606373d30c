#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lem/field.hpp"

namespace lem::mpc {

// In-process synchronous message fabric for N logical parties.
//
// Protocols proceed in barrier-synchronized rounds: every party posts its
// messages for the round, deliver() moves them to the receivers, and the next
// round begins. Given the same seed and inputs the full message schedule is
// deterministic. Per-party transcripts (every field element received, every
// value opened to the party) can be recorded for the privacy tests; recording
// is off by default because production-size runs exchange too many elements
// to retain.
class PartyFabric {
 public:
  PartyFabric(int n_parties, PrimeField field, std::uint64_t seed);

  int parties() const { return n_; }
  const PrimeField& field() const { return field_; }
  std::uint64_t session() const { return session_; }

  // Polynomial degree for sharings; default floor((n-1)/2), always 2*theta < n.
  int threshold() const { return theta_; }
  void set_threshold(int theta);

  std::mt19937_64& rng(int party) { return rng_[static_cast<std::size_t>(party)]; }

  // --- round-synchronous messaging -------------------------------------
  void post(int from, int to, std::span<const FieldElement> payload);
  void post(int from, int to, FieldElement v) { post(from, to, std::span<const FieldElement>(&v, 1)); }
  void deliver();  // barrier: all posted messages become visible; round advances
  std::span<const FieldElement> received(int to, int from) const;
  int round() const { return round_; }
  std::uint64_t elements_sent() const { return elements_sent_; }

  // --- transcripts (privacy tests) --------------------------------------
  void set_record_transcripts(bool on) { record_ = on; }
  bool recording() const { return record_; }
  // Everything party saw: received elements in delivery order, then any values
  // opened to it (appended by the open protocols via note_opened_value).
  const std::vector<FieldElement>& transcript(int party) const {
    return transcript_[static_cast<std::size_t>(party)];
  }
  void note_opened_value(int party, FieldElement v) {
    if (record_) transcript_[static_cast<std::size_t>(party)].push_back(v);
  }

  // --- opening audit -----------------------------------------------------
  // One event per (possibly vectorized) opening. `category` classifies the
  // opening: "consensus-z", "convergence-bit", "final-output", "settlement",
  // "balance-check", or "mask" for protocol-internal statistically masked
  // values.
  struct OpenEvent {
    int round = 0;
    std::string item;
    std::vector<int> recipients;
    std::string category;
    std::size_t count = 0;  // number of field elements opened
  };
  void log_open(std::string item, std::vector<int> recipients, std::string category,
                std::size_t count);
  const std::vector<OpenEvent>& audit() const { return audit_; }
  void clear_audit() { audit_.clear(); }

 private:
  int n_;
  PrimeField field_;
  int theta_;
  std::uint64_t session_;
  int round_ = 0;
  bool record_ = false;
  std::uint64_t elements_sent_ = 0;
  std::vector<std::mt19937_64> rng_;
  // boxes are indexed [from * n + to]; outbox is filled during a round and
  // swapped into inbox at deliver().
  std::vector<std::vector<FieldElement>> outbox_;
  std::vector<std::vector<FieldElement>> inbox_;
  std::vector<std::vector<FieldElement>> transcript_;
  std::vector<OpenEvent> audit_;
};

}  // namespace lem::mpc
