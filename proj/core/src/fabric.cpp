#include "lem/fabric.hpp"

#include <stdexcept>

namespace lem::mpc {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

PartyFabric::PartyFabric(int n_parties, PrimeField field, std::uint64_t seed)
    : n_(n_parties), field_(field), theta_((n_parties - 1) / 2), session_(splitmix64(seed)) {
  if (n_parties < 1) throw std::invalid_argument("fabric needs at least one party");
  rng_.reserve(static_cast<std::size_t>(n_));
  for (int p = 0; p < n_; ++p) rng_.emplace_back(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(p) + 1)));
  outbox_.resize(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_));
  inbox_.resize(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_));
  transcript_.resize(static_cast<std::size_t>(n_));
}

void PartyFabric::set_threshold(int theta) {
  if (theta < 0 || 2 * theta >= n_)
    throw std::invalid_argument("threshold must satisfy 0 <= 2*theta < n");
  theta_ = theta;
}

void PartyFabric::post(int from, int to, std::span<const FieldElement> payload) {
  auto& box = outbox_[static_cast<std::size_t>(from) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(to)];
  box.insert(box.end(), payload.begin(), payload.end());
  elements_sent_ += payload.size();
}

void PartyFabric::deliver() {
  for (std::size_t i = 0; i < outbox_.size(); ++i) {
    inbox_[i].swap(outbox_[i]);
    outbox_[i].clear();
  }
  if (record_) {
    for (int to = 0; to < n_; ++to) {
      auto& t = transcript_[static_cast<std::size_t>(to)];
      for (int from = 0; from < n_; ++from) {
        const auto& box = inbox_[static_cast<std::size_t>(from) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(to)];
        t.insert(t.end(), box.begin(), box.end());
      }
    }
  }
  ++round_;
}

std::span<const FieldElement> PartyFabric::received(int to, int from) const {
  const auto& box = inbox_[static_cast<std::size_t>(from) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(to)];
  return {box.data(), box.size()};
}

void PartyFabric::log_open(std::string item, std::vector<int> recipients, std::string category,
                           std::size_t count) {
  audit_.push_back(OpenEvent{round_, std::move(item), std::move(recipients), std::move(category), count});
}

}  // namespace lem::mpc
