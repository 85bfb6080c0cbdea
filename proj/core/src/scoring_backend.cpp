#include "ccb/scoring_backend.hpp"

#include <numeric>
#include <stdexcept>

#include "ccb/errors.hpp"

namespace ccb {

std::vector<std::string> Needs::names() const {
  std::vector<std::string> out;
  if (contains(Statistic::realized_logprob)) out.emplace_back("realized_logprob");
  if (contains(Statistic::entropy)) out.emplace_back("entropy");
  if (contains(Statistic::mean_vocab_logprob)) out.emplace_back("mean_vocab_logprob");
  return out;
}

Needs Needs::from_names(const std::vector<std::string>& names) {
  Needs n;
  for (const auto& name : names) {
    if (name == "realized_logprob") {
      n.bits_ |= static_cast<std::uint8_t>(Statistic::realized_logprob);
    } else if (name == "entropy") {
      n.bits_ |= static_cast<std::uint8_t>(Statistic::entropy);
    } else if (name == "mean_vocab_logprob") {
      n.bits_ |= static_cast<std::uint8_t>(Statistic::mean_vocab_logprob);
    } else {
      throw ProtocolError("unknown statistic '" + name + "'");
    }
  }
  return n;
}

void ScoreRequest::validate() const {
  if (continuation.empty()) throw std::invalid_argument("continuation must be non-empty");
  if (needs.empty()) throw std::invalid_argument("needs must be non-empty");
  if (entropy_top_p && !(*entropy_top_p > 0.0 && *entropy_top_p <= 1.0)) {
    throw std::invalid_argument("entropy_top_p must lie in (0, 1]");
  }
}

std::string ScoringBackend::sample(std::string_view, const SampleParams&) const {
  throw CapabilityError("backend '" + id() + "' does not support sampling");
}

std::size_t token_prefix_bytes(const ScoringBackend& backend,
                               std::string_view text, std::size_t limit) {
  if (text.empty()) return 0;
  ScoreResponse r;
  try {
    r = backend.score(ScoreRequest{"", std::string(text),
                                   Needs{Statistic::realized_logprob}, std::nullopt});
  } catch (const EmptyContinuationError&) {
    return text.size();
  }
  if (r.tokens.size() <= limit) return text.size();
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < limit; ++i) bytes += r.tokens[i].token_text.size();
  return bytes;
}

void BackendRegistry::add(BackendPtr backend) {
  const std::string id = backend->id();
  if (!backends_.emplace(id, std::move(backend)).second) {
    throw ConfigError("duplicate backend id '" + id + "'");
  }
}

const ScoringBackend& BackendRegistry::get(std::string_view id) const {
  return *shared(id);
}

BackendPtr BackendRegistry::shared(std::string_view id) const {
  auto it = backends_.find(id);
  if (it == backends_.end()) {
    throw ConfigError("unknown backend '" + std::string(id) + "'");
  }
  return it->second;
}

bool BackendRegistry::contains(std::string_view id) const {
  return backends_.find(id) != backends_.end();
}

std::vector<std::string> BackendRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : backends_) out.push_back(id);
  return out;
}

}  // namespace ccb
