#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ccb {

/// Per-token summaries of the predictive distribution that cross the
/// backend interface. Everything the metrics need is derivable from these.
enum class Statistic : std::uint8_t {
  realized_logprob = 1 << 0,
  entropy = 1 << 1,
  mean_vocab_logprob = 1 << 2,
};

/// Set of requested statistics.
class Needs {
 public:
  constexpr Needs() = default;
  constexpr Needs(std::initializer_list<Statistic> stats) {
    for (auto s : stats) bits_ |= static_cast<std::uint8_t>(s);
  }
  static constexpr Needs all() {
    return {Statistic::realized_logprob, Statistic::entropy,
            Statistic::mean_vocab_logprob};
  }

  constexpr bool contains(Statistic s) const {
    return (bits_ & static_cast<std::uint8_t>(s)) != 0;
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }

  std::vector<std::string> names() const;
  /// Throws ProtocolError on an unknown name.
  static Needs from_names(const std::vector<std::string>& names);

  friend constexpr bool operator==(Needs, Needs) = default;

 private:
  std::uint8_t bits_ = 0;
};

struct ScoreRequest {
  std::string context;
  std::string continuation;
  Needs needs = Needs::all();
  /// When set, entropy is computed over the smallest nucleus with mass >= p,
  /// renormalized. Absent means the full distribution.
  std::optional<double> entropy_top_p;

  /// Throws std::invalid_argument when continuation or needs is empty, or
  /// entropy_top_p lies outside (0, 1].
  void validate() const;
};

struct TokenScore {
  std::string token_text;
  double realized_logprob = 0.0;
  double entropy = 0.0;
  double mean_vocab_logprob = 0.0;

  friend bool operator==(const TokenScore&, const TokenScore&) = default;
};

struct ScoreResponse {
  std::vector<TokenScore> tokens;
  std::size_t token_count = 0;
  std::size_t vocab_size = 0;
  std::string model_fingerprint;

  friend bool operator==(const ScoreResponse&, const ScoreResponse&) = default;
};

struct BackendInfo {
  std::string model_fingerprint;
  std::size_t vocab_size = 0;
  std::size_t max_context = 0;
};

struct SampleParams {
  double temperature = 0.8;
  std::size_t max_tokens = 256;
  std::uint64_t seed = 0;
  /// Zero-temperature limit: always take the most probable symbol.
  bool greedy = false;
};

/// An evaluator (or generator) language model.
///
/// Implementations are safe to call from several threads at once.
class ScoringBackend {
 public:
  virtual ~ScoringBackend() = default;

  virtual const std::string& id() const = 0;
  virtual BackendInfo info() const = 0;

  /// Scores every token of request.continuation conditioned on
  /// request.context plus the preceding continuation tokens.
  /// Throws EmptyContinuationError if the continuation has no tokens.
  virtual ScoreResponse score(const ScoreRequest& request) const = 0;

  /// Samples a continuation of `context`. Throws CapabilityError unless the
  /// backend supports generation.
  virtual std::string sample(std::string_view context,
                             const SampleParams& params) const;
};

using BackendPtr = std::shared_ptr<const ScoringBackend>;

/// Byte length of the first `limit` evaluator tokens of `text` (scored with
/// no context). Returns text.size() when it has `limit` tokens or fewer.
std::size_t token_prefix_bytes(const ScoringBackend& backend,
                               std::string_view text, std::size_t limit);

class BackendRegistry {
 public:
  /// Throws ConfigError on a duplicate id.
  void add(BackendPtr backend);
  /// Throws ConfigError naming the id if it is unknown.
  const ScoringBackend& get(std::string_view id) const;
  BackendPtr shared(std::string_view id) const;
  bool contains(std::string_view id) const;
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, BackendPtr, std::less<>> backends_;
};

}  // namespace ccb
