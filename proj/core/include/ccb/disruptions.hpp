#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccb/metrics.hpp"
#include "ccb/rewriter.hpp"
#include "ccb/scoring_backend.hpp"
#include "ccb/trace_model.hpp"

namespace ccb {

enum class DisruptionKind {
  none,
  shuffle,
  truncate,
  paraphrase,
  attention_mask,
  query_mask,
  evaluator_swap,
};

enum class TruncationUnit { characters, tokens };

std::string_view to_string(DisruptionKind k) noexcept;
std::string_view to_string(TruncationUnit u) noexcept;
std::optional<DisruptionKind> parse_disruption_kind(std::string_view s) noexcept;
std::optional<TruncationUnit> parse_truncation_unit(std::string_view s) noexcept;

/// One disruption. Data-level kinds rewrite the trace; attention_mask and
/// query_mask switch the metric's conditioning; evaluator_swap replaces the
/// evaluator. Only the fields the kind needs may be set.
struct DisruptionSpec {
  DisruptionKind kind = DisruptionKind::none;
  std::optional<std::uint64_t> seed;
  /// Truncation limit, absolute...
  std::optional<std::size_t> limit;
  /// ...or relative to each trace's own length (0 < f <= 1).
  std::optional<double> limit_fraction;
  std::optional<TruncationUnit> unit;
  std::optional<RewriterConfig> rewriter;
  std::optional<std::string> evaluator_override;

  static DisruptionSpec none() { return {}; }
  static DisruptionSpec shuffle(std::uint64_t seed);
  static DisruptionSpec truncate(std::size_t limit, TruncationUnit unit);
  static DisruptionSpec truncate_fraction(double fraction, TruncationUnit unit);
  static DisruptionSpec paraphrase(RewriterConfig rewriter);
  static DisruptionSpec attention_mask();
  static DisruptionSpec query_mask();
  static DisruptionSpec evaluator_swap(std::string evaluator);

  /// Throws ConfigError when required fields are missing or extra ones set.
  void validate() const;
  /// Short human label, e.g. "shuffle(seed=7)".
  std::string label() const;
};

using DisruptionPipeline = std::vector<DisruptionSpec>;

/// Throws ConfigError for malformed specs or more than one evaluator swap.
void validate_pipeline(const DisruptionPipeline& pipeline);

/// Permutation applied by shuffle_steps: position i of the result holds
/// original step perm[i].
///
/// Generator: std::mt19937_64 seeded with
///   s = splitmix64(splitmix64(splitmix64(seed) ^ fnv1a64(item_id)) ^ candidate_index)
/// and a descending Fisher-Yates pass; each draw j in [0, i] takes the first
/// engine output x < floor(2^64 / (i+1)) * (i+1) (rejecting the rest) and
/// sets j = x mod (i+1). Everything here is fixed by the C++ standard, so
/// permutations are identical on every platform.
std::vector<std::size_t> shuffle_permutation(std::size_t step_count, std::uint64_t seed,
                                             std::string_view item_id,
                                             std::size_t candidate_index);

/// Reorders steps verbatim (each keeps its own trailing whitespace) and
/// rebuilds raw_text and spans. final_answer is left as it was.
CandidateTrace shuffle_steps(const CandidateTrace& trace, std::uint64_t seed,
                             std::string_view item_id, std::size_t candidate_index);

/// Keeps a prefix of the trace, then re-segments and re-extracts the answer.
/// characters: the first `limit` bytes, backed off to a UTF-8 boundary.
/// tokens: the first `limit` tokens of `tokenizer` (required for this unit).
/// A limit at or beyond the length returns the trace unchanged.
CandidateTrace truncate_trace(const CandidateTrace& trace, std::size_t limit,
                              TruncationUnit unit, TaskType task_type,
                              const ScoringBackend* tokenizer = nullptr);

struct ParaphraseResult {
  CandidateTrace trace;
  std::size_t rewriter_calls = 0;
  /// One entry per step that kept its original text.
  std::vector<std::string> diagnostics;
};

/// Sends each non-blank step to the rewriter on its own and substitutes the
/// single-sentence reply, keeping the step's surrounding whitespace. A reply
/// that is empty or spans several sentences, or a failed call, is retried up
/// to `max_retries` times; after that the step keeps its original text.
ParaphraseResult paraphrase_steps(const CandidateTrace& trace, const Rewriter& rewriter,
                                  int max_retries, std::size_t max_in_flight = 1);

struct DisruptionContext {
  std::string item_id;
  std::size_t candidate_index = 0;
  TaskType task_type = TaskType::open_ended;
  /// Evaluator used to count tokens for token-unit truncation.
  const ScoringBackend* tokenizer = nullptr;
  /// Required by paraphrase specs.
  const Rewriter* rewriter = nullptr;
  std::size_t rewriter_in_flight = 1;
};

struct Disrupted {
  CandidateTrace trace;
  MetricSpec metric;
  std::vector<std::string> diagnostics;
};

/// Applies one spec. Data-level kinds re-extract final_answer from the
/// disrupted text (the original answer is kept by the caller).
Disrupted apply(const DisruptionSpec& spec, const CandidateTrace& trace,
                const MetricSpec& metric, const DisruptionContext& ctx);

/// Left-to-right composition of apply().
Disrupted apply_pipeline(const DisruptionPipeline& pipeline, const CandidateTrace& trace,
                         const MetricSpec& metric, const DisruptionContext& ctx);

/// The metric spec a pipeline yields, without touching any trace.
MetricSpec effective_metric(const DisruptionPipeline& pipeline, MetricSpec metric);

}  // namespace ccb
