#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccb/scoring_backend.hpp"
#include "ccb/trace_model.hpp"

namespace ccb {

enum class MetricKind { self_certainty, log_likelihood, entropy };

/// What each scored token is conditioned on.
///   full:          query + every earlier token of the trace
///   step_masked:   query + earlier tokens of the same step only
///   query_masked:  earlier tokens of the same step only
enum class ConditioningMode { full, step_masked, query_masked };

/// paper_literal reports the formulas as written: mean realized log-prob,
/// mean vocabulary log-prob, mean entropy. certainty_aligned negates the
/// latter two so that a larger value always means a more confident model.
enum class SignConvention { paper_literal, certainty_aligned };

/// How per-token statistics are pooled across steps under masking.
enum class Aggregation { token_weighted, step_mean };

std::string_view to_string(MetricKind k) noexcept;
std::string_view to_string(ConditioningMode m) noexcept;
std::string_view to_string(SignConvention s) noexcept;
std::string_view to_string(Aggregation a) noexcept;
std::optional<MetricKind> parse_metric_kind(std::string_view s) noexcept;
std::optional<ConditioningMode> parse_conditioning_mode(std::string_view s) noexcept;
std::optional<SignConvention> parse_sign_convention(std::string_view s) noexcept;
std::optional<Aggregation> parse_aggregation(std::string_view s) noexcept;

/// Fully identifies one scoring configuration.
///
/// With `alpha` set the metric is contrastive, R - alpha * R_masked, and
/// `mode` names the masked variant subtracted (step_masked or query_masked).
struct MetricSpec {
  MetricKind kind = MetricKind::self_certainty;
  ConditioningMode mode = ConditioningMode::full;
  std::string evaluator;
  SignConvention sign = SignConvention::certainty_aligned;
  std::optional<double> alpha;
  Aggregation aggregation = Aggregation::token_weighted;
  /// Nucleus mass for entropy; absent = full-distribution entropy.
  std::optional<double> entropy_top_p;

  /// Throws ConfigError: alpha outside [0, 1], contrastive with mode full,
  /// or entropy_top_p outside (0, 1].
  void validate() const;

  friend bool operator==(const MetricSpec&, const MetricSpec&) = default;
};

struct StepPartial {
  std::size_t step_index = 0;
  std::size_t token_count = 0;
  /// Sum of the selected per-token statistic over the step (sign applied).
  double sum = 0.0;
};

struct MetricValue {
  double value = 0.0;
  /// n: tokens contributing to the value.
  std::size_t token_count = 0;
  /// K: steps of the trace.
  std::size_t step_count = 0;
  /// Per-step partial sums; populated by the masked modes.
  std::optional<std::vector<StepPartial>> per_step;
  /// Steps that tokenized to nothing and were left out.
  std::vector<std::size_t> skipped_steps;
  /// Contrastive only: n of the full sub-metric (the masked n is token_count).
  std::optional<std::size_t> full_token_count;
};

/// Absent (std::nullopt) means the trace could not be scored; it is never
/// reported as a number.
using MetricResult = std::optional<MetricValue>;

struct MetricOptions {
  /// Upper bound on concurrent per-step score calls.
  std::size_t max_in_flight = 1;
};

/// One call: context = query, continuation = the whole trace.
MetricResult compute_full(const CandidateTrace& trace, std::string_view query,
                          MetricKind kind, const ScoringBackend& evaluator,
                          SignConvention sign = SignConvention::paper_literal,
                          std::optional<double> entropy_top_p = std::nullopt);

/// One call per step with context = query (step_masked) or empty
/// (query_masked). Steps are reduced in step order.
MetricResult compute_masked(const CandidateTrace& trace, std::string_view query,
                            MetricKind kind, const ScoringBackend& evaluator,
                            ConditioningMode mode,
                            SignConvention sign = SignConvention::paper_literal,
                            Aggregation aggregation = Aggregation::token_weighted,
                            std::optional<double> entropy_top_p = std::nullopt,
                            const MetricOptions& opts = {});

/// full - alpha * masked, both under the same kind, evaluator and sign.
MetricResult compute_contrastive(const CandidateTrace& trace, std::string_view query,
                                 MetricKind kind, const ScoringBackend& evaluator,
                                 double alpha, ConditioningMode masked_mode,
                                 SignConvention sign = SignConvention::paper_literal,
                                 const MetricOptions& opts = {});

/// Dispatches on spec.mode / spec.alpha. The evaluator named in the spec is
/// not looked up here; the caller passes it.
MetricResult compute_metric(const CandidateTrace& trace, std::string_view query,
                            const MetricSpec& spec, const ScoringBackend& evaluator,
                            const MetricOptions& opts = {});

struct CandidateScore {
  MetricResult value;
  /// Why value is absent, when it is.
  std::string diagnostic;
};

/// One score per candidate, in order. Scoring errors become an absent value
/// with a diagnostic instead of propagating.
std::vector<CandidateScore> score_candidates(const BenchmarkItem& item,
                                             std::string_view query,
                                             const MetricSpec& spec,
                                             const ScoringBackend& evaluator,
                                             const MetricOptions& opts = {});

}  // namespace ccb
