#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccb/disruptions.hpp"
#include "ccb/metrics.hpp"
#include "ccb/rewriter.hpp"
#include "ccb/scoring_backend.hpp"
#include "ccb/trace_model.hpp"

namespace ccb {

/// Index of the largest present score; ties go to the lowest index. NaN
/// counts as absent. Throws NoScorableCandidate if nothing is present.
std::size_t select_best(std::span<const std::optional<double>> scores);

/// Canonical form of an answer for comparison: trimmed, commas and
/// surrounding symbols ($, %, braces, trailing period) removed.
std::string normalize_answer(std::string_view answer);

/// Exact value of a numeric answer ("-3", "2.50", "1/2", "\frac{1}{2}"),
/// as a reduced fraction "p/q"; absent when the text is not a number.
std::optional<std::string> rational_form(std::string_view answer);

bool grade(const std::optional<std::string>& predicted, std::string_view gold,
           TaskType task_type);

struct SelectionResult {
  std::string item_id;
  /// Absent when no candidate could be scored.
  std::optional<std::size_t> chosen_index;
  double chosen_score = 0.0;
  std::vector<std::optional<double>> scores;
  std::optional<std::string> graded_answer;
  bool correct = false;
  /// Set when the item counts as a failure.
  std::string error;
  /// Per-candidate scoring and disruption notes.
  std::vector<std::string> diagnostics;
};

struct AccuracyReport {
  MetricSpec metric;
  std::string disruption;
  std::size_t n_items = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;
  std::size_t failures = 0;
  /// Sorted by item_id.
  std::vector<SelectionResult> results;
};

using QueryRenderer = std::function<std::string(const BenchmarkItem&)>;

struct EvaluationContext {
  const BackendRegistry* registry = nullptr;
  /// Used by paraphrase disruptions.
  const Rewriter* rewriter = nullptr;
  /// Evaluator context for an item; defaults to the bare question.
  QueryRenderer query;
  std::size_t items_in_flight = 1;
  std::size_t requests_in_flight = 1;
  /// Grade the disrupted candidate's own answer instead of the original's.
  bool strict_grading = false;
};

/// Joins the labels of a pipeline ("none" when empty).
std::string pipeline_label(const DisruptionPipeline& pipeline);

/// Disrupts, scores and selects for every item, then grades the chosen
/// candidate. Items that cannot be scored count as incorrect failures.
/// Throws ConfigError before any work if the spec or pipeline is invalid
/// or names an unknown evaluator.
AccuracyReport evaluate(const std::vector<BenchmarkItem>& items, const MetricSpec& metric,
                        const DisruptionPipeline& pipeline, const EvaluationContext& ctx);

/// Fraction of items with at least one correct candidate.
double pass_at_n(const std::vector<BenchmarkItem>& items);

}  // namespace ccb
