#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ccb {

enum class TaskType { open_ended, multiple_choice };

std::string_view to_string(TaskType t) noexcept;
std::optional<TaskType> parse_task_type(std::string_view s) noexcept;

/// Half-open byte range [begin, end) into the owning trace's raw_text.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const CharSpan&, const CharSpan&) = default;
};

struct ReasoningStep {
  std::string text;
  CharSpan span;
  std::size_t index = 0;

  friend bool operator==(const ReasoningStep&, const ReasoningStep&) = default;
};

/// One sampled output. `steps` always partitions `raw_text`: concatenating
/// the step texts in order reproduces it byte for byte.
struct CandidateTrace {
  std::string raw_text;
  std::vector<ReasoningStep> steps;
  std::optional<std::string> final_answer;
  /// Transformations applied since load ("shuffle:seed=7", ...). Not scored.
  std::vector<std::string> provenance;

  /// True when there is nothing to score (empty or whitespace-only text).
  bool degenerate() const noexcept;

  friend bool operator==(const CandidateTrace&, const CandidateTrace&) = default;
};

struct LabeledOption {
  std::string label;
  std::string text;

  friend bool operator==(const LabeledOption&, const LabeledOption&) = default;
};

struct BenchmarkItem {
  std::string item_id;
  std::string question;
  TaskType task_type = TaskType::open_ended;
  std::vector<LabeledOption> options;
  std::string gold_answer;
  std::vector<CandidateTrace> candidates;

  friend bool operator==(const BenchmarkItem&, const BenchmarkItem&) = default;
};

// --- segmentation -----------------------------------------------------------

/// Splits a trace into reasoning steps at punctuation boundaries.
///
/// A boundary follows a run of sentence-final punctuation {., !, ?} (plus any
/// closing quotes or brackets) when the next byte is whitespace or the end of
/// the text, and follows every newline. The whitespace run after a boundary
/// belongs to the step it terminates. A period does not end a step when it
/// sits between two digits, ends a known abbreviation ("e.g.", "etc.", ...),
/// or ends a bare enumeration marker ("1.") at the start of a step.
/// A cut is only taken once the pending step holds non-whitespace text, so
/// leading whitespace joins the first real step and no step is blank unless
/// the whole input is.
///
/// Pure; empty input yields an empty list.
std::vector<ReasoningStep> segment_trace(std::string_view raw_text);

/// The abbreviation list consulted by segment_trace (lowercase, without the
/// final period).
const std::vector<std::string>& known_abbreviations();

/// Recomputes spans and indices so that `steps` partition their own
/// concatenation, and returns that concatenation.
std::string rebuild_from_steps(std::vector<ReasoningStep>& steps);

// --- answers ----------------------------------------------------------------

/// Isolates the final answer string from a generated trace.
///
/// open_ended: content of the last \boxed{...}; otherwise the first
/// number-like token after the last final-answer cue ("####", "Answer:",
/// "answer is"). multiple_choice: a standalone option label A-E (optionally
/// parenthesized) inside the last \boxed{...} or after the last cue.
std::optional<std::string> extract_final_answer(std::string_view raw_text,
                                                TaskType task_type);

/// Builds a segmented trace with its extracted answer.
CandidateTrace make_trace(std::string raw_text, TaskType task_type);

}  // namespace ccb
