#include <algorithm>
#include <cctype>
#include <string>

#include "ccb/trace_model.hpp"

namespace ccb {
namespace {

bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
         c == '\f';
}

bool is_terminal(char c) noexcept { return c == '.' || c == '!' || c == '?'; }

bool is_closer(char c) noexcept {
  return c == ')' || c == ']' || c == '}' || c == '"' || c == '\'';
}

bool is_ascii_digit(char c) noexcept { return c >= '0' && c <= '9'; }

bool is_ascii_alpha(char c) noexcept {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

// Word made of letters and inner periods that ends right before `dot`
// ("e.g" for "e.g."), or empty if the preceding byte is not a letter.
std::string_view word_before(std::string_view s, std::size_t dot) {
  std::size_t b = dot;
  while (b > 0 && (is_ascii_alpha(s[b - 1]) || s[b - 1] == '.')) --b;
  while (b < dot && s[b] == '.') ++b;
  return s.substr(b, dot - b);
}

bool is_abbreviation(std::string_view word) {
  if (word.empty()) return false;
  std::string lower(word);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  const auto& abbrs = known_abbreviations();
  return std::find(abbrs.begin(), abbrs.end(), lower) != abbrs.end();
}

// "12." opening a step is a list marker, not a sentence end.
bool is_enumerator(std::string_view s, std::size_t step_begin,
                   std::size_t dot) {
  std::size_t b = step_begin;
  while (b < dot && is_space(s[b])) ++b;
  if (b == dot || dot - b > 3) return false;
  for (std::size_t i = b; i < dot; ++i) {
    if (!is_ascii_digit(s[i])) return false;
  }
  return true;
}

bool period_is_exempt(std::string_view s, std::size_t step_begin,
                      std::size_t dot) {
  const bool digit_before = dot > 0 && is_ascii_digit(s[dot - 1]);
  const bool digit_after = dot + 1 < s.size() && is_ascii_digit(s[dot + 1]);
  if (digit_before && digit_after) return true;
  if (is_abbreviation(word_before(s, dot))) return true;
  return is_enumerator(s, step_begin, dot);
}

}  // namespace

const std::vector<std::string>& known_abbreviations() {
  static const std::vector<std::string> kAbbreviations = {
      "al",   "approx", "cf",  "dr",  "e.g", "eq",  "eqs", "etc",
      "fig",  "figs",   "i.e", "jr",  "mr",  "mrs", "ms",  "prof",
      "resp", "sr",     "st",  "viz", "vs",
  };
  return kAbbreviations;
}

std::vector<ReasoningStep> segment_trace(std::string_view s) {
  std::vector<ReasoningStep> steps;
  const std::size_t n = s.size();
  std::size_t start = 0;
  bool has_content = false;

  auto cut = [&](std::size_t end) {
    steps.push_back(ReasoningStep{std::string(s.substr(start, end - start)),
                                  CharSpan{start, end}, steps.size()});
    start = end;
    has_content = false;
  };
  auto skip_space = [&](std::size_t from) {
    while (from < n && is_space(s[from])) ++from;
    return from;
  };

  std::size_t i = 0;
  while (i < n) {
    const char c = s[i];
    if (c == '\n') {
      const std::size_t j = skip_space(i + 1);
      if (has_content) cut(j);
      i = j;
      continue;
    }
    if (is_terminal(c)) {
      std::size_t j = i;
      while (j < n && is_terminal(s[j])) ++j;
      std::size_t k = j;
      while (k < n && is_closer(s[k])) ++k;
      has_content = true;
      const bool at_break = k == n || is_space(s[k]);
      const bool single_period = c == '.' && j == i + 1;
      if (at_break && !(single_period && period_is_exempt(s, start, i))) {
        cut(skip_space(k));
        i = start;
        continue;
      }
      i = k;
      continue;
    }
    if (!is_space(c)) has_content = true;
    ++i;
  }
  if (start < n) cut(n);
  return steps;
}

std::string rebuild_from_steps(std::vector<ReasoningStep>& steps) {
  std::string out;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    steps[k].index = k;
    steps[k].span = CharSpan{out.size(), out.size() + steps[k].text.size()};
    out += steps[k].text;
  }
  return out;
}

bool CandidateTrace::degenerate() const noexcept {
  return std::all_of(raw_text.begin(), raw_text.end(), is_space);
}

std::string_view to_string(TaskType t) noexcept {
  return t == TaskType::open_ended ? "open_ended" : "multiple_choice";
}

std::optional<TaskType> parse_task_type(std::string_view s) noexcept {
  if (s == "open_ended") return TaskType::open_ended;
  if (s == "multiple_choice") return TaskType::multiple_choice;
  return std::nullopt;
}

CandidateTrace make_trace(std::string raw_text, TaskType task_type) {
  CandidateTrace t;
  t.steps = segment_trace(raw_text);
  t.final_answer = extract_final_answer(raw_text, task_type);
  t.raw_text = std::move(raw_text);
  return t;
}

}  // namespace ccb
