#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <string>

#include "ccb/trace_model.hpp"

namespace ccb {
namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

// Content of the last \boxed{...} with balanced braces.
std::optional<std::string> last_boxed(std::string_view text) {
  static constexpr std::string_view kMarker = "\\boxed{";
  std::size_t pos = text.rfind(kMarker);
  while (pos != std::string_view::npos) {
    const std::size_t open = pos + kMarker.size();
    int depth = 1;
    for (std::size_t i = open; i < text.size(); ++i) {
      if (text[i] == '{') ++depth;
      if (text[i] == '}' && --depth == 0) {
        return std::string(trim(text.substr(open, i - open)));
      }
    }
    // Unbalanced; try an earlier marker.
    if (pos == 0) break;
    pos = text.rfind(kMarker, pos - 1);
  }
  return std::nullopt;
}

// Offset just past the last final-answer cue, if any.
std::optional<std::size_t> after_last_cue(std::string_view text) {
  static constexpr std::array<std::string_view, 3> kCues = {
      "####", "answer:", "answer is"};
  const std::string lower = lowercase(text);
  std::optional<std::size_t> best;
  for (auto cue : kCues) {
    const auto p = lower.rfind(cue);
    if (p == std::string::npos) continue;
    const std::size_t end = p + cue.size();
    if (!best || end > *best) best = end;
  }
  return best;
}

std::optional<std::string> first_number(std::string_view tail) {
  static const std::regex kNumber(R"([-+]?\d[\d,]*(?:\.\d+)?(?:/\d+)?)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(tail.begin(), tail.end(), m, kNumber)) {
    return std::nullopt;
  }
  std::string num = m.str(0);
  while (!num.empty() && num.back() == ',') num.pop_back();
  return num;
}

std::optional<std::string> option_label(std::string_view tail) {
  static const std::regex kLabel(R"((?:^|[^A-Za-z0-9])\(?([A-E])\)?(?![A-Za-z0-9]))");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(tail.begin(), tail.end(), m, kLabel)) {
    return std::nullopt;
  }
  return m.str(1);
}

}  // namespace

std::optional<std::string> extract_final_answer(std::string_view raw_text,
                                                TaskType task_type) {
  const auto boxed = last_boxed(raw_text);
  if (task_type == TaskType::open_ended) {
    if (boxed) return boxed;
    const auto cue = after_last_cue(raw_text);
    if (!cue) return std::nullopt;
    return first_number(raw_text.substr(*cue));
  }
  if (boxed) {
    if (auto label = option_label(*boxed)) return label;
  }
  const auto cue = after_last_cue(raw_text);
  if (!cue) return std::nullopt;
  return option_label(raw_text.substr(*cue));
}

}  // namespace ccb
