#include "ccb/selection.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>

#include <boost/multiprecision/cpp_int.hpp>

#include "ccb/errors.hpp"
#include "ccb/parallel.hpp"

namespace ccb {
namespace {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) {
    s.replace(p, from.size(), to);
  }
}

std::optional<Rational> parse_decimal(std::string_view s) {
  static const std::regex kDecimal(R"(([-+]?)(\d*)(?:\.(\d*))?)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(s.begin(), s.end(), m, kDecimal)) return std::nullopt;
  const std::string whole = m.str(2);
  const std::string frac = m.str(3);
  if (whole.empty() && frac.empty()) return std::nullopt;
  BigInt num(whole.empty() ? "0" : whole);
  BigInt den = 1;
  for (char c : frac) {
    num = num * 10 + (c - '0');
    den *= 10;
  }
  Rational r(num, den);
  return m.str(1) == "-" ? Rational(-r) : r;
}

std::optional<Rational> parse_rational(std::string_view text) {
  std::string s(text);
  bool negate = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+') && s.find("\\frac") == 1) {
    negate = s[0] == '-';
    s.erase(0, 1);
  }
  static const std::regex kFrac(R"(\\d?frac\{([^{}]+)\}\{([^{}]+)\})");
  std::smatch fm;
  std::optional<Rational> value;
  if (std::regex_match(s, fm, kFrac)) {
    auto a = parse_decimal(trim(fm.str(1)));
    auto b = parse_decimal(trim(fm.str(2)));
    if (!a || !b || *b == 0) return std::nullopt;
    value = *a / *b;
  } else if (const auto slash = s.find('/'); slash != std::string::npos) {
    auto a = parse_decimal(trim(std::string_view(s).substr(0, slash)));
    auto b = parse_decimal(trim(std::string_view(s).substr(slash + 1)));
    if (!a || !b || *b == 0) return std::nullopt;
    value = *a / *b;
  } else {
    value = parse_decimal(s);
  }
  if (value && negate) *value = -*value;
  return value;
}

}  // namespace

std::size_t select_best(std::span<const std::optional<double>> scores) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i] || std::isnan(*scores[i])) continue;
    if (!best || *scores[i] > *scores[*best]) best = i;
  }
  if (!best) throw NoScorableCandidate();
  return *best;
}

std::string normalize_answer(std::string_view answer) {
  std::string s(trim(answer));
  replace_all(s, "\xE2\x88\x92", "-");  // U+2212 minus sign
  replace_all(s, ",", "");
  replace_all(s, "\\!", "");
  replace_all(s, "\\$", "");
  replace_all(s, "\\%", "");
  bool changed = true;
  while (changed && !s.empty()) {
    changed = false;
    const std::string before = s;
    s = std::string(trim(s));
    if (s.size() >= 2 && s.front() == '{' && s.back() == '}') s = s.substr(1, s.size() - 2);
    while (!s.empty() && (s.front() == '$')) s.erase(0, 1);
    while (!s.empty() && (s.back() == '$' || s.back() == '%' || s.back() == '.')) s.pop_back();
    if (!s.empty() && s.front() == '+') s.erase(0, 1);
    changed = s != before;
  }
  return s;
}

std::optional<std::string> rational_form(std::string_view answer) {
  const auto r = parse_rational(normalize_answer(answer));
  if (!r) return std::nullopt;
  return boost::multiprecision::numerator(*r).str() + "/" +
         boost::multiprecision::denominator(*r).str();
}

bool grade(const std::optional<std::string>& predicted, std::string_view gold,
           TaskType task_type) {
  if (!predicted) return false;
  if (task_type == TaskType::multiple_choice) {
    auto label = [](std::string_view s) {
      std::string t = normalize_answer(s);
      if (t.size() >= 2 && t.front() == '(' && t.back() == ')') t = t.substr(1, t.size() - 2);
      return lowercase(std::string(trim(t)));
    };
    const auto p = label(*predicted);
    return !p.empty() && p == label(gold);
  }
  const std::string p = normalize_answer(*predicted);
  const std::string g = normalize_answer(gold);
  const auto pr = parse_rational(p);
  const auto gr = parse_rational(g);
  if (pr && gr) return *pr == *gr;
  return !p.empty() && lowercase(p) == lowercase(g);
}

std::string pipeline_label(const DisruptionPipeline& pipeline) {
  if (pipeline.empty()) return "none";
  std::string out;
  for (const auto& s : pipeline) {
    if (!out.empty()) out += "+";
    out += s.label();
  }
  return out;
}

AccuracyReport evaluate(const std::vector<BenchmarkItem>& items, const MetricSpec& metric,
                        const DisruptionPipeline& pipeline, const EvaluationContext& ctx) {
  if (!ctx.registry) throw ConfigError("evaluate needs a backend registry");
  metric.validate();
  const MetricSpec effective = effective_metric(pipeline, metric);
  effective.validate();
  const ScoringBackend& evaluator = ctx.registry->get(effective.evaluator);
  for (const auto& spec : pipeline) {
    if (spec.kind == DisruptionKind::paraphrase && !ctx.rewriter) {
      throw ConfigError("paraphrase disruption without a rewriter");
    }
  }

  AccuracyReport report;
  report.metric = metric;
  report.disruption = pipeline_label(pipeline);
  report.results.resize(items.size());
  const MetricOptions opts{ctx.requests_in_flight};

  parallel_for(items.size(), ctx.items_in_flight, [&](std::size_t i) {
    const BenchmarkItem& item = items[i];
    SelectionResult& r = report.results[i];
    r.item_id = item.item_id;
    const std::string query = ctx.query ? ctx.query(item) : item.question;
    std::vector<std::optional<std::string>> disrupted_answers(item.candidates.size());
    r.scores.resize(item.candidates.size());
    for (std::size_t c = 0; c < item.candidates.size(); ++c) {
      DisruptionContext dctx{item.item_id, c, item.task_type, &evaluator, ctx.rewriter,
                             ctx.requests_in_flight};
      try {
        Disrupted d = apply_pipeline(pipeline, item.candidates[c], metric, dctx);
        disrupted_answers[c] = d.trace.final_answer;
        for (auto& note : d.diagnostics) {
          r.diagnostics.push_back("candidate " + std::to_string(c) + ": " + note);
        }
        const auto v = compute_metric(d.trace, query, d.metric, evaluator, opts);
        if (v) {
          r.scores[c] = v->value;
        } else {
          r.diagnostics.push_back("candidate " + std::to_string(c) + ": absent");
        }
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        r.diagnostics.push_back("candidate " + std::to_string(c) + ": " + e.what());
      }
    }
    try {
      const std::size_t best = select_best(r.scores);
      r.chosen_index = best;
      r.chosen_score = *r.scores[best];
      r.graded_answer = ctx.strict_grading ? disrupted_answers[best]
                                           : item.candidates[best].final_answer;
      r.correct = grade(r.graded_answer, item.gold_answer, item.task_type);
    } catch (const NoScorableCandidate& e) {
      r.error = e.what();
    }
  });

  std::sort(report.results.begin(), report.results.end(),
            [](const SelectionResult& a, const SelectionResult& b) { return a.item_id < b.item_id; });
  report.n_items = report.results.size();
  for (const auto& r : report.results) {
    if (r.correct) ++report.n_correct;
    if (!r.error.empty()) ++report.failures;
  }
  report.accuracy = report.n_items == 0 ? 0.0
                                        : static_cast<double>(report.n_correct) /
                                              static_cast<double>(report.n_items);
  return report;
}

double pass_at_n(const std::vector<BenchmarkItem>& items) {
  if (items.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& item : items) {
    for (const auto& c : item.candidates) {
      if (grade(c.final_answer, item.gold_answer, item.task_type)) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

}  // namespace ccb
