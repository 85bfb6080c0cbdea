#include "ccb/disruptions.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "ccb/digest.hpp"
#include "ccb/errors.hpp"
#include "ccb/parallel.hpp"

namespace ccb {
namespace {

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  // Largest accepted value: 2^64 - (2^64 mod n) - 1.
  constexpr auto max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t last = max - (max % n + 1) % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x > last);
  return x % n;
}

std::string_view trim(std::string_view s, std::size_t& lead, std::size_t& trail) {
  const auto* ws = " \t\n\r\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) {
    lead = s.size();
    trail = 0;
    return {};
  }
  const auto e = s.find_last_not_of(ws);
  lead = b;
  trail = s.size() - e - 1;
  return s.substr(b, e - b + 1);
}

std::size_t token_count_of(const ScoringBackend& backend, std::string_view text) {
  if (text.empty()) return 0;
  try {
    return backend.score(ScoreRequest{"", std::string(text),
                                      Needs{Statistic::realized_logprob}, std::nullopt})
        .token_count;
  } catch (const EmptyContinuationError&) {
    return 0;
  }
}

std::string format_fraction(double f) {
  std::ostringstream out;
  out << f * 100.0 << '%';
  return out.str();
}

}  // namespace

std::string_view to_string(DisruptionKind k) noexcept {
  switch (k) {
    case DisruptionKind::none: return "none";
    case DisruptionKind::shuffle: return "shuffle";
    case DisruptionKind::truncate: return "truncate";
    case DisruptionKind::paraphrase: return "paraphrase";
    case DisruptionKind::attention_mask: return "attention_mask";
    case DisruptionKind::query_mask: return "query_mask";
    case DisruptionKind::evaluator_swap: return "evaluator_swap";
  }
  return "?";
}

std::string_view to_string(TruncationUnit u) noexcept {
  return u == TruncationUnit::characters ? "characters" : "tokens";
}

std::optional<DisruptionKind> parse_disruption_kind(std::string_view s) noexcept {
  for (auto k : {DisruptionKind::none, DisruptionKind::shuffle, DisruptionKind::truncate,
                 DisruptionKind::paraphrase, DisruptionKind::attention_mask,
                 DisruptionKind::query_mask, DisruptionKind::evaluator_swap}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

std::optional<TruncationUnit> parse_truncation_unit(std::string_view s) noexcept {
  if (s == "characters" || s == "chars") return TruncationUnit::characters;
  if (s == "tokens") return TruncationUnit::tokens;
  return std::nullopt;
}

DisruptionSpec DisruptionSpec::shuffle(std::uint64_t seed) {
  DisruptionSpec s;
  s.kind = DisruptionKind::shuffle;
  s.seed = seed;
  return s;
}

DisruptionSpec DisruptionSpec::truncate(std::size_t limit, TruncationUnit unit) {
  DisruptionSpec s;
  s.kind = DisruptionKind::truncate;
  s.limit = limit;
  s.unit = unit;
  return s;
}

DisruptionSpec DisruptionSpec::truncate_fraction(double fraction, TruncationUnit unit) {
  DisruptionSpec s;
  s.kind = DisruptionKind::truncate;
  s.limit_fraction = fraction;
  s.unit = unit;
  return s;
}

DisruptionSpec DisruptionSpec::paraphrase(RewriterConfig rewriter) {
  DisruptionSpec s;
  s.kind = DisruptionKind::paraphrase;
  s.rewriter = std::move(rewriter);
  return s;
}

DisruptionSpec DisruptionSpec::attention_mask() {
  DisruptionSpec s;
  s.kind = DisruptionKind::attention_mask;
  return s;
}

DisruptionSpec DisruptionSpec::query_mask() {
  DisruptionSpec s;
  s.kind = DisruptionKind::query_mask;
  return s;
}

DisruptionSpec DisruptionSpec::evaluator_swap(std::string evaluator) {
  DisruptionSpec s;
  s.kind = DisruptionKind::evaluator_swap;
  s.evaluator_override = std::move(evaluator);
  return s;
}

void DisruptionSpec::validate() const {
  const std::string name(to_string(kind));
  auto forbid = [&](bool present, const char* field) {
    if (present) throw ConfigError("disruption " + name + " does not take '" + field + "'");
  };
  const bool is_shuffle = kind == DisruptionKind::shuffle;
  const bool is_truncate = kind == DisruptionKind::truncate;
  const bool is_paraphrase = kind == DisruptionKind::paraphrase;
  const bool is_swap = kind == DisruptionKind::evaluator_swap;
  forbid(!is_shuffle && seed.has_value(), "seed");
  forbid(!is_truncate && (limit || limit_fraction || unit), "limit/unit");
  forbid(!is_paraphrase && rewriter.has_value(), "rewriter");
  forbid(!is_swap && evaluator_override.has_value(), "evaluator");
  if (is_shuffle && !seed) throw ConfigError("shuffle needs a seed");
  if (is_truncate) {
    if (!unit) throw ConfigError("truncate needs a unit");
    if (limit.has_value() == limit_fraction.has_value()) {
      throw ConfigError("truncate needs exactly one of limit or fraction");
    }
    if (limit && *limit == 0) throw ConfigError("truncate limit must be positive");
    if (limit_fraction && !(*limit_fraction > 0.0 && *limit_fraction <= 1.0)) {
      throw ConfigError("truncate fraction must lie in (0, 1]");
    }
  }
  if (is_paraphrase) {
    if (!rewriter) throw ConfigError("paraphrase needs a rewriter");
    rewriter->validate();
  }
  if (is_swap && (!evaluator_override || evaluator_override->empty())) {
    throw ConfigError("evaluator_swap needs an evaluator id");
  }
}

std::string DisruptionSpec::label() const {
  std::ostringstream out;
  out << to_string(kind);
  switch (kind) {
    case DisruptionKind::shuffle: out << "(seed=" << *seed << ")"; break;
    case DisruptionKind::truncate:
      out << "(" << (limit ? std::to_string(*limit) : format_fraction(*limit_fraction)) << " "
          << to_string(*unit) << ")";
      break;
    case DisruptionKind::evaluator_swap: out << "(" << *evaluator_override << ")"; break;
    case DisruptionKind::paraphrase:
      out << "(" << (rewriter->endpoint.empty() ? rewriter->mock : rewriter->model_name) << ")";
      break;
    default: break;
  }
  return out.str();
}

void validate_pipeline(const DisruptionPipeline& pipeline) {
  int swaps = 0;
  for (const auto& s : pipeline) {
    s.validate();
    if (s.kind == DisruptionKind::evaluator_swap && ++swaps > 1) {
      throw ConfigError("a pipeline may swap the evaluator only once");
    }
  }
}

std::vector<std::size_t> shuffle_permutation(std::size_t step_count, std::uint64_t seed,
                                             std::string_view item_id,
                                             std::size_t candidate_index) {
  std::vector<std::size_t> perm(step_count);
  for (std::size_t i = 0; i < step_count; ++i) perm[i] = i;
  if (step_count < 2) return perm;
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ fnv1a64(item_id));
  s = splitmix64(s ^ static_cast<std::uint64_t>(candidate_index));
  std::mt19937_64 rng(s);
  for (std::size_t i = step_count - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

CandidateTrace shuffle_steps(const CandidateTrace& trace, std::uint64_t seed,
                             std::string_view item_id, std::size_t candidate_index) {
  CandidateTrace out = trace;
  const auto perm = shuffle_permutation(trace.steps.size(), seed, item_id, candidate_index);
  for (std::size_t i = 0; i < perm.size(); ++i) out.steps[i] = trace.steps[perm[i]];
  out.raw_text = rebuild_from_steps(out.steps);
  out.provenance.push_back("shuffle:seed=" + std::to_string(seed));
  return out;
}

CandidateTrace truncate_trace(const CandidateTrace& trace, std::size_t limit,
                              TruncationUnit unit, TaskType task_type,
                              const ScoringBackend* tokenizer) {
  if (limit == 0) throw std::invalid_argument("truncate limit must be positive");
  const std::string& raw = trace.raw_text;
  std::size_t cut = raw.size();
  if (unit == TruncationUnit::characters) {
    if (limit < raw.size()) {
      cut = limit;
      // Do not split a UTF-8 sequence: back off while `cut` is a
      // continuation byte.
      while (cut > 0 && (static_cast<unsigned char>(raw[cut]) & 0xC0) == 0x80) --cut;
    }
  } else {
    if (!tokenizer) throw ConfigError("token-unit truncation needs an evaluator tokenizer");
    cut = token_prefix_bytes(*tokenizer, raw, limit);
  }
  const std::string tag = "truncate:" + std::to_string(limit) + ":" + std::string(to_string(unit));
  if (cut >= raw.size()) {
    CandidateTrace same = trace;
    same.provenance.push_back(tag);
    return same;
  }
  CandidateTrace out = make_trace(raw.substr(0, cut), task_type);
  out.provenance = trace.provenance;
  out.provenance.push_back(tag);
  return out;
}

ParaphraseResult paraphrase_steps(const CandidateTrace& trace, const Rewriter& rewriter,
                                  int max_retries, std::size_t max_in_flight) {
  struct StepOutcome {
    std::optional<std::string> text;
    std::size_t calls = 0;
    std::string diagnostic;
  };
  std::vector<StepOutcome> outcomes(trace.steps.size());
  parallel_for(trace.steps.size(), max_in_flight, [&](std::size_t k) {
    const std::string& original = trace.steps[k].text;
    std::size_t lead = 0, trail = 0;
    const std::string_view core = trim(original, lead, trail);
    if (core.empty()) return;
    std::string reason;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
      ++outcomes[k].calls;
      std::string reply;
      try {
        reply = rewriter.rewrite(core);
      } catch (const std::exception& e) {
        reason = e.what();
        continue;
      }
      std::size_t rl = 0, rt = 0;
      const std::string_view sentence = trim(reply, rl, rt);
      if (sentence.empty()) {
        reason = "empty reply";
        continue;
      }
      if (sentence.find('\n') != std::string_view::npos || segment_trace(sentence).size() > 1) {
        reason = "reply has more than one sentence";
        continue;
      }
      outcomes[k].text = original.substr(0, lead) + std::string(sentence) +
                         original.substr(original.size() - trail);
      return;
    }
    outcomes[k].diagnostic = "step " + std::to_string(k) + ": kept original after " +
                             std::to_string(outcomes[k].calls) + " attempt(s): " + reason;
  });

  ParaphraseResult result;
  result.trace = trace;
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    result.rewriter_calls += outcomes[k].calls;
    if (outcomes[k].text) result.trace.steps[k].text = std::move(*outcomes[k].text);
    if (!outcomes[k].diagnostic.empty()) result.diagnostics.push_back(outcomes[k].diagnostic);
  }
  result.trace.raw_text = rebuild_from_steps(result.trace.steps);
  result.trace.provenance.push_back("paraphrase:" + rewriter.name());
  return result;
}

Disrupted apply(const DisruptionSpec& spec, const CandidateTrace& trace,
                const MetricSpec& metric, const DisruptionContext& ctx) {
  spec.validate();
  Disrupted out{trace, metric, {}};
  switch (spec.kind) {
    case DisruptionKind::none: break;
    case DisruptionKind::shuffle:
      out.trace = shuffle_steps(trace, *spec.seed, ctx.item_id, ctx.candidate_index);
      out.trace.final_answer = extract_final_answer(out.trace.raw_text, ctx.task_type);
      break;
    case DisruptionKind::truncate: {
      std::size_t limit = 0;
      if (spec.limit) {
        limit = *spec.limit;
      } else {
        std::size_t length = trace.raw_text.size();
        if (*spec.unit == TruncationUnit::tokens) {
          if (!ctx.tokenizer) throw ConfigError("token-unit truncation needs an evaluator");
          length = token_count_of(*ctx.tokenizer, trace.raw_text);
        }
        limit = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(*spec.limit_fraction * static_cast<double>(length))));
      }
      out.trace = truncate_trace(trace, limit, *spec.unit, ctx.task_type, ctx.tokenizer);
      break;
    }
    case DisruptionKind::paraphrase: {
      if (!ctx.rewriter) throw ConfigError("paraphrase disruption without a rewriter");
      auto r = paraphrase_steps(trace, *ctx.rewriter, spec.rewriter->max_retries,
                                ctx.rewriter_in_flight);
      out.trace = std::move(r.trace);
      out.trace.final_answer = extract_final_answer(out.trace.raw_text, ctx.task_type);
      out.diagnostics = std::move(r.diagnostics);
      break;
    }
    case DisruptionKind::attention_mask: out.metric.mode = ConditioningMode::step_masked; break;
    case DisruptionKind::query_mask: out.metric.mode = ConditioningMode::query_masked; break;
    case DisruptionKind::evaluator_swap: out.metric.evaluator = *spec.evaluator_override; break;
  }
  return out;
}

Disrupted apply_pipeline(const DisruptionPipeline& pipeline, const CandidateTrace& trace,
                         const MetricSpec& metric, const DisruptionContext& ctx) {
  validate_pipeline(pipeline);
  Disrupted cur{trace, metric, {}};
  for (const auto& spec : pipeline) {
    Disrupted next = apply(spec, cur.trace, cur.metric, ctx);
    cur.trace = std::move(next.trace);
    cur.metric = std::move(next.metric);
    cur.diagnostics.insert(cur.diagnostics.end(), next.diagnostics.begin(), next.diagnostics.end());
  }
  return cur;
}

MetricSpec effective_metric(const DisruptionPipeline& pipeline, MetricSpec metric) {
  validate_pipeline(pipeline);
  for (const auto& spec : pipeline) {
    switch (spec.kind) {
      case DisruptionKind::attention_mask: metric.mode = ConditioningMode::step_masked; break;
      case DisruptionKind::query_mask: metric.mode = ConditioningMode::query_masked; break;
      case DisruptionKind::evaluator_swap: metric.evaluator = *spec.evaluator_override; break;
      default: break;
    }
  }
  return metric;
}

}  // namespace ccb
