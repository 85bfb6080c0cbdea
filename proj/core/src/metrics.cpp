#include "ccb/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ccb/errors.hpp"
#include "ccb/parallel.hpp"

namespace ccb {
namespace {

Statistic statistic_for(MetricKind kind) {
  switch (kind) {
    case MetricKind::self_certainty: return Statistic::mean_vocab_logprob;
    case MetricKind::log_likelihood: return Statistic::realized_logprob;
    case MetricKind::entropy: return Statistic::entropy;
  }
  return Statistic::realized_logprob;
}

double sign_factor(MetricKind kind, SignConvention sign) {
  if (sign == SignConvention::paper_literal || kind == MetricKind::log_likelihood) return 1.0;
  return -1.0;
}

double pick(const TokenScore& t, MetricKind kind) {
  switch (kind) {
    case MetricKind::self_certainty: return t.mean_vocab_logprob;
    case MetricKind::log_likelihood: return t.realized_logprob;
    case MetricKind::entropy: return t.entropy;
  }
  return t.realized_logprob;
}

bool whitespace_only(std::string_view s) {
  return s.find_first_not_of(" \t\n\r\v\f") == std::string_view::npos;
}

// Sums are carried in extended precision and rounded once at the end.
struct CallSum {
  std::size_t tokens = 0;
  long double sum = 0.0L;
};

std::optional<CallSum> scored_sum(const ScoringBackend& evaluator, std::string_view context,
                                  std::string_view continuation, MetricKind kind,
                                  SignConvention sign, std::optional<double> top_p) {
  ScoreRequest req{std::string(context), std::string(continuation),
                   Needs{statistic_for(kind)}, std::nullopt};
  if (kind == MetricKind::entropy) req.entropy_top_p = top_p;
  ScoreResponse resp;
  try {
    resp = evaluator.score(req);
  } catch (const EmptyContinuationError&) {
    return std::nullopt;
  }
  const long double f = sign_factor(kind, sign);
  CallSum out;
  for (const auto& t : resp.tokens) out.sum += f * static_cast<long double>(pick(t, kind));
  out.tokens = resp.tokens.size();
  return out;
}

MetricResult finite_or_absent(MetricValue v) {
  if (std::isnan(v.value)) return std::nullopt;
  return v;
}

MetricResult masked_impl(const CandidateTrace& trace, std::string_view query, MetricKind kind,
                         const ScoringBackend& evaluator, ConditioningMode mode,
                         SignConvention sign, Aggregation aggregation,
                         std::optional<double> top_p, const MetricOptions& opts) {
  if (mode == ConditioningMode::full) {
    throw std::invalid_argument("compute_masked needs step_masked or query_masked");
  }
  if (trace.degenerate() || trace.steps.empty()) return std::nullopt;
  const std::string_view context = mode == ConditioningMode::step_masked ? query : std::string_view{};

  std::vector<std::optional<CallSum>> calls(trace.steps.size());
  parallel_for(trace.steps.size(), opts.max_in_flight, [&](std::size_t k) {
    const auto& text = trace.steps[k].text;
    if (whitespace_only(text)) return;
    calls[k] = scored_sum(evaluator, context, text, kind, sign, top_p);
  });

  MetricValue v;
  v.step_count = trace.steps.size();
  v.per_step.emplace();
  std::vector<CallSum> canon;
  for (std::size_t k = 0; k < calls.size(); ++k) {
    if (!calls[k] || calls[k]->tokens == 0) {
      v.skipped_steps.push_back(k);
      continue;
    }
    v.per_step->push_back(StepPartial{k, calls[k]->tokens, static_cast<double>(calls[k]->sum)});
    canon.push_back(*calls[k]);
    v.token_count += calls[k]->tokens;
  }
  if (v.token_count == 0) return std::nullopt;

  // Reduce in an order that depends only on the multiset of step partials,
  // so the value is bit-identical under any permutation of the steps.
  std::sort(canon.begin(), canon.end(), [](const CallSum& a, const CallSum& b) {
    if (a.sum != b.sum) return a.sum < b.sum;
    return a.tokens < b.tokens;
  });
  long double total = 0.0L;
  if (aggregation == Aggregation::token_weighted) {
    for (const auto& p : canon) total += p.sum;
    total /= static_cast<long double>(v.token_count);
  } else {
    for (const auto& p : canon) total += p.sum / static_cast<long double>(p.tokens);
    total /= static_cast<long double>(canon.size());
  }
  v.value = static_cast<double>(total);
  return finite_or_absent(std::move(v));
}

MetricResult full_impl(const CandidateTrace& trace, std::string_view query, MetricKind kind,
                       const ScoringBackend& evaluator, SignConvention sign,
                       std::optional<double> top_p) {
  if (trace.degenerate()) return std::nullopt;
  const auto call = scored_sum(evaluator, query, trace.raw_text, kind, sign, top_p);
  if (!call || call->tokens == 0) return std::nullopt;
  MetricValue v;
  v.value = static_cast<double>(call->sum / static_cast<long double>(call->tokens));
  v.token_count = call->tokens;
  v.step_count = trace.steps.size();
  return finite_or_absent(std::move(v));
}

MetricResult contrastive_impl(const CandidateTrace& trace, std::string_view query,
                              MetricKind kind, const ScoringBackend& evaluator, double alpha,
                              ConditioningMode masked_mode, SignConvention sign,
                              Aggregation aggregation, std::optional<double> top_p,
                              const MetricOptions& opts) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  auto full = full_impl(trace, query, kind, evaluator, sign, top_p);
  if (!full) return std::nullopt;
  auto masked = masked_impl(trace, query, kind, evaluator, masked_mode, sign, aggregation,
                            top_p, opts);
  if (!masked) return std::nullopt;
  MetricValue v = std::move(*masked);
  v.full_token_count = full->token_count;
  // alpha = 0 must reproduce the base metric even if the masked value is
  // infinite (0 * inf is NaN).
  v.value = alpha == 0.0 ? full->value : full->value - alpha * v.value;
  return finite_or_absent(std::move(v));
}

}  // namespace

std::string_view to_string(MetricKind k) noexcept {
  switch (k) {
    case MetricKind::self_certainty: return "self_certainty";
    case MetricKind::log_likelihood: return "log_likelihood";
    case MetricKind::entropy: return "entropy";
  }
  return "?";
}

std::string_view to_string(ConditioningMode m) noexcept {
  switch (m) {
    case ConditioningMode::full: return "full";
    case ConditioningMode::step_masked: return "step_masked";
    case ConditioningMode::query_masked: return "query_masked";
  }
  return "?";
}

std::string_view to_string(SignConvention s) noexcept {
  return s == SignConvention::paper_literal ? "paper_literal" : "certainty_aligned";
}

std::string_view to_string(Aggregation a) noexcept {
  return a == Aggregation::token_weighted ? "token_weighted" : "step_mean";
}

std::optional<MetricKind> parse_metric_kind(std::string_view s) noexcept {
  if (s == "self_certainty") return MetricKind::self_certainty;
  if (s == "log_likelihood") return MetricKind::log_likelihood;
  if (s == "entropy") return MetricKind::entropy;
  return std::nullopt;
}

std::optional<ConditioningMode> parse_conditioning_mode(std::string_view s) noexcept {
  if (s == "full") return ConditioningMode::full;
  if (s == "step_masked" || s == "masked") return ConditioningMode::step_masked;
  if (s == "query_masked" || s == "q-masked") return ConditioningMode::query_masked;
  return std::nullopt;
}

std::optional<SignConvention> parse_sign_convention(std::string_view s) noexcept {
  if (s == "paper_literal") return SignConvention::paper_literal;
  if (s == "certainty_aligned") return SignConvention::certainty_aligned;
  return std::nullopt;
}

std::optional<Aggregation> parse_aggregation(std::string_view s) noexcept {
  if (s == "token_weighted") return Aggregation::token_weighted;
  if (s == "step_mean") return Aggregation::step_mean;
  return std::nullopt;
}

void MetricSpec::validate() const {
  if (alpha) {
    if (!(*alpha >= 0.0 && *alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (mode == ConditioningMode::full) {
      throw ConfigError("a contrastive metric needs mode step_masked or query_masked");
    }
  }
  if (entropy_top_p && !(*entropy_top_p > 0.0 && *entropy_top_p <= 1.0)) {
    throw ConfigError("entropy_top_p must lie in (0, 1]");
  }
}

MetricResult compute_full(const CandidateTrace& trace, std::string_view query, MetricKind kind,
                          const ScoringBackend& evaluator, SignConvention sign,
                          std::optional<double> entropy_top_p) {
  return full_impl(trace, query, kind, evaluator, sign, entropy_top_p);
}

MetricResult compute_masked(const CandidateTrace& trace, std::string_view query,
                            MetricKind kind, const ScoringBackend& evaluator,
                            ConditioningMode mode, SignConvention sign, Aggregation aggregation,
                            std::optional<double> entropy_top_p, const MetricOptions& opts) {
  return masked_impl(trace, query, kind, evaluator, mode, sign, aggregation, entropy_top_p,
                     opts);
}

MetricResult compute_contrastive(const CandidateTrace& trace, std::string_view query,
                                 MetricKind kind, const ScoringBackend& evaluator, double alpha,
                                 ConditioningMode masked_mode, SignConvention sign,
                                 const MetricOptions& opts) {
  return contrastive_impl(trace, query, kind, evaluator, alpha, masked_mode, sign,
                          Aggregation::token_weighted, std::nullopt, opts);
}

MetricResult compute_metric(const CandidateTrace& trace, std::string_view query,
                            const MetricSpec& spec, const ScoringBackend& evaluator,
                            const MetricOptions& opts) {
  spec.validate();
  if (spec.alpha) {
    return contrastive_impl(trace, query, spec.kind, evaluator, *spec.alpha, spec.mode,
                            spec.sign, spec.aggregation, spec.entropy_top_p, opts);
  }
  if (spec.mode == ConditioningMode::full) {
    return full_impl(trace, query, spec.kind, evaluator, spec.sign, spec.entropy_top_p);
  }
  return masked_impl(trace, query, spec.kind, evaluator, spec.mode, spec.sign,
                     spec.aggregation, spec.entropy_top_p, opts);
}

std::vector<CandidateScore> score_candidates(const BenchmarkItem& item, std::string_view query,
                                             const MetricSpec& spec,
                                             const ScoringBackend& evaluator,
                                             const MetricOptions& opts) {
  std::vector<CandidateScore> out(item.candidates.size());
  for (std::size_t i = 0; i < item.candidates.size(); ++i) {
    try {
      out[i].value = compute_metric(item.candidates[i], query, spec, evaluator, opts);
      if (!out[i].value) {
        out[i].diagnostic = item.candidates[i].degenerate() ? "degenerate trace"
                                                             : "no scorable tokens";
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      out[i].value.reset();
      out[i].diagnostic = e.what();
    }
  }
  return out;
}

}  // namespace ccb
