// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ccb/experiment.hpp"
#include "ccb/metrics.hpp"
#include "ccb/report.hpp"
#include "ccb/selection.hpp"
#include "ccb/table_lm.hpp"
#include "ccb/trace_model.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kInvarianceTol = 1e-12;
constexpr double kAffinityTol = 1e-12;
constexpr double kOracleTol = 1e-9;
constexpr double kInvarianceBudget = 10.0;
constexpr double kOracleBudget = 30.0;
constexpr double kGoldenBudget = 60.0;
constexpr int kInvarianceInstances = 200;
constexpr int kOracleInstances = 500;
constexpr int kAffineVectors = 1000;
constexpr int kRandomStrings = 1000;

struct Outcome {
  bool ok = true;
  std::string detail;
};

class Check {
 public:
  void fail(const std::string& why) {
    if (out_.ok) out_.detail = why;
    out_.ok = false;
  }
  void expect(bool cond, const std::string& why) {
    if (!cond) fail(why);
  }
  void note(const std::string& s) {
    if (out_.ok) out_.detail = s;
  }
  bool ok() const { return out_.ok; }
  const Outcome& outcome() const { return out_; }

 private:
  Outcome out_;
};

using Steps = std::vector<std::vector<std::string>>;

ccb::CandidateTrace trace_of(const Steps& steps) {
  std::vector<ccb::ReasoningStep> rs;
  for (const auto& text : oracle::render_steps(steps)) rs.push_back({text, {}, 0});
  ccb::CandidateTrace t;
  t.raw_text = ccb::rebuild_from_steps(rs);
  t.steps = std::move(rs);
  return t;
}

std::string join(const std::vector<std::string>& syms) {
  std::string s;
  for (const auto& x : syms) s += (s.empty() ? "" : " ") + x;
  return s;
}

struct Instance {
  oracle::Table table;
  std::vector<std::string> query;
  Steps steps;
};

Instance random_instance(std::mt19937_64& rng, std::size_t max_v, std::size_t max_k) {
  Instance in;
  std::uniform_int_distribution<std::size_t> v(1, max_v - 1), order(1, 3), k(1, max_k), len(1, 4);
  in.table = oracle::random_table(rng, v(rng), order(rng));
  std::uniform_int_distribution<std::size_t> sym(0, in.table.vocab.size() - 1);
  for (std::size_t i = len(rng) - 1; i > 0; --i) in.query.push_back(in.table.vocab[sym(rng)]);
  for (std::size_t s = k(rng); s > 0; --s) {
    std::vector<std::string> step;
    for (std::size_t i = len(rng); i > 0; --i) step.push_back(in.table.vocab[sym(rng)]);
    in.steps.push_back(step);
  }
  return in;
}

ccb::TableLM lm_of(const oracle::Table& t) {
  return ccb::TableLM("r", ccb::TableLMFixture::parse(oracle::fixture_text(t)));
}

const ccb::MetricKind kKinds[] = {ccb::MetricKind::self_certainty, ccb::MetricKind::log_likelihood,
                                  ccb::MetricKind::entropy};
const ccb::ConditioningMode kMasked[] = {ccb::ConditioningMode::step_masked,
                                         ccb::ConditioningMode::query_masked};

double value(const ccb::CandidateTrace& t, const std::string& q, ccb::MetricKind kind,
             const ccb::TableLM& lm, ccb::ConditioningMode mode,
             ccb::SignConvention sign = ccb::SignConvention::paper_literal) {
  const auto r = mode == ccb::ConditioningMode::full ? ccb::compute_full(t, q, kind, lm, sign)
                                                     : ccb::compute_masked(t, q, kind, lm, mode, sign);
  return r ? r->value : std::nan("");
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- criteria ----------------------------------------------------------------

Outcome masked_permutation_invariance() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2718);
  int full_changed = 0;
  double worst = 0;
  for (int trial = 0; trial < kInvarianceInstances; ++trial) {
    const auto in = random_instance(rng, 6, 6);
    const auto lm = lm_of(in.table);
    auto permuted = in.steps;
    std::shuffle(permuted.begin(), permuted.end(), rng);
    const auto a = trace_of(in.steps), b = trace_of(permuted);
    const auto q = join(in.query);
    for (auto kind : kKinds) {
      for (auto mode : kMasked) {
        const double d = std::abs(value(a, q, kind, lm, mode) - value(b, q, kind, lm, mode));
        worst = std::max(worst, d);
        c.expect(d <= kInvarianceTol, "masked value moved by " + fmt("%.3g", d));
      }
      if (std::abs(value(a, q, kind, lm, ccb::ConditioningMode::full) -
                   value(b, q, kind, lm, ccb::ConditioningMode::full)) > kOracleTol) {
        ++full_changed;
      }
    }
  }
  // Cross-predictive fixture: "b" follows "a" almost surely.
  const ccb::TableLM cross("x", ccb::TableLMFixture::parse(
                                    "vocab a b c <unk>\norder 1\na 0.01 0.97 0.01 0.01\n"
                                    "b 0.97 0.01 0.01 0.01\n0.25 0.25 0.25 0.25\n"));
  const auto ab = trace_of({{"a"}, {"b"}}), ba = trace_of({{"b"}, {"a"}});
  const bool cross_changed = value(ab, "c", ccb::MetricKind::log_likelihood, cross, ccb::ConditioningMode::full) !=
                             value(ba, "c", ccb::MetricKind::log_likelihood, cross, ccb::ConditioningMode::full);
  c.expect(full_changed > 0 || cross_changed, "full value never changed under permutation");
  const double secs = seconds_since(t0);
  c.expect(secs < kInvarianceBudget, "took " + fmt("%.1f s", secs));
  c.note(std::to_string(kInvarianceInstances) + " instances, max diff " + fmt("%.2g", worst) +
         ", full changed on " + std::to_string(full_changed) + ", " + fmt("%.2f s", secs));
  return c.outcome();
}

Outcome single_step_collapse() {
  Check c;
  std::mt19937_64 rng(11);
  int n = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_instance(rng, 6, 1);
    const auto lm = lm_of(in.table);
    const auto t = trace_of(in.steps);
    const auto q = join(in.query);
    for (auto kind : kKinds) {
      const double full = value(t, q, kind, lm, ccb::ConditioningMode::full);
      const double masked = value(t, q, kind, lm, ccb::ConditioningMode::step_masked);
      c.expect(full == masked, "K=1 step_masked " + fmt("%.17g", masked) + " != full " + fmt("%.17g", full));
      ++n;
    }
  }
  c.note(std::to_string(n) + " comparisons, exact");
  return c.outcome();
}

Outcome closed_forms() {
  Check c;
  for (std::size_t v : {2u, 3u, 6u, 10u}) {
    ccb::TableLMFixture u;
    for (std::size_t i = 0; i + 1 < v; ++i) u.vocabulary.push_back(std::string(1, static_cast<char>('a' + i)));
    u.vocabulary.push_back("<unk>");
    u.context_order = 1;
    const ccb::TableLM uniform("u", u);
    const double lv = std::log(static_cast<double>(v));
    const auto t = trace_of({{"a", "a"}, {"a"}, {"a", "a", "a"}});
    for (auto mode : {ccb::ConditioningMode::full, ccb::ConditioningMode::step_masked,
                      ccb::ConditioningMode::query_masked}) {
      const auto tag = "V=" + std::to_string(v) + " " + std::string(ccb::to_string(mode));
      c.expect(value(t, "a", ccb::MetricKind::log_likelihood, uniform, mode) == -lv, tag + " LL");
      c.expect(value(t, "a", ccb::MetricKind::entropy, uniform, mode) == lv, tag + " ENT");
      c.expect(value(t, "a", ccb::MetricKind::self_certainty, uniform, mode) == -lv, tag + " SC");
    }
  }
  ccb::TableLMFixture p;
  p.vocabulary = {"a", "b", "<unk>"};
  p.context_order = 0;
  p.table[{}] = {1.0, 0.0, 0.0};
  const ccb::TableLM point("p", p);
  const auto aa = trace_of({{"a", "a"}, {"a"}});
  for (auto mode : {ccb::ConditioningMode::full, ccb::ConditioningMode::step_masked,
                    ccb::ConditioningMode::query_masked}) {
    c.expect(value(aa, "", ccb::MetricKind::log_likelihood, point, mode) == 0.0, "point-mass LL");
    c.expect(value(aa, "", ccb::MetricKind::entropy, point, mode) == 0.0, "point-mass ENT");
  }
  c.note("uniform V in {2,3,6,10} and point mass, exact");
  return c.outcome();
}

Outcome contrastive_identities() {
  Check c;
  std::mt19937_64 rng(77);
  double worst = 0;
  int single = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = random_instance(rng, 6, trial % 4 == 0 ? 1 : 6);
    const auto lm = lm_of(in.table);
    const auto t = trace_of(in.steps);
    const auto q = join(in.query);
    for (auto kind : kKinds) {
      const double full = value(t, q, kind, lm, ccb::ConditioningMode::full);
      for (auto mode : kMasked) {
        const double masked = value(t, q, kind, lm, mode);
        const double c0 = ccb::compute_contrastive(t, q, kind, lm, 0.0, mode)->value;
        const double c5 = ccb::compute_contrastive(t, q, kind, lm, 0.5, mode)->value;
        const double c1 = ccb::compute_contrastive(t, q, kind, lm, 1.0, mode)->value;
        c.expect(c0 == full, "alpha=0 differs from the base metric");
        for (auto [got, want] : {std::pair{c5, full - 0.5 * masked}, std::pair{c1, full - masked}}) {
          worst = std::max(worst, std::abs(got - want));
          c.expect(std::abs(got - want) <= kAffinityTol, "affinity off by " + fmt("%.3g", got - want));
        }
      }
      if (in.steps.size() == 1) {
        ++single;
        for (double a : {0.0, 0.5, 1.0}) {
          const double got =
              ccb::compute_contrastive(t, q, kind, lm, a, ccb::ConditioningMode::step_masked)->value;
          const double want = (1 - a) * full;
          worst = std::max(worst, std::abs(got - want));
          c.expect(std::abs(got - want) <= kAffinityTol, "single step (1-a)R off by " + fmt("%.3g", got - want));
        }
      }
    }
  }
  c.expect(single > 0, "no single-step instances drawn");
  c.note("200 instances (" + std::to_string(single) + " single-step checks), max diff " + fmt("%.2g", worst));
  return c.outcome();
}

Outcome oracle_equivalence() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(314159);
  double worst = 0;
  const std::pair<ccb::ConditioningMode, oracle::Mode> modes[] = {
      {ccb::ConditioningMode::full, oracle::Mode::full},
      {ccb::ConditioningMode::step_masked, oracle::Mode::step_masked},
      {ccb::ConditioningMode::query_masked, oracle::Mode::query_masked}};
  const std::pair<ccb::MetricKind, oracle::Kind> kinds[] = {
      {ccb::MetricKind::self_certainty, oracle::Kind::self_certainty},
      {ccb::MetricKind::log_likelihood, oracle::Kind::log_likelihood},
      {ccb::MetricKind::entropy, oracle::Kind::entropy}};
  for (int trial = 0; trial < kOracleInstances; ++trial) {
    const auto in = random_instance(rng, 6, 6);
    const auto lm = lm_of(in.table);
    const auto t = trace_of(in.steps);
    const auto q = join(in.query);
    for (auto [kind, ok] : kinds) {
      for (auto [mode, om] : modes) {
        const double got = value(t, q, kind, lm, mode);
        const auto want = oracle::metric(in.table, in.query, in.steps, ok, om);
        if (!want) {
          c.fail("oracle produced no value");
          continue;
        }
        const double d = std::abs(got - static_cast<double>(*want));
        worst = std::max(worst, d);
        c.expect(d <= kOracleTol, "differs from enumerator by " + fmt("%.3g", d));
      }
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < kOracleBudget, "took " + fmt("%.1f s", secs));
  c.note(std::to_string(kOracleInstances) + " instances x 9 cells, max diff " + fmt("%.2g", worst) + ", " +
         fmt("%.2f s", secs));
  return c.outcome();
}

Outcome chain_rule() {
  Check c;
  std::mt19937_64 rng(99);
  int splits = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto table = oracle::random_table(rng, 2 + trial % 4, 1 + trial % 3);
    const auto lm = lm_of(table);
    std::uniform_int_distribution<std::size_t> pick(0, table.vocab.size() - 1);
    std::vector<std::string> syms;
    for (int i = 0; i < 10; ++i) syms.push_back(table.vocab[pick(rng)]);
    auto score = [&](std::string ctx, std::string cont) {
      ccb::ScoreRequest r;
      r.context = std::move(ctx);
      r.continuation = std::move(cont);
      return lm.score(r);
    };
    const std::string q = table.vocab[pick(rng)];
    const auto whole = score(q, join(syms));
    double whole_sum = 0;
    for (const auto& tok : whole.tokens) whole_sum += tok.realized_logprob;
    for (std::size_t cut = 1; cut < syms.size(); ++cut) {
      const std::vector<std::string> a(syms.begin(), syms.begin() + static_cast<long>(cut));
      const std::vector<std::string> b(syms.begin() + static_cast<long>(cut), syms.end());
      const auto head = score(q, join(a));
      const auto tail = score(q + " " + join(a), join(b));
      ++splits;
      if (head.token_count + tail.token_count != whole.token_count) {
        c.fail("token counts do not compose");
        continue;
      }
      double sum = 0;
      for (const auto& tok : head.tokens) sum += tok.realized_logprob;
      for (const auto& tok : tail.tokens) sum += tok.realized_logprob;
      c.expect(sum == whole_sum, "summed logprob " + fmt("%.17g", sum) + " != " + fmt("%.17g", whole_sum));
    }
  }
  c.note(std::to_string(splits) + " splits, exact");
  return c.outcome();
}

Outcome golden_run() {
  Check c;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out = fs::temp_directory_path() / ("ccb-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(out);
  ::setenv("CCB_OUT", out.c_str(), 1);
  try {
    const auto cfg = ccb::load_experiment_config(fs::path(CCB_SOURCE_DIR) / "data/synthetic/golden.json");
    const auto summary = ccb::run_experiment(cfg, {});
    const auto got = read_file(out / "report.csv");
    const auto want = read_file(fs::path(CCB_GOLDEN_DIR) / "synthetic_report.csv");
    c.expect(!want.empty(), "golden CSV missing");
    c.expect(got == want, "report.csv differs from the golden CSV");
    c.expect(summary.failed_cells.empty(), "failed cells");
    std::map<std::string, std::size_t> none;
    for (const auto& r : summary.rows) {
      if (r.disruption == "none") none[r.metric + "/" + r.mode] = r.n_correct;
    }
    int masked = 0;
    for (const auto& r : summary.rows) {
      if (r.disruption != "shuffle" || r.mode == "full") continue;
      ++masked;
      c.expect(none.count(r.metric + "/" + r.mode) && none[r.metric + "/" + r.mode] == r.n_correct,
               "shuffle row differs from none for " + r.metric + "/" + r.mode);
    }
    c.expect(masked == 6, "expected 6 masked shuffle rows");
    c.note(std::to_string(summary.rows.size()) + " rows byte-identical, " + std::to_string(masked) +
           " masked shuffle rows equal none");
  } catch (const std::exception& e) {
    c.fail(std::string("run failed: ") + e.what());
  }
  ::unsetenv("CCB_OUT");
  fs::remove_all(out);
  const double secs = seconds_since(t0);
  c.expect(secs < kGoldenBudget, "took " + fmt("%.1f s", secs));
  if (c.ok()) c.note(c.outcome().detail + ", " + fmt("%.2f s", secs));
  return c.outcome();
}

// Scores each continuation by minus its count of 'z'.
class ZBackend final : public ccb::ScoringBackend {
 public:
  const std::string& id() const override { return id_; }
  ccb::BackendInfo info() const override { return {"z", 2, 0}; }
  ccb::ScoreResponse score(const ccb::ScoreRequest& r) const override {
    r.validate();
    const auto z = std::count(r.continuation.begin(), r.continuation.end(), 'z');
    return {{{r.continuation, -static_cast<double>(z), 0.0, -1.0}}, 1, 2, "z"};
  }

 private:
  std::string id_ = "z";
};

Outcome selection_properties() {
  Check c;
  using Scores = std::vector<std::optional<double>>;
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> val(-6, 6), len(1, 12), shift(-100, 100);
  std::bernoulli_distribution absent(0.15);
  const double scales[] = {0.5, 1.0, 2.0, 3.0, 10.0, 0.125};
  for (int trial = 0; trial < kAffineVectors; ++trial) {
    Scores s(static_cast<std::size_t>(len(rng)));
    for (auto& x : s) {
      if (!absent(rng)) x = val(rng);
    }
    if (std::none_of(s.begin(), s.end(), [](const auto& x) { return x.has_value(); })) s[0] = 0.0;
    const double a = scales[trial % 6], b = shift(rng);
    Scores t = s;
    for (auto& x : t) {
      if (x) x = a * *x + b;
    }
    std::size_t best = s.size();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] && (best == s.size() || *s[i] > *s[best])) best = i;
    }
    c.expect(ccb::select_best(s) == best, "argmax is not the first maximum");
    c.expect(ccb::select_best(t) == best, "argmax moved under an affine map");
  }
  c.expect(ccb::select_best(Scores{1.0, 2.0, 2.0, 2.0}) == 1, "tie break");
  c.expect(ccb::select_best(Scores{3.0, 3.0}) == 0, "tie break");
  c.expect(ccb::select_best(Scores{std::nullopt, 0.0, -0.0}) == 1, "tie break with signed zero");

  auto item = [](std::string id, std::string gold, std::vector<std::string> texts) {
    ccb::BenchmarkItem it;
    it.item_id = std::move(id);
    it.question = "q";
    it.gold_answer = std::move(gold);
    for (auto& t : texts) it.candidates.push_back(ccb::make_trace(std::move(t), ccb::TaskType::open_ended));
    return it;
  };
  const std::vector<ccb::BenchmarkItem> items = {
      item("i1", "4", {"The answer is 4.", "zz The answer is 5."}),
      item("i2", "3", {"z The answer is 3.", "The answer is 2."}),
      item("i3", "0.5", {"The answer is 1/2.", "The answer is 0.5."}),
      item("i4", "7", {"zz", "z"}),
  };
  ccb::BackendRegistry reg;
  reg.add(std::make_shared<ZBackend>());
  ccb::EvaluationContext ctx;
  ctx.registry = &reg;
  ccb::MetricSpec m;
  m.kind = ccb::MetricKind::log_likelihood;
  m.evaluator = "z";
  const auto rep = ccb::evaluate(items, m, {}, ctx);
  c.expect(rep.n_items == 4 && rep.n_correct == 2 && rep.accuracy == 0.5, "four-item accuracy is not 2/4");
  c.expect(ccb::pass_at_n(items) == 0.75, "pass@N is not 3/4");
  c.note(std::to_string(kAffineVectors) + " affine vectors, ties, 2/4 accuracy exact");
  return c.outcome();
}

Outcome segmentation_partition() {
  Check c;
  auto partition_ok = [](std::string_view raw, const std::vector<ccb::ReasoningStep>& steps) {
    std::string joined;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const auto& s = steps[k];
      if (s.index != k || s.span.begin != pos || raw.substr(s.span.begin, s.span.size()) != s.text) return false;
      pos = s.span.end;
      joined += s.text;
    }
    return joined == raw && (raw.empty() || !steps.empty());
  };
  static const std::vector<std::string> alphabet = {
      "a", "b", "Z", "1", "7", " ", " ", "\n", "\t", ".", ".", "!", "?", ")", "\"", "'",
      "e.g", "etc", "Dr", "12", "\xC3\xA9", "\xE2\x82\xAC", "\xF0\x9F\x98\x80", "\r", ",", "{"};
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 60);
  int exceptions = 0;
  for (int trial = 0; trial < kRandomStrings; ++trial) {
    std::string s;
    for (std::size_t i = len(rng); i > 0; --i) s += alphabet[pick(rng)];
    if (!partition_ok(s, ccb::segment_trace(s))) ++exceptions;
  }
  const auto prose = read_file(fs::path(CCB_FIXTURE_DIR) / "prose_corpus.txt");
  c.expect(!prose.empty(), "prose corpus missing");
  const auto steps = ccb::segment_trace(prose);
  if (!partition_ok(prose, steps)) ++exceptions;
  c.expect(exceptions == 0, std::to_string(exceptions) + " exceptions");
  c.note(std::to_string(kRandomStrings) + " random strings and prose corpus (" + std::to_string(steps.size()) +
         " steps), 0 exceptions");
  return c.outcome();
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"masked_permutation_invariance", masked_permutation_invariance},
      {"single_step_collapse", single_step_collapse},
      {"uniform_point_mass_closed_forms", closed_forms},
      {"contrastive_identities", contrastive_identities},
      {"oracle_equivalence", oracle_equivalence},
      {"backend_chain_rule", chain_rule},
      {"end_to_end_golden_run", golden_run},
      {"selection_properties", selection_properties},
      {"segmentation_partition", segmentation_partition},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.ok;
    std::printf("%s %s: %s\n", o.ok ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
