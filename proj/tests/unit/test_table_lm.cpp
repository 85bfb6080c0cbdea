#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ccb/errors.hpp"
#include "ccb/table_lm.hpp"
#include "oracles.hpp"

namespace {

const double kLn2 = std::log(2.0);

ccb::TableLM bigram() {
  return ccb::TableLM("bigram",
                      ccb::TableLMFixture::load(std::string(CCB_FIXTURE_DIR) + "/bigram_v4.lm"));
}

ccb::ScoreResponse score(const ccb::TableLM& lm, std::string ctx, std::string cont) {
  ccb::ScoreRequest r;
  r.context = std::move(ctx);
  r.continuation = std::move(cont);
  return lm.score(r);
}

}  // namespace

TEST(TableLm, HandComputedBigram) {
  const auto lm = bigram();
  const auto r = score(lm, "", "a b c a");
  ASSERT_EQ(r.token_count, 4u);
  EXPECT_EQ(r.vocab_size, 4u);
  const double lp[] = {-kLn2, -kLn2, -2 * kLn2, 0.0};
  const double ent[] = {1.5 * kLn2, 1.75 * kLn2, 2 * kLn2, 0.0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(r.tokens[i].realized_logprob, lp[i], 1e-15) << i;
    EXPECT_NEAR(r.tokens[i].entropy, ent[i], 1e-15) << i;
  }
  EXPECT_NEAR(r.tokens[1].mean_vocab_logprob, -2.25 * kLn2, 1e-15);
  EXPECT_NEAR(r.tokens[2].mean_vocab_logprob, -2 * kLn2, 1e-15);
  EXPECT_TRUE(std::isinf(r.tokens[0].mean_vocab_logprob));
  EXPECT_EQ(r.tokens[0].token_text, "a");
  EXPECT_EQ(r.tokens[1].token_text, " b");
}

TEST(TableLm, UnknownPiecesScoreAsUnk) {
  const auto lm = bigram();
  const auto r = score(lm, "a", "zebra");
  ASSERT_EQ(r.token_count, 1u);
  EXPECT_NEAR(r.tokens[0].realized_logprob, std::log(0.125), 1e-15);
}

TEST(TableLm, Tokenization) {
  const auto lm = bigram();
  const auto toks = lm.tokenize("  ab, c\n");
  ASSERT_EQ(toks.size(), 3u);
  EXPECT_EQ(toks[0].text, "  ab");
  EXPECT_EQ(toks[1].text, ",");
  EXPECT_EQ(toks[2].text, " c\n");
  std::string joined;
  for (const auto& t : toks) joined += t.text;
  EXPECT_EQ(joined, "  ab, c\n");
  EXPECT_THROW(score(lm, "a", " \n"), ccb::EmptyContinuationError);
}

TEST(TableLm, UniformClosedForm) {
  ccb::TableLMFixture f;
  f.vocabulary = {"a", "b", "c", "d", "<unk>"};
  f.context_order = 2;
  const ccb::TableLM lm("u", f);
  const auto r = score(lm, "b a", "a c d d b");
  for (const auto& t : r.tokens) {
    EXPECT_EQ(t.realized_logprob, std::log(0.2));
    EXPECT_EQ(t.mean_vocab_logprob, std::log(0.2));
    EXPECT_NEAR(t.entropy, std::log(5.0), 1e-15);
  }
}

TEST(TableLm, ChainRuleAcrossSplits) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto table = oracle::random_table(rng, 4, 2);
    const ccb::TableLM lm("r", ccb::TableLMFixture::parse(oracle::fixture_text(table)));
    std::vector<std::string> syms;
    std::uniform_int_distribution<std::size_t> pick(0, 3);
    for (int i = 0; i < 9; ++i) syms.push_back(table.vocab[pick(rng)]);
    auto join = [](auto b, auto e) {
      std::string s;
      for (auto it = b; it != e; ++it) s += (s.empty() ? "" : " ") + *it;
      return s;
    };
    const auto whole = score(lm, "a", join(syms.begin(), syms.end()));
    for (std::size_t cut = 1; cut < syms.size(); ++cut) {
      const auto head = score(lm, "a", join(syms.begin(), syms.begin() + cut));
      const auto tail =
          score(lm, "a " + join(syms.begin(), syms.begin() + cut), join(syms.begin() + cut, syms.end()));
      ASSERT_EQ(head.token_count + tail.token_count, whole.token_count);
      for (std::size_t i = 0; i < whole.token_count; ++i) {
        const auto& part = i < cut ? head.tokens[i] : tail.tokens[i - cut];
        EXPECT_EQ(part.realized_logprob, whole.tokens[i].realized_logprob);
        EXPECT_EQ(part.entropy, whole.tokens[i].entropy);
      }
    }
  }
}

TEST(TableLm, MatchesEnumerator) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto table = oracle::random_table(rng, 1 + trial % 5, 1 + trial % 3);
    const ccb::TableLM lm("r", ccb::TableLMFixture::parse(oracle::fixture_text(table)));
    std::vector<std::string> ctx, cont;
    std::uniform_int_distribution<std::size_t> pick(0, table.vocab.size() - 1), len(0, 4);
    for (std::size_t i = len(rng); i > 0; --i) ctx.push_back(table.vocab[pick(rng)]);
    for (std::size_t i = len(rng) + 1; i > 0; --i) cont.push_back(table.vocab[pick(rng)]);
    std::string c, t;
    for (const auto& s : ctx) c += s + " ";
    for (const auto& s : cont) t += (t.empty() ? "" : " ") + s;
    const auto got = score(lm, c, t);
    const auto want = oracle::score_symbols(table, ctx, cont);
    ASSERT_EQ(got.token_count, want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      EXPECT_NEAR(got.tokens[i].realized_logprob, static_cast<double>(want[i].logp), 1e-12);
      EXPECT_NEAR(got.tokens[i].entropy, static_cast<double>(want[i].entropy), 1e-12);
      EXPECT_NEAR(got.tokens[i].mean_vocab_logprob, static_cast<double>(want[i].mean_log), 1e-12);
    }
  }
}

TEST(TableLm, SerializeRoundTrip) {
  const auto f = ccb::TableLMFixture::load(std::string(CCB_FIXTURE_DIR) + "/bigram_v4.lm");
  const auto again = ccb::TableLMFixture::parse(f.serialize());
  EXPECT_EQ(again.vocabulary, f.vocabulary);
  EXPECT_EQ(again.context_order, f.context_order);
  EXPECT_EQ(again.table, f.table);
  EXPECT_EQ(ccb::TableLM("x", f).info().model_fingerprint,
            ccb::TableLM("y", again).info().model_fingerprint);
}

TEST(TableLm, FixtureValidation) {
  const char* bad[] = {
      "vocab a b\norder 1\n",                          // no <unk>
      "vocab a <unk>\norder 1\na 0.5 0.6\n",           // sum
      "vocab a <unk>\norder 1\na 0.5\n",               // arity
      "vocab a <unk>\norder 1\na 1.5 -0.5\n",          // negative
      "vocab a <unk>\norder 1\nq 0.5 0.5\n",           // unknown context
      "vocab a <unk>\norder 1\na a 0.5 0.5\n",         // too long
      "vocab a <unk>\norder 2\na <s> 0.5 0.5\n",       // <s> inside
      "vocab a <unk>\norder 1\na x/2 1/2\n",           // not a number
      "vocab a a <unk>\norder 1\n",                    // duplicate
  };
  for (const char* text : bad) {
    EXPECT_THROW(ccb::TableLMFixture::parse(text), ccb::FormatError) << text;
  }
  EXPECT_NO_THROW(ccb::TableLMFixture::parse("vocab a <unk>\norder 1\na 1/3 2/3\n"));
}

TEST(TableLm, SamplingMarginalsWithinThreeSigma) {
  const auto lm = bigram();
  constexpr int kDraws = 4000;
  for (double temp : {1.0, 0.5}) {
    // <s> row 1/2 1/4 1/4 0 raised to 1/T and renormalized.
    std::vector<double> w = {std::pow(0.5, 1 / temp), std::pow(0.25, 1 / temp), std::pow(0.25, 1 / temp)};
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::map<std::string, int> counts;
    for (int s = 0; s < kDraws; ++s) {
      ccb::SampleParams p;
      p.temperature = temp;
      p.max_tokens = 1;
      p.seed = static_cast<std::uint64_t>(s);
      ++counts[lm.sample("", p)];
    }
    const char* names[] = {"a", "b", "c"};
    for (int j = 0; j < 3; ++j) {
      const double p = w[j] / total;
      const double sigma = std::sqrt(kDraws * p * (1 - p));
      EXPECT_LE(std::abs(counts[names[j]] - kDraws * p), 3 * sigma) << names[j] << " T=" << temp;
    }
    EXPECT_EQ(counts.size(), 3u);
  }
}

TEST(TableLm, SamplingIsSeedDeterministic) {
  const auto lm = bigram();
  ccb::SampleParams p;
  p.max_tokens = 30;
  p.seed = 17;
  EXPECT_EQ(lm.sample("b", p), lm.sample("b", p));
  p.temperature = 0;
  EXPECT_THROW(lm.sample("b", p), std::invalid_argument);
}

TEST(TableLm, Greedy) {
  const auto lm = bigram();
  ccb::SampleParams p;
  p.greedy = true;
  p.max_tokens = 3;
  EXPECT_EQ(lm.sample("", p), "a b a");
}

TEST(TableLm, TopPEntropy) {
  const std::vector<double> row = {0.5, 0.25, 0.25, 0.0};
  EXPECT_EQ(ccb::top_p_entropy(row, 0.5), 0.0);
  EXPECT_NEAR(ccb::top_p_entropy(row, 0.6), -(2.0 / 3 * std::log(2.0 / 3) + 1.0 / 3 * std::log(1.0 / 3)),
              1e-15);
  EXPECT_NEAR(ccb::top_p_entropy(row, 1.0), 1.5 * kLn2, 1e-15);

  const auto lm = bigram();
  ccb::ScoreRequest r;
  r.continuation = "a";
  r.entropy_top_p = 0.6;
  EXPECT_NEAR(lm.score(r).tokens[0].entropy, ccb::top_p_entropy(row, 0.6), 1e-15);
  r.entropy_top_p = 0.0;
  EXPECT_THROW(lm.score(r), std::invalid_argument);
}
