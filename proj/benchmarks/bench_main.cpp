#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "ccb/disruptions.hpp"
#include "ccb/metrics.hpp"
#include "ccb/score_cache.hpp"
#include "ccb/selection.hpp"
#include "ccb/table_lm.hpp"
#include "ccb/trace_model.hpp"

namespace {

const char* const kWords[] = {"we", "add", "the", "numbers", "then", "check", "result", "again", "so", "count"};

std::string prose(std::size_t sentences, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(0, 9), len(3, 12), end(0, 9);
  std::string s;
  for (std::size_t i = 0; i < sentences; ++i) {
    for (int w = len(rng); w > 0; --w) s += std::string(kWords[word(rng)]) + (w > 1 ? " " : "");
    const int e = end(rng);
    s += e == 0 ? "?\n" : e == 1 ? "! " : ". ";
  }
  return s + "The answer is 4.";
}

ccb::TableLM table_lm(std::size_t v) {
  std::ostringstream text;
  text.precision(17);
  text << "vocab";
  for (std::size_t i = 0; i < v; ++i) text << " w" << i;
  text << " <unk>\norder 1\n";
  std::mt19937_64 rng(v);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (std::size_t i = 0; i <= v; ++i) {
    std::vector<double> row(v + 1);
    double total = 0;
    for (auto& p : row) total += (p = u(rng));
    text << (i < v ? "w" + std::to_string(i) : std::string("<unk>"));
    for (double p : row) text << ' ' << p / total;
    text << '\n';
  }
  return ccb::TableLM("bench", ccb::TableLMFixture::parse(text.str()));
}

std::string symbols(std::size_t n, std::size_t v) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string((i * 7 + 3) % v);
  return s;
}

ccb::CandidateTrace steps_trace(std::size_t k, std::size_t len, std::size_t v) {
  std::string raw;
  for (std::size_t i = 0; i < k; ++i) raw += symbols(len, v) + "\n";
  return ccb::make_trace(raw, ccb::TaskType::open_ended);
}

}  // namespace

static void BM_SegmentTrace(benchmark::State& state) {
  const auto text = prose(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(ccb::segment_trace(text));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(BM_SegmentTrace)->Arg(8)->Arg(64)->Arg(512);

static void BM_TableLmScore(benchmark::State& state) {
  const auto lm = table_lm(static_cast<std::size_t>(state.range(1)));
  ccb::ScoreRequest r;
  r.context = "w0 w1";
  r.continuation = symbols(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(lm.score(r));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TableLmScore)->Args({16, 8})->Args({256, 8})->Args({256, 256});

static void BM_MetricFull(benchmark::State& state) {
  const auto lm = table_lm(32);
  const auto t = steps_trace(static_cast<std::size_t>(state.range(0)), 12, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ccb::compute_full(t, "w1 w2", ccb::MetricKind::self_certainty, lm));
  }
}
BENCHMARK(BM_MetricFull)->Arg(2)->Arg(8)->Arg(32);

static void BM_MetricStepMasked(benchmark::State& state) {
  const auto lm = table_lm(32);
  const auto t = steps_trace(static_cast<std::size_t>(state.range(0)), 12, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ccb::compute_masked(t, "w1 w2", ccb::MetricKind::self_certainty, lm,
                                                 ccb::ConditioningMode::step_masked));
  }
}
BENCHMARK(BM_MetricStepMasked)->Arg(2)->Arg(8)->Arg(32);

static void BM_ShuffleSteps(benchmark::State& state) {
  const auto t = steps_trace(static_cast<std::size_t>(state.range(0)), 6, 16);
  std::size_t cand = 0;
  for (auto _ : state) benchmark::DoNotOptimize(ccb::shuffle_steps(t, 7, "item", cand++));
}
BENCHMARK(BM_ShuffleSteps)->Arg(4)->Arg(64);

static void BM_TruncateCharacters(benchmark::State& state) {
  const auto t = ccb::make_trace(prose(256, 2), ccb::TaskType::open_ended);
  const auto limit = t.raw_text.size() / 2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ccb::truncate_trace(t, limit, ccb::TruncationUnit::characters, ccb::TaskType::open_ended));
  }
}
BENCHMARK(BM_TruncateCharacters);

static void BM_SelectBest(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  std::vector<std::optional<double>> scores(static_cast<std::size_t>(state.range(0)));
  for (auto& s : scores) s = n(rng);
  for (auto _ : state) benchmark::DoNotOptimize(ccb::select_best(scores));
}
BENCHMARK(BM_SelectBest)->Arg(10)->Arg(1000);

static void BM_CacheLookupHit(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / ("ccb-bench-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  {
    ccb::ScoreCache cache(dir);
    const auto lm = table_lm(8);
    std::vector<ccb::CacheKey> keys;
    for (int i = 0; i < 512; ++i) {
      ccb::ScoreRequest r;
      r.context = "w" + std::to_string(i % 8);
      r.continuation = symbols(static_cast<std::size_t>(8 + i % 24), 8);
      keys.push_back(ccb::make_cache_key("bench", lm.info().model_fingerprint, r));
      cache.store(keys.back(), lm.score(r));
    }
    std::size_t i = 0;
    for (auto _ : state) benchmark::DoNotOptimize(cache.lookup(keys[i++ % keys.size()]));
  }
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_CacheLookupHit);

BENCHMARK_MAIN();
