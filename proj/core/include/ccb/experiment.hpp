#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccb/benchmark_io.hpp"
#include "ccb/disruptions.hpp"
#include "ccb/metrics.hpp"
#include "ccb/report.hpp"
#include "ccb/rewriter.hpp"
#include "ccb/score_cache.hpp"
#include "ccb/scoring_backend.hpp"
#include "ccb/selection.hpp"

namespace ccb {

/// Zero-shot chain-of-thought prompt used when the config gives none.
extern const std::string_view kDefaultCotTemplate;

struct BenchmarkSource {
  std::string name;
  std::filesystem::path path;
  BenchmarkFormat format = BenchmarkFormat::canonical;
};

struct BackendSource {
  std::string id;
  /// "table" or "remote".
  std::string kind;
  std::filesystem::path path;
  std::string url;
  int max_retries = 3;
  int timeout_seconds = 60;
};

struct GeneratorConfig {
  std::string backend;
  std::size_t n = 10;
  double temperature = 0.8;
  std::size_t max_tokens = 256;
  std::uint64_t seed = 0;
  /// "{question}" is replaced by the item's question.
  std::string prompt_template{kDefaultCotTemplate};
};

struct NamedPipeline {
  std::string name;
  DisruptionPipeline pipeline;
};

enum class EvaluatorContext { raw, rendered };

struct Concurrency {
  std::size_t items = 1;
  std::size_t requests = 1;
};

/// Parsed experiment file (JSON). String values may use ${VAR} and
/// ${VAR:-default}; relative paths resolve against the file's directory.
struct ExperimentConfig {
  std::vector<BenchmarkSource> benchmarks;
  std::vector<BackendSource> backends;
  /// Absent: benchmarks already carry candidates.
  std::optional<GeneratorConfig> generator;
  std::vector<std::string> evaluators;
  std::vector<MetricKind> metrics;
  std::vector<ConditioningMode> modes;
  /// Adds contrastive cells (every metric x masked mode x alpha).
  std::vector<double> contrastive_alphas;
  /// Grid for sweep-alpha.
  std::vector<double> sweep_alphas;
  std::vector<NamedPipeline> disruptions;
  SignConvention sign = SignConvention::certainty_aligned;
  Aggregation aggregation = Aggregation::token_weighted;
  std::optional<double> entropy_top_p;
  EvaluatorContext evaluator_context = EvaluatorContext::raw;
  bool strict_grading = false;
  std::optional<RewriterConfig> rewriter;
  bool use_cache = false;
  std::filesystem::path cache_dir;
  Concurrency concurrency;
  std::filesystem::path output_dir;
  /// Canonical JSON of the settings that affect results.
  std::string canonical;

  /// Throws ConfigError: unknown backend ids, N < 1, temperature <= 0,
  /// empty metric or mode lists, invalid pipelines.
  void validate() const;
};

/// Expands ${VAR} and ${VAR:-default}. Throws ConfigError for an unset
/// variable without a default, or an unterminated reference.
std::string interpolate_env(std::string_view text);

ExperimentConfig parse_experiment_config(std::string_view text,
                                         const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Samples `gen.n` candidates per item. Candidate i of an item uses seed
/// splitmix64(splitmix64(gen.seed ^ fnv1a64(item_id)) ^ i), so results do
/// not depend on scheduling.
std::vector<BenchmarkItem> generate_candidates(std::vector<BenchmarkItem> items,
                                               const ScoringBackend& generator,
                                               const GeneratorConfig& gen,
                                               std::size_t jobs = 1);

std::string render_prompt(std::string_view prompt_template, std::string_view question);

/// {0.0, 0.1, ..., 1.0}.
std::vector<double> default_alpha_grid();

struct Cell {
  std::size_t benchmark = 0;
  MetricSpec metric;
  std::size_t disruption = 0;
};

/// Resolved backends, loaded benchmarks and the fingerprint of one config.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config);

  const ExperimentConfig& config() const noexcept { return config_; }
  const BackendRegistry& registry() const noexcept { return registry_; }
  /// 16 hex digits over the canonical config, backend fingerprints and
  /// benchmark contents.
  const std::string& fingerprint() const noexcept { return fingerprint_; }
  std::shared_ptr<ScoreCache> cache() const noexcept { return cache_; }

  /// Loaded (and, with a generator, sampled) items; computed once.
  const std::vector<BenchmarkItem>& items(std::size_t benchmark);

  std::vector<Cell> cells() const;
  std::vector<Cell> sweep_cells(const std::vector<double>& alphas) const;

  AccuracyReport run_cell(const Cell& cell);
  ReportRow make_row(const Cell& cell, const AccuracyReport& report) const;

 private:
  ExperimentConfig config_;
  BackendRegistry registry_;
  std::shared_ptr<ScoreCache> cache_;
  std::vector<std::optional<std::vector<BenchmarkItem>>> items_;
  std::string fingerprint_;
};

struct RunOptions {
  /// Skip cells already in <output_dir>/rows.jsonl with this fingerprint.
  bool resume = true;
  /// Write rows.jsonl and the reports under output_dir.
  bool write = true;
  std::function<void(const ReportRow&)> on_row;
};

struct RunSummary {
  std::vector<ReportRow> rows;
  /// Cells that raised instead of producing a row.
  std::vector<std::string> failed_cells;
};

/// Every cell of the config. Rows are appended to rows.jsonl as cells
/// finish; report.csv and report.txt are written at the end.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& opts = {});

/// One contrastive cell per alpha for every metric x masked mode x
/// disruption; written to sweep.jsonl / sweep.csv.
RunSummary sweep_alpha(const ExperimentConfig& config, std::vector<double> alphas,
                       const RunOptions& opts = {});

}  // namespace ccb
