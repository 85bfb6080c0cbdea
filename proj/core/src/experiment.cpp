#include "ccb/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ccb/digest.hpp"
#include "ccb/errors.hpp"
#include "ccb/parallel.hpp"
#include "ccb/remote_backend.hpp"
#include "ccb/table_lm.hpp"

namespace ccb {

const std::string_view kDefaultCotTemplate =
    "Question: {question}\nAnswer: Let's think step by step.";

namespace {

using nlohmann::json;

void interpolate_tree(json& j) {
  if (j.is_string()) {
    j = interpolate_env(j.get<std::string>());
  } else if (j.is_array() || j.is_object()) {
    for (auto& v : j) interpolate_tree(v);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

template <typename T, typename Parse>
T parse_enum(const json& j, const char* what, Parse parse) {
  const auto s = j.get<std::string>();
  const auto v = parse(s);
  if (!v) throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
  return *v;
}

RewriterConfig parse_rewriter(const json& j) {
  RewriterConfig r;
  r.endpoint = get_or<std::string>(j, "endpoint", "");
  r.model_name = get_or<std::string>(j, "model", "");
  r.prompt_template = get_or<std::string>(j, "prompt_template", std::string(kDefaultParaphrasePrompt));
  r.temperature = get_or<double>(j, "temperature", 0.0);
  r.max_retries = get_or<int>(j, "max_retries", 2);
  r.mock = get_or<std::string>(j, "mock", "identity");
  r.synonyms = get_or<std::map<std::string, std::string>>(j, "synonyms", {});
  r.timeout = std::chrono::seconds(get_or<int>(j, "timeout_seconds", 60));
  r.validate();
  return r;
}

DisruptionSpec parse_disruption(const json& j, const std::optional<RewriterConfig>& rewriter) {
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("disruption needs a 'kind'");
  DisruptionSpec s;
  s.kind = parse_enum<DisruptionKind>(j.at("kind"), "disruption kind", parse_disruption_kind);
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("unit")) {
    s.unit = parse_enum<TruncationUnit>(j.at("unit"), "truncation unit", parse_truncation_unit);
  }
  if (j.contains("limit")) {
    const auto& l = j.at("limit");
    if (l.is_string()) {
      const auto text = l.get<std::string>();
      if (text.empty() || text.back() != '%') throw ConfigError("limit '" + text + "' is not N or N%");
      s.limit_fraction = std::stod(text.substr(0, text.size() - 1)) / 100.0;
    } else {
      s.limit = l.get<std::size_t>();
    }
  }
  if (j.contains("fraction")) s.limit_fraction = j.at("fraction").get<double>();
  if (j.contains("evaluator")) s.evaluator_override = j.at("evaluator").get<std::string>();
  if (s.kind == DisruptionKind::paraphrase) {
    if (j.contains("rewriter")) {
      s.rewriter = parse_rewriter(j.at("rewriter"));
    } else {
      s.rewriter = rewriter.value_or(RewriterConfig{});
    }
  }
  s.validate();
  return s;
}

std::string relative_limit(double fraction) {
  std::ostringstream out;
  out << fraction * 100.0 << '%';
  return out.str();
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, ReportRow> load_done(const std::filesystem::path& path,
                                           const std::string& fingerprint) {
  std::map<std::string, ReportRow> done;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto row = row_from_json(line);
      if (row.fingerprint == fingerprint) done.emplace(row.cell_key(), std::move(row));
    } catch (const std::exception&) {
      // A torn last line from an interrupted run; the cell is redone.
    }
  }
  return done;
}

RunSummary run_cells(Experiment& exp, const std::vector<Cell>& cells, const RunOptions& opts,
                     const std::string& stem) {
  const auto& cfg = exp.config();
  const auto jsonl = cfg.output_dir / (stem + ".jsonl");
  std::map<std::string, ReportRow> done;
  if (opts.write) {
    std::filesystem::create_directories(cfg.output_dir);
    if (opts.resume) {
      done = load_done(jsonl, exp.fingerprint());
    } else {
      std::ofstream(jsonl, std::ios::trunc);
    }
  }
  std::ofstream log;
  if (opts.write) log.open(jsonl, std::ios::app);

  RunSummary summary;
  std::set<std::string> seen;
  for (const auto& cell : cells) {
    ReportRow probe = exp.make_row(cell, AccuracyReport{});
    const auto key = probe.cell_key();
    if (!seen.insert(key).second) continue;
    if (auto it = done.find(key); it != done.end()) {
      summary.rows.push_back(it->second);
      if (opts.on_row) opts.on_row(it->second);
      continue;
    }
    try {
      const auto report = exp.run_cell(cell);
      ReportRow row = exp.make_row(cell, report);
      if (log.is_open()) {
        log << row_to_json(row) << '\n';
        log.flush();
      }
      if (opts.on_row) opts.on_row(row);
      summary.rows.push_back(std::move(row));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      spdlog::error("cell {} failed: {}", key, e.what());
      summary.failed_cells.push_back(key + ": " + e.what());
    }
  }
  sort_rows(summary.rows);
  if (opts.write && !summary.rows.empty()) {
    emit_report(summary.rows, ReportFormat::csv, cfg.output_dir / (stem == "rows" ? "report.csv" : stem + ".csv"));
    emit_report(summary.rows, ReportFormat::table, cfg.output_dir / (stem == "rows" ? "report.txt" : stem + ".txt"));
  }
  return summary;
}

}  // namespace

std::string interpolate_env(std::string_view text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '$' || i + 1 >= text.size() || text[i + 1] != '{') {
      out += text[i++];
      continue;
    }
    const auto close = text.find('}', i + 2);
    if (close == std::string_view::npos) {
      throw ConfigError("unterminated ${ in '" + std::string(text) + "'");
    }
    const std::string_view body = text.substr(i + 2, close - i - 2);
    const auto sep = body.find(":-");
    const std::string name(body.substr(0, sep));
    const char* value = std::getenv(name.c_str());
    if (value && *value) {
      out += value;
    } else if (sep != std::string_view::npos) {
      out += body.substr(sep + 2);
    } else {
      throw ConfigError("environment variable " + name + " is not set");
    }
    i = close + 1;
  }
  return out;
}

void ExperimentConfig::validate() const {
  std::set<std::string> ids;
  for (const auto& b : backends) {
    if (b.id.empty()) throw ConfigError("backend without id");
    if (!ids.insert(b.id).second) throw ConfigError("duplicate backend id '" + b.id + "'");
    if (b.kind == "table") {
      if (b.path.empty()) throw ConfigError("table backend '" + b.id + "' needs a path");
    } else if (b.kind == "remote") {
      if (b.url.empty()) throw ConfigError("remote backend '" + b.id + "' needs a url");
    } else {
      throw ConfigError("backend '" + b.id + "' has unknown kind '" + b.kind + "'");
    }
  }
  auto known = [&](const std::string& id, const char* role) {
    if (!ids.count(id)) throw ConfigError(std::string(role) + " refers to unknown backend '" + id + "'");
  };
  if (benchmarks.empty()) throw ConfigError("no benchmarks");
  if (generator) {
    known(generator->backend, "generator");
    if (generator->n < 1) throw ConfigError("generator n must be at least 1");
    if (!(generator->temperature > 0.0)) throw ConfigError("generator temperature must be positive");
    if (generator->max_tokens < 1) throw ConfigError("generator max_tokens must be positive");
  }
  if (evaluators.empty()) throw ConfigError("no evaluators");
  for (const auto& e : evaluators) known(e, "evaluator");
  if (metrics.empty()) throw ConfigError("no metrics");
  if (modes.empty()) throw ConfigError("no modes");
  for (double a : contrastive_alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  }
  for (double a : sweep_alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  }
  if (entropy_top_p && !(*entropy_top_p > 0.0 && *entropy_top_p <= 1.0)) {
    throw ConfigError("entropy_top_p must lie in (0, 1]");
  }
  if (disruptions.empty()) throw ConfigError("no disruptions");
  std::set<std::string> names;
  for (const auto& d : disruptions) {
    if (!names.insert(d.name).second) throw ConfigError("duplicate disruption '" + d.name + "'");
    validate_pipeline(d.pipeline);
    for (const auto& s : d.pipeline) {
      if (s.kind == DisruptionKind::evaluator_swap) known(*s.evaluator_override, "evaluator_swap");
    }
  }
  if (concurrency.items < 1 || concurrency.requests < 1) {
    throw ConfigError("concurrency limits must be at least 1");
  }
}

ExperimentConfig parse_experiment_config(std::string_view text,
                                         const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  interpolate_tree(j);

  ExperimentConfig c;
  try {
    for (const auto& b : j.value("benchmarks", json::array())) {
      BenchmarkSource src;
      src.path = resolve(base_dir, b.at("path").get<std::string>());
      src.name = get_or<std::string>(b, "name", src.path.stem().string());
      src.format = parse_enum<BenchmarkFormat>(b.value("format", json("canonical")),
                                               "benchmark format", parse_benchmark_format);
      c.benchmarks.push_back(std::move(src));
    }
    for (const auto& b : j.value("backends", json::array())) {
      BackendSource src;
      src.id = b.at("id").get<std::string>();
      src.kind = get_or<std::string>(b, "kind", "table");
      src.path = resolve(base_dir, get_or<std::string>(b, "path", ""));
      src.url = get_or<std::string>(b, "url", "");
      src.max_retries = get_or<int>(b, "max_retries", 3);
      src.timeout_seconds = get_or<int>(b, "timeout_seconds", 60);
      c.backends.push_back(std::move(src));
    }
    if (j.contains("generator") && !j.at("generator").is_null()) {
      const auto& g = j.at("generator");
      GeneratorConfig gen;
      gen.backend = g.at("backend").get<std::string>();
      gen.n = get_or<std::size_t>(g, "n", 10);
      gen.temperature = get_or<double>(g, "temperature", 0.8);
      gen.max_tokens = get_or<std::size_t>(g, "max_tokens", 256);
      gen.seed = get_or<std::uint64_t>(g, "seed", 0);
      gen.prompt_template = get_or<std::string>(g, "prompt_template", std::string(kDefaultCotTemplate));
      c.generator = std::move(gen);
    }
    c.evaluators = get_or<std::vector<std::string>>(j, "evaluators", {});
    for (const auto& m : j.value("metrics", json::array({"self_certainty", "log_likelihood", "entropy"}))) {
      c.metrics.push_back(parse_enum<MetricKind>(m, "metric", parse_metric_kind));
    }
    for (const auto& m : j.value("modes", json::array({"full", "step_masked", "query_masked"}))) {
      c.modes.push_back(parse_enum<ConditioningMode>(m, "mode", parse_conditioning_mode));
    }
    c.contrastive_alphas = get_or<std::vector<double>>(j, "contrastive_alphas", {});
    c.sweep_alphas = get_or<std::vector<double>>(j, "sweep_alphas", default_alpha_grid());
    if (j.contains("sign")) c.sign = parse_enum<SignConvention>(j.at("sign"), "sign", parse_sign_convention);
    if (j.contains("aggregation")) {
      c.aggregation = parse_enum<Aggregation>(j.at("aggregation"), "aggregation", parse_aggregation);
    }
    if (j.contains("entropy_top_p") && !j.at("entropy_top_p").is_null()) {
      c.entropy_top_p = j.at("entropy_top_p").get<double>();
    }
    const auto ctx = get_or<std::string>(j, "evaluator_context", "raw");
    if (ctx == "raw") {
      c.evaluator_context = EvaluatorContext::raw;
    } else if (ctx == "rendered") {
      c.evaluator_context = EvaluatorContext::rendered;
    } else {
      throw ConfigError("evaluator_context must be raw or rendered");
    }
    c.strict_grading = get_or<bool>(j, "strict_grading", false);
    if (j.contains("rewriter") && !j.at("rewriter").is_null()) c.rewriter = parse_rewriter(j.at("rewriter"));

    const json disruptions = j.value("disruptions", json::array({json{{"name", "none"}, {"pipeline", json::array()}}}));
    for (const auto& d : disruptions) {
      NamedPipeline p;
      if (d.contains("pipeline")) {
        for (const auto& s : d.at("pipeline")) p.pipeline.push_back(parse_disruption(s, c.rewriter));
      } else if (d.contains("kind")) {
        const auto spec = parse_disruption(d, c.rewriter);
        if (spec.kind != DisruptionKind::none) p.pipeline.push_back(spec);
      }
      p.name = get_or<std::string>(d, "name", pipeline_label(p.pipeline));
      c.disruptions.push_back(std::move(p));
    }

    if (j.contains("cache") && j.at("cache").is_boolean()) c.use_cache = j.at("cache").get<bool>();
    const auto cache_dir = get_or<std::string>(j, "cache_dir", "");
    c.cache_dir = cache_dir.empty() ? ScoreCache::default_dir() : resolve(base_dir, cache_dir);
    if (j.contains("concurrency")) {
      const auto& cc = j.at("concurrency");
      c.concurrency.items = get_or<std::size_t>(cc, "items", 1);
      c.concurrency.requests = get_or<std::size_t>(cc, "requests", 1);
    }
    c.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", "out"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  json canon = j;
  for (const char* k : {"output_dir", "concurrency", "cache", "cache_dir"}) canon.erase(k);
  c.canonical = canon.dump();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_file(path), path.parent_path());
}

std::string render_prompt(std::string_view prompt_template, std::string_view question) {
  std::string out(prompt_template);
  static constexpr std::string_view kSlot = "{question}";
  for (auto p = out.find(kSlot); p != std::string::npos; p = out.find(kSlot, p + question.size())) {
    out.replace(p, kSlot.size(), question);
  }
  return out;
}

std::vector<BenchmarkItem> generate_candidates(std::vector<BenchmarkItem> items,
                                               const ScoringBackend& generator,
                                               const GeneratorConfig& gen, std::size_t jobs) {
  parallel_for(items.size(), jobs, [&](std::size_t i) {
    auto& item = items[i];
    const std::string prompt = render_prompt(gen.prompt_template, item.question);
    const std::uint64_t base = splitmix64(gen.seed ^ fnv1a64(item.item_id));
    item.candidates.clear();
    for (std::size_t k = 0; k < gen.n; ++k) {
      SampleParams p;
      p.temperature = gen.temperature;
      p.max_tokens = gen.max_tokens;
      p.seed = splitmix64(base ^ static_cast<std::uint64_t>(k));
      auto trace = make_trace(generator.sample(prompt, p), item.task_type);
      trace.provenance.push_back("generated:" + generator.id() + ":" + std::to_string(k));
      item.candidates.push_back(std::move(trace));
    }
  });
  return items;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.use_cache) cache_ = std::make_shared<ScoreCache>(config_.cache_dir);
  std::vector<std::string> prints;
  for (const auto& b : config_.backends) {
    BackendPtr backend;
    if (b.kind == "table") {
      backend = TableLM::from_file(b.id, b.path);
    } else {
      RemoteBackend::Options o;
      o.retry.max_retries = b.max_retries;
      o.timeout = std::chrono::seconds(b.timeout_seconds);
      backend = std::make_shared<RemoteBackend>(b.id, b.url, o);
    }
    if (cache_) backend = std::make_shared<CachingBackend>(backend, cache_);
    prints.push_back("backend " + b.id + "=" + backend->info().model_fingerprint);
    registry_.add(std::move(backend));
  }
  for (const auto& b : config_.benchmarks) {
    prints.push_back("benchmark " + b.name + "=" + sha256_hex(read_file(b.path)));
  }
  std::string material = config_.canonical;
  for (const auto& p : prints) material += "\n" + p;
  fingerprint_ = sha256_hex(material).substr(0, 16);
  items_.resize(config_.benchmarks.size());
}

const std::vector<BenchmarkItem>& Experiment::items(std::size_t benchmark) {
  auto& slot = items_.at(benchmark);
  if (slot) return *slot;
  const auto& src = config_.benchmarks[benchmark];
  LoadOptions lo;
  lo.require_candidates = !config_.generator;
  auto items = load_benchmark(src.path, src.format, lo);
  if (config_.generator) {
    items = generate_candidates(std::move(items), registry_.get(config_.generator->backend),
                                *config_.generator, config_.concurrency.items);
  }
  slot = std::move(items);
  return *slot;
}

std::vector<Cell> Experiment::cells() const {
  std::vector<Cell> out;
  for (std::size_t b = 0; b < config_.benchmarks.size(); ++b) {
    for (const auto& ev : config_.evaluators) {
      for (std::size_t d = 0; d < config_.disruptions.size(); ++d) {
        for (auto kind : config_.metrics) {
          MetricSpec m;
          m.kind = kind;
          m.evaluator = ev;
          m.sign = config_.sign;
          m.aggregation = config_.aggregation;
          if (kind == MetricKind::entropy) m.entropy_top_p = config_.entropy_top_p;
          for (auto mode : config_.modes) {
            m.mode = mode;
            out.push_back({b, m, d});
          }
          for (double a : config_.contrastive_alphas) {
            for (auto mode : config_.modes) {
              if (mode == ConditioningMode::full) continue;
              MetricSpec c = m;
              c.mode = mode;
              c.alpha = a;
              out.push_back({b, c, d});
            }
          }
        }
      }
    }
  }
  return out;
}

std::vector<Cell> Experiment::sweep_cells(const std::vector<double>& alphas) const {
  std::vector<ConditioningMode> masked;
  for (auto m : config_.modes) {
    if (m != ConditioningMode::full) masked.push_back(m);
  }
  if (masked.empty()) masked.push_back(ConditioningMode::step_masked);
  std::vector<Cell> out;
  for (std::size_t b = 0; b < config_.benchmarks.size(); ++b) {
    for (const auto& ev : config_.evaluators) {
      for (std::size_t d = 0; d < config_.disruptions.size(); ++d) {
        for (auto kind : config_.metrics) {
          for (auto mode : masked) {
            for (double a : alphas) {
              MetricSpec m;
              m.kind = kind;
              m.evaluator = ev;
              m.sign = config_.sign;
              m.aggregation = config_.aggregation;
              if (kind == MetricKind::entropy) m.entropy_top_p = config_.entropy_top_p;
              m.mode = mode;
              m.alpha = a;
              out.push_back({b, m, d});
            }
          }
        }
      }
    }
  }
  return out;
}

AccuracyReport Experiment::run_cell(const Cell& cell) {
  const auto& items = this->items(cell.benchmark);
  const auto& pipeline = config_.disruptions.at(cell.disruption).pipeline;
  std::unique_ptr<Rewriter> rewriter;
  for (const auto& s : pipeline) {
    if (s.kind == DisruptionKind::paraphrase) rewriter = make_rewriter(*s.rewriter);
  }
  EvaluationContext ctx;
  ctx.registry = &registry_;
  ctx.rewriter = rewriter.get();
  ctx.items_in_flight = config_.concurrency.items;
  ctx.requests_in_flight = config_.concurrency.requests;
  ctx.strict_grading = config_.strict_grading;
  if (config_.evaluator_context == EvaluatorContext::rendered && config_.generator) {
    ctx.query = [tmpl = config_.generator->prompt_template](const BenchmarkItem& item) {
      return render_prompt(tmpl, item.question);
    };
  }
  spdlog::debug("cell {} {} {} {}", config_.benchmarks[cell.benchmark].name,
                to_string(cell.metric.kind), to_string(cell.metric.mode),
                config_.disruptions[cell.disruption].name);
  return evaluate(items, cell.metric, pipeline, ctx);
}

ReportRow Experiment::make_row(const Cell& cell, const AccuracyReport& report) const {
  const auto& pipeline = config_.disruptions.at(cell.disruption).pipeline;
  const MetricSpec m = effective_metric(pipeline, cell.metric);
  ReportRow r;
  r.benchmark = config_.benchmarks.at(cell.benchmark).name;
  r.generator = config_.generator ? config_.generator->backend : "pregenerated";
  r.evaluator = m.evaluator;
  r.metric = std::string(to_string(m.kind));
  r.mode = std::string(to_string(m.mode));
  r.sign = std::string(to_string(m.sign));
  r.alpha = m.alpha;
  std::string kinds;
  for (const auto& s : pipeline) {
    if (!kinds.empty()) kinds += "+";
    kinds += to_string(s.kind);
    if (s.kind == DisruptionKind::truncate) {
      r.unit = std::string(to_string(*s.unit));
      r.limit = s.limit ? std::to_string(*s.limit) : relative_limit(*s.limit_fraction);
    }
    if (s.kind == DisruptionKind::shuffle) r.seed = std::to_string(*s.seed);
  }
  r.disruption = kinds.empty() ? "none" : kinds;
  r.n_items = report.n_items;
  r.n_correct = report.n_correct;
  r.accuracy = report.accuracy;
  r.failures = report.failures;
  r.fingerprint = fingerprint_;
  return r;
}

RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& opts) {
  Experiment exp(config);
  return run_cells(exp, exp.cells(), opts, "rows");
}

RunSummary sweep_alpha(const ExperimentConfig& config, std::vector<double> alphas,
                       const RunOptions& opts) {
  if (alphas.empty()) alphas = config.sweep_alphas;
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  }
  Experiment exp(config);
  return run_cells(exp, exp.sweep_cells(alphas), opts, "sweep");
}

}  // namespace ccb
