// ccb: command-line front end for the harness.

#include <algorithm>
#include <iomanip>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "ccb/benchmark_io.hpp"
#include "ccb/errors.hpp"
#include "ccb/experiment.hpp"
#include "ccb/report.hpp"
#include "ccb/score_cache.hpp"
#include "ccb/table_lm.hpp"
#include "ccb/wire.hpp"

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string backend;
  bool verbose = false;
};

ccb::ExperimentConfig load_config(const Globals& g) {
  if (g.config.empty()) throw ccb::ConfigError("--config is required");
  auto cfg = ccb::load_experiment_config(g.config);
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (g.jobs) cfg.concurrency.items = *g.jobs;
  if (g.seed) {
    if (cfg.generator) cfg.generator->seed = *g.seed;
    cfg.canonical += "\nseed=" + std::to_string(*g.seed);
  }
  if (!g.backend.empty()) {
    cfg.evaluators = {g.backend};
    cfg.canonical += "\nevaluator=" + g.backend;
  }
  cfg.validate();
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ccb::Error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<ccb::ReportRow> read_rows(const std::string& path) {
  const std::string text = slurp(path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") {
    return ccb::parse_csv_report(text);
  }
  std::vector<ccb::ReportRow> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(ccb::row_from_json(line));
  }
  return rows;
}

int print_summary(const ccb::RunSummary& s) {
  if (!s.rows.empty()) std::cout << ccb::render_report(s.rows, ccb::ReportFormat::table);
  for (const auto& f : s.failed_cells) std::cerr << "failed cell: " << f << "\n";
  return s.failed_cells.empty() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ccb: score, disrupt and select chain-of-thought candidates"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--out", g.out, "Output directory (overrides the config)");
  app.add_option("--seed", g.seed, "Generator seed (overrides the config)");
  app.add_option("--jobs", g.jobs, "Items processed concurrently")->check(CLI::PositiveNumber);
  app.add_option("--backend", g.backend, "Evaluator backend id (overrides the config)");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a benchmark file and write it in canonical form");
  std::string ingest_in, ingest_out, ingest_format = "canonical";
  bool allow_empty = false;
  ingest->add_option("input", ingest_in, "Benchmark file")->required()->check(CLI::ExistingFile);
  ingest->add_option("-o,--output", ingest_out, "Canonical JSONL output");
  ingest->add_option("-f,--format", ingest_format, "canonical | gsm8k | mcq");
  ingest->add_flag("--allow-empty", allow_empty, "Accept items without candidates");

  auto* generate = app.add_subcommand("generate", "Sample candidates for every benchmark in the config");

  // score
  auto* score = app.add_subcommand("score", "Per-candidate scores for one cell");
  std::string s_bench, s_metric = "self_certainty", s_mode = "full", s_disruption = "none";
  std::optional<double> s_alpha;
  score->add_option("--benchmark", s_bench, "Benchmark name (default: first)");
  score->add_option("--metric", s_metric, "self_certainty | log_likelihood | entropy");
  score->add_option("--mode", s_mode, "full | step_masked | query_masked");
  score->add_option("--alpha", s_alpha, "Contrastive weight");
  score->add_option("--disruption", s_disruption, "Disruption name from the config");

  auto* evaluate = app.add_subcommand("evaluate", "Run every cell of the config");
  bool fresh = false;
  evaluate->add_flag("--fresh", fresh, "Ignore rows from an earlier run");

  auto* sweep = app.add_subcommand("sweep-alpha", "Contrastive cells over an alpha grid");
  std::vector<double> alphas;
  sweep->add_option("--alphas", alphas, "Alpha values (default: config grid)")->delimiter(',');
  sweep->add_flag("--fresh", fresh, "Ignore rows from an earlier run");

  auto* report = app.add_subcommand("report", "Render rows (rows.jsonl or report.csv)");
  std::string r_in, r_format = "table", r_out;
  report->add_option("input", r_in, "rows.jsonl or a csv report")->required()->check(CLI::ExistingFile);
  report->add_option("-f,--format", r_format, "csv | table | curves");
  report->add_option("-o,--output", r_out, "Output file (default: stdout)");

  auto* cache = app.add_subcommand("cache", "Score cache administration");
  cache->require_subcommand(1);
  std::string cache_dir;
  cache->add_option("--dir", cache_dir, "Cache directory (default: $CCB_CACHE_DIR or .ccb-cache)");
  auto* c_stats = cache->add_subcommand("stats", "Entry counts and bytes");
  auto* c_verify = cache->add_subcommand("verify", "Checksum scan; quarantine corrupt records");
  auto* c_gc = cache->add_subcommand("gc", "Drop records of unknown model fingerprints");
  std::vector<std::string> keep;
  c_gc->add_option("--keep", keep, "Fingerprints to keep (default: backends of --config)");

  auto* serve = app.add_subcommand("serve", "Serve a table LM over the scoring protocol");
  std::string sv_fixture, sv_host = "127.0.0.1", sv_id = "table";
  int sv_port = 8080;
  serve->add_option("fixture", sv_fixture, "Table LM fixture")->required()->check(CLI::ExistingFile);
  serve->add_option("--host", sv_host);
  serve->add_option("--port", sv_port);
  serve->add_option("--id", sv_id);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (ingest->parsed()) {
      const auto fmt = ccb::parse_benchmark_format(ingest_format);
      if (!fmt) throw ccb::ConfigError("unknown format " + ingest_format);
      ccb::LoadOptions lo;
      lo.require_candidates = !allow_empty;
      const auto items = ccb::load_benchmark(ingest_in, *fmt, lo);
      if (ingest_out.empty()) {
        ccb::write_benchmark(std::cout, items);
      } else {
        ccb::save_benchmark(ingest_out, items);
      }
      std::cerr << items.size() << " items\n";
      return 0;
    }

    if (generate->parsed()) {
      auto cfg = load_config(g);
      if (!cfg.generator) throw ccb::ConfigError("config has no generator");
      ccb::Experiment exp(cfg);
      const auto dir = cfg.output_dir / "candidates";
      std::filesystem::create_directories(dir);
      for (std::size_t b = 0; b < cfg.benchmarks.size(); ++b) {
        const auto path = dir / (cfg.benchmarks[b].name + ".jsonl");
        ccb::save_benchmark(path, exp.items(b));
        std::cout << path.string() << "\n";
      }
      return 0;
    }

    if (score->parsed()) {
      auto cfg = load_config(g);
      ccb::Cell cell;
      for (std::size_t b = 0; b < cfg.benchmarks.size(); ++b) {
        if (cfg.benchmarks[b].name == s_bench) cell.benchmark = b;
      }
      auto named = std::find_if(cfg.disruptions.begin(), cfg.disruptions.end(),
                                [&](const ccb::NamedPipeline& p) { return p.name == s_disruption; });
      if (named == cfg.disruptions.end()) {
        if (s_disruption != "none") throw ccb::ConfigError("unknown disruption " + s_disruption);
        cfg.disruptions.push_back({"none", {}});
        named = cfg.disruptions.end() - 1;
      }
      cell.disruption = static_cast<std::size_t>(named - cfg.disruptions.begin());
      ccb::Experiment exp(cfg);
      const auto kind = ccb::parse_metric_kind(s_metric);
      const auto mode = ccb::parse_conditioning_mode(s_mode);
      if (!kind || !mode) throw ccb::ConfigError("unknown metric or mode");
      cell.metric.kind = *kind;
      cell.metric.mode = *mode;
      cell.metric.alpha = s_alpha;
      cell.metric.evaluator = cfg.evaluators.front();
      cell.metric.sign = cfg.sign;
      cell.metric.aggregation = cfg.aggregation;
      const auto rep = exp.run_cell(cell);
      for (const auto& r : rep.results) {
        std::cout << "{\"item_id\":\"" << r.item_id << "\",\"scores\":[";
        for (std::size_t i = 0; i < r.scores.size(); ++i) {
          if (i) std::cout << ",";
          if (r.scores[i]) {
            std::cout << std::setprecision(17) << *r.scores[i];
          } else {
            std::cout << "null";
          }
        }
        std::cout << "],\"chosen\":";
        if (r.chosen_index) {
          std::cout << *r.chosen_index;
        } else {
          std::cout << "null";
        }
        std::cout << ",\"correct\":" << (r.correct ? "true" : "false") << "}\n";
      }
      std::cerr << "accuracy " << ccb::format_accuracy(rep.accuracy) << " (" << rep.n_correct
                << "/" << rep.n_items << ", failures " << rep.failures << ")\n";
      return 0;
    }

    if (evaluate->parsed()) {
      ccb::RunOptions opts;
      opts.resume = !fresh;
      return print_summary(ccb::run_experiment(load_config(g), opts));
    }

    if (sweep->parsed()) {
      ccb::RunOptions opts;
      opts.resume = !fresh;
      return print_summary(ccb::sweep_alpha(load_config(g), alphas, opts));
    }

    if (report->parsed()) {
      const auto fmt = ccb::parse_report_format(r_format);
      if (!fmt) throw ccb::ConfigError("unknown report format " + r_format);
      const auto rows = read_rows(r_in);
      if (r_out.empty()) {
        std::cout << ccb::render_report(rows, *fmt);
      } else {
        ccb::emit_report(rows, *fmt, r_out);
      }
      return 0;
    }

    if (cache->parsed()) {
      ccb::ScoreCache store(cache_dir.empty() ? ccb::ScoreCache::default_dir()
                                              : std::filesystem::path(cache_dir));
      if (c_stats->parsed()) {
        const auto s = store.stats();
        std::cout << "entries " << s.entries << "\ndead " << s.dead << "\nbytes " << s.bytes
                  << "\nquarantined " << s.quarantined << "\n";
        for (const auto& [fp, n] : s.per_fingerprint) std::cout << "  " << fp << " " << n << "\n";
      } else if (c_verify->parsed()) {
        const auto v = store.verify();
        std::cout << "checked " << v.checked << "\nquarantined " << v.quarantined
                  << "\ntruncated_bytes " << v.truncated_bytes << "\n";
        return v.quarantined == 0 && v.truncated_bytes == 0 ? 0 : 1;
      } else if (c_gc->parsed()) {
        std::set<std::string> known(keep.begin(), keep.end());
        if (known.empty()) {
          auto cfg = load_config(g);
          cfg.use_cache = false;
          ccb::Experiment exp(cfg);
          for (const auto& id : exp.registry().ids()) {
            known.insert(exp.registry().get(id).info().model_fingerprint);
          }
        }
        const auto r = store.gc(known);
        std::cout << "kept " << r.kept << "\ndeleted " << r.deleted << "\n";
      }
      return 0;
    }

    if (serve->parsed()) {
      auto lm = ccb::TableLM::from_file(sv_id, sv_fixture);
      ccb::wire::ScoreService service(*lm);
      httplib::Server server;
      ccb::wire::bind_routes(server, service);
      std::cerr << "serving " << lm->info().model_fingerprint << " on " << sv_host << ":"
                << sv_port << "\n";
      if (!server.listen(sv_host, sv_port)) throw ccb::Error("cannot bind " + sv_host);
      return 0;
    }
  } catch (const ccb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
