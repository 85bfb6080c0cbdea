#include "ccb/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "ccb/errors.hpp"

namespace ccb {
namespace {

using nlohmann::json;

constexpr std::string_view kHeader =
    "benchmark,generator,evaluator,metric,mode,sign,alpha,disruption,unit,limit,seed,"
    "n_items,n_correct,accuracy,failures,fingerprint";

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> id_fields(const ReportRow& r) {
  return {r.benchmark, r.generator, r.evaluator, r.metric, r.mode, r.sign,
          format_alpha(r.alpha), r.disruption, r.unit, r.limit, r.seed};
}

std::vector<std::string> all_fields(const ReportRow& r) {
  auto f = id_fields(r);
  f.push_back(std::to_string(r.n_items));
  f.push_back(std::to_string(r.n_correct));
  f.push_back(format_accuracy(r.accuracy));
  f.push_back(std::to_string(r.failures));
  f.push_back(r.fingerprint);
  return f;
}

// Relative limits sort after absolute ones; within a kind, numerically.
std::pair<bool, double> limit_key(const std::string& limit) {
  if (limit.empty()) return {false, -1.0};
  const bool relative = limit.back() == '%';
  try {
    return {relative, std::stod(limit)};
  } catch (const std::exception&) {
    return {relative, 0.0};
  }
}

std::string join_csv(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += csv_field(fields[i]);
  }
  return line;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::string render_csv(const std::vector<ReportRow>& rows) {
  std::string out(kHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += join_csv(all_fields(r));
    out += '\n';
  }
  return out;
}

std::string aligned(const std::vector<std::vector<std::string>>& table) {
  std::vector<std::size_t> width;
  for (const auto& row : table) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (const auto& row : table) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      line += row[i];
      if (i + 1 < row.size()) line.append(width[i] - row[i].size(), ' ');
    }
    out += line;
    out += '\n';
  }
  return out;
}

std::string render_table(const std::vector<ReportRow>& rows) {
  std::vector<std::vector<std::string>> table;
  table.push_back({"benchmark", "generator", "evaluator", "metric", "mode", "sign", "alpha",
                   "disruption", "unit", "limit", "seed", "n", "correct", "accuracy",
                   "failures"});
  for (const auto& r : rows) {
    auto f = all_fields(r);
    f.pop_back();
    for (auto& s : f) {
      if (s.empty()) s = "-";
    }
    table.push_back(std::move(f));
  }
  std::string out = aligned(table);

  // Mean over the three metrics for groups that have all of them.
  std::map<std::vector<std::string>, std::map<std::string, double>> groups;
  for (const auto& r : rows) {
    auto key = id_fields(r);
    key.erase(key.begin() + 3);
    groups[key][r.metric] = r.accuracy;
  }
  std::vector<std::vector<std::string>> means;
  means.push_back({"benchmark", "generator", "evaluator", "mode", "sign", "alpha", "disruption",
                   "unit", "limit", "seed", "mean_accuracy"});
  for (const auto& [key, by_metric] : groups) {
    if (!by_metric.count("self_certainty") || !by_metric.count("log_likelihood") ||
        !by_metric.count("entropy")) {
      continue;
    }
    const double mean = (by_metric.at("self_certainty") + by_metric.at("log_likelihood") +
                         by_metric.at("entropy")) /
                        3.0;
    auto line = key;
    for (auto& s : line) {
      if (s.empty()) s = "-";
    }
    line.push_back(format_accuracy(mean));
    means.push_back(std::move(line));
  }
  if (means.size() > 1) {
    out += "\nmean over self_certainty, log_likelihood, entropy\n";
    out += aligned(means);
  }
  return out;
}

std::string render_curves(const std::vector<ReportRow>& rows) {
  std::string out = "benchmark,generator,evaluator,metric,mode,sign,alpha,unit,limit,accuracy\n";
  for (const auto& r : rows) {
    const bool truncated = r.disruption == "truncate";
    if (!truncated && r.disruption != "none") continue;
    out += join_csv({r.benchmark, r.generator, r.evaluator, r.metric, r.mode, r.sign,
                     format_alpha(r.alpha), truncated ? r.unit : "", truncated ? r.limit : "full",
                     format_accuracy(r.accuracy)});
    out += '\n';
  }
  return out;
}

}  // namespace

std::string ReportRow::cell_key() const {
  return join_csv(id_fields(*this));
}

std::optional<ReportFormat> parse_report_format(std::string_view s) noexcept {
  if (s == "csv") return ReportFormat::csv;
  if (s == "table") return ReportFormat::table;
  if (s == "curves") return ReportFormat::curves;
  return std::nullopt;
}

std::string format_alpha(const std::optional<double>& alpha) {
  if (!alpha) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", *alpha);
  return buf;
}

std::string format_accuracy(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", accuracy);
  return buf;
}

void sort_rows(std::vector<ReportRow>& rows) {
  auto key = [](const ReportRow& r) {
    return std::make_tuple(r.benchmark, r.generator, r.evaluator, r.metric, r.mode, r.sign,
                           r.alpha.value_or(-1.0), r.disruption, r.unit, limit_key(r.limit),
                           r.seed, r.fingerprint);
  };
  std::stable_sort(rows.begin(), rows.end(),
                   [&](const ReportRow& a, const ReportRow& b) { return key(a) < key(b); });
}

std::string render_report(std::vector<ReportRow> rows, ReportFormat format) {
  sort_rows(rows);
  switch (format) {
    case ReportFormat::csv: return render_csv(rows);
    case ReportFormat::table: return render_table(rows);
    case ReportFormat::curves: return render_curves(rows);
  }
  return {};
}

void emit_report(const std::vector<ReportRow>& rows, ReportFormat format,
                 const std::filesystem::path& path) {
  if (rows.empty()) throw Error("no report rows to write");
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write report " + path.string());
  out << render_report(rows, format);
  if (!out.flush()) throw Error("cannot write report " + path.string());
}

std::vector<ReportRow> parse_csv_report(std::string_view text) {
  std::vector<ReportRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kHeader) throw FormatError("report", 1, "header", "unexpected header");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 16) throw FormatError("report", lineno, "row", "expected 16 columns");
    ReportRow r;
    r.benchmark = f[0];
    r.generator = f[1];
    r.evaluator = f[2];
    r.metric = f[3];
    r.mode = f[4];
    r.sign = f[5];
    if (!f[6].empty()) r.alpha = std::stod(f[6]);
    r.disruption = f[7];
    r.unit = f[8];
    r.limit = f[9];
    r.seed = f[10];
    try {
      r.n_items = std::stoul(f[11]);
      r.n_correct = std::stoul(f[12]);
      r.accuracy = std::stod(f[13]);
      r.failures = std::stoul(f[14]);
    } catch (const std::exception&) {
      throw FormatError("report", lineno, "counts", "not a number");
    }
    r.fingerprint = f[15];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string row_to_json(const ReportRow& r) {
  json j = {{"benchmark", r.benchmark},   {"generator", r.generator},
            {"evaluator", r.evaluator},   {"metric", r.metric},
            {"mode", r.mode},             {"sign", r.sign},
            {"disruption", r.disruption}, {"unit", r.unit},
            {"limit", r.limit},           {"seed", r.seed},
            {"n_items", r.n_items},       {"n_correct", r.n_correct},
            {"accuracy", r.accuracy},     {"failures", r.failures},
            {"fingerprint", r.fingerprint}};
  j["alpha"] = r.alpha ? json(*r.alpha) : json(nullptr);
  return j.dump();
}

ReportRow row_from_json(std::string_view line) {
  const json j = json::parse(line);
  ReportRow r;
  r.benchmark = j.at("benchmark").get<std::string>();
  r.generator = j.at("generator").get<std::string>();
  r.evaluator = j.at("evaluator").get<std::string>();
  r.metric = j.at("metric").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.sign = j.at("sign").get<std::string>();
  if (!j.at("alpha").is_null()) r.alpha = j.at("alpha").get<double>();
  r.disruption = j.at("disruption").get<std::string>();
  r.unit = j.at("unit").get<std::string>();
  r.limit = j.at("limit").get<std::string>();
  r.seed = j.at("seed").get<std::string>();
  r.n_items = j.at("n_items").get<std::size_t>();
  r.n_correct = j.at("n_correct").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.failures = j.at("failures").get<std::size_t>();
  r.fingerprint = j.at("fingerprint").get<std::string>();
  return r;
}

}  // namespace ccb
