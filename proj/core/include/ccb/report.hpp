#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ccb {

/// One cell of an experiment. Identifier columns are stored as they are
/// printed so that rows round-trip through CSV unchanged.
struct ReportRow {
  std::string benchmark;
  std::string generator;
  std::string evaluator;
  std::string metric;
  std::string mode;
  std::string sign;
  std::optional<double> alpha;
  std::string disruption;
  std::string unit;
  std::string limit;
  std::string seed;
  std::size_t n_items = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;
  std::size_t failures = 0;
  std::string fingerprint;

  /// Every identifier column joined; equal keys mean the same cell.
  std::string cell_key() const;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

enum class ReportFormat { csv, table, curves };

std::optional<ReportFormat> parse_report_format(std::string_view s) noexcept;

/// "0.5"; empty when absent.
std::string format_alpha(const std::optional<double>& alpha);
/// Fixed six decimals.
std::string format_accuracy(double accuracy);

/// Sorts by the identifier columns (limit numerically within a unit).
void sort_rows(std::vector<ReportRow>& rows);

/// csv: header plus one line per row.
/// table: aligned columns, then the mean over the three metrics for every
///   group that has all three.
/// curves: accuracy against truncation limit per cell (truncate rows, with
///   the untruncated row as limit "full").
std::string render_report(std::vector<ReportRow> rows, ReportFormat format);

/// Writes render_report to `path`. Throws Error on empty rows or when the
/// path cannot be written.
void emit_report(const std::vector<ReportRow>& rows, ReportFormat format,
                 const std::filesystem::path& path);

/// Parses the csv format back (header required).
std::vector<ReportRow> parse_csv_report(std::string_view text);

std::string row_to_json(const ReportRow& row);
ReportRow row_from_json(std::string_view line);

}  // namespace ccb
