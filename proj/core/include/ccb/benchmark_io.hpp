#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccb/trace_model.hpp"

namespace ccb {

/// On-disk record layouts accepted by load_benchmark.
///
/// canonical: one JSON object per line with the fields of BenchmarkItem.
/// gsm8k: {"question", "answer"} where the gold answer follows "####";
///        optional "id" and "candidates".
/// mcq: {"question", "choices": [..], "answer": "C"}; labels A, B, ... are
///      assigned in order; optional "id" and "candidates".
enum class BenchmarkFormat { canonical, gsm8k, mcq };

std::optional<BenchmarkFormat> parse_benchmark_format(std::string_view s) noexcept;

struct LoadOptions {
  /// Reject items without candidates. `generate` loads question-only files
  /// with this off.
  bool require_candidates = true;
};

/// Parses, validates, and segments a benchmark file. Throws FormatError
/// naming the line and field on the first malformed record, and on a
/// duplicate item_id.
std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path,
                                          BenchmarkFormat format,
                                          const LoadOptions& opts = {});

/// Same as load_benchmark over an in-memory stream; `source` names it in
/// error messages.
std::vector<BenchmarkItem> read_benchmark(std::istream& in,
                                          std::string_view source,
                                          BenchmarkFormat format,
                                          const LoadOptions& opts = {});

/// Writes items in the canonical format. Segmentation is not persisted.
void write_benchmark(std::ostream& out, const std::vector<BenchmarkItem>& items);
void save_benchmark(const std::filesystem::path& path,
                    const std::vector<BenchmarkItem>& items);

}  // namespace ccb
