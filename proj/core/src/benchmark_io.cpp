#include "ccb/benchmark_io.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "ccb/errors.hpp"

namespace ccb {
namespace {

using nlohmann::json;

struct RecordContext {
  std::string_view source;
  std::size_t line;

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw FormatError(std::string(source), line, field, what);
  }

  const json& require(const json& obj, const char* field) const {
    auto it = obj.find(field);
    if (it == obj.end()) fail(field, "missing");
    return *it;
  }

  std::string require_string(const json& obj, const char* field) const {
    const json& v = require(obj, field);
    if (!v.is_string()) fail(field, "expected a string");
    return v.get<std::string>();
  }
};

std::string trimmed(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(ws) - b + 1));
}

std::vector<CandidateTrace> parse_candidates(const RecordContext& ctx,
                                             const json& obj,
                                             TaskType task_type) {
  std::vector<CandidateTrace> out;
  auto it = obj.find("candidates");
  if (it == obj.end()) return out;
  if (!it->is_array()) ctx.fail("candidates", "expected an array");
  for (std::size_t i = 0; i < it->size(); ++i) {
    const json& c = (*it)[i];
    const std::string field = "candidates[" + std::to_string(i) + "]";
    if (!c.is_object()) ctx.fail(field, "expected an object");
    auto text = c.find("text");
    if (text == c.end() || !text->is_string()) {
      ctx.fail(field + ".text", "expected a string");
    }
    CandidateTrace trace = make_trace(text->get<std::string>(), task_type);
    if (auto fa = c.find("final_answer"); fa != c.end() && !fa->is_null()) {
      if (!fa->is_string()) ctx.fail(field + ".final_answer", "expected a string");
      trace.final_answer = fa->get<std::string>();
    }
    out.push_back(std::move(trace));
  }
  return out;
}

BenchmarkItem parse_canonical(const RecordContext& ctx, const json& obj) {
  BenchmarkItem item;
  item.item_id = ctx.require_string(obj, "item_id");
  if (item.item_id.empty()) ctx.fail("item_id", "must be non-empty");
  item.question = ctx.require_string(obj, "question");
  const auto task = parse_task_type(ctx.require_string(obj, "task_type"));
  if (!task) ctx.fail("task_type", "expected open_ended or multiple_choice");
  item.task_type = *task;
  item.gold_answer = ctx.require_string(obj, "gold_answer");

  auto opts = obj.find("options");
  const bool has_options = opts != obj.end() && !opts->is_null();
  if (item.task_type == TaskType::open_ended && has_options) {
    ctx.fail("options", "present on an open_ended item");
  }
  if (item.task_type == TaskType::multiple_choice) {
    if (!has_options) ctx.fail("options", "required for multiple_choice");
    if (!opts->is_array() || opts->empty()) {
      ctx.fail("options", "expected a non-empty array");
    }
    for (std::size_t i = 0; i < opts->size(); ++i) {
      const json& o = (*opts)[i];
      const std::string field = "options[" + std::to_string(i) + "]";
      if (!o.is_object()) ctx.fail(field, "expected an object");
      LabeledOption opt;
      auto label = o.find("label");
      auto text = o.find("text");
      if (label == o.end() || !label->is_string()) ctx.fail(field + ".label", "expected a string");
      if (text == o.end() || !text->is_string()) ctx.fail(field + ".text", "expected a string");
      opt.label = label->get<std::string>();
      opt.text = text->get<std::string>();
      item.options.push_back(std::move(opt));
    }
    const bool gold_is_label =
        std::any_of(item.options.begin(), item.options.end(),
                    [&](const LabeledOption& o) { return o.label == item.gold_answer; });
    if (!gold_is_label) ctx.fail("gold_answer", "not one of the option labels");
  }
  item.candidates = parse_candidates(ctx, obj, item.task_type);
  return item;
}

std::string optional_id(const RecordContext& ctx, const json& obj,
                        std::string_view prefix) {
  auto it = obj.find("id");
  if (it == obj.end()) return std::string(prefix) + "-" + std::to_string(ctx.line);
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  ctx.fail("id", "expected a string or integer");
}

BenchmarkItem parse_gsm8k(const RecordContext& ctx, const json& obj) {
  BenchmarkItem item;
  item.item_id = optional_id(ctx, obj, "gsm8k");
  item.question = ctx.require_string(obj, "question");
  item.task_type = TaskType::open_ended;
  const std::string answer = ctx.require_string(obj, "answer");
  const auto marker = answer.rfind("####");
  if (marker == std::string::npos) ctx.fail("answer", "no '####' gold marker");
  item.gold_answer = trimmed(std::string_view(answer).substr(marker + 4));
  if (item.gold_answer.empty()) ctx.fail("answer", "empty gold answer after '####'");
  item.candidates = parse_candidates(ctx, obj, item.task_type);
  return item;
}

BenchmarkItem parse_mcq(const RecordContext& ctx, const json& obj) {
  static constexpr std::string_view kLabels = "ABCDEFGHIJ";
  BenchmarkItem item;
  item.item_id = optional_id(ctx, obj, "mcq");
  item.question = ctx.require_string(obj, "question");
  item.task_type = TaskType::multiple_choice;
  const json& choices = ctx.require(obj, "choices");
  if (!choices.is_array() || choices.empty() || choices.size() > kLabels.size()) {
    ctx.fail("choices", "expected 1-10 strings");
  }
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (!choices[i].is_string()) ctx.fail("choices", "expected strings");
    item.options.push_back({std::string(1, kLabels[i]), choices[i].get<std::string>()});
  }
  const json& answer = ctx.require(obj, "answer");
  if (answer.is_number_integer()) {
    const auto idx = answer.get<long long>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= choices.size()) {
      ctx.fail("answer", "index out of range");
    }
    item.gold_answer = std::string(1, kLabels[static_cast<std::size_t>(idx)]);
  } else if (answer.is_string()) {
    item.gold_answer = trimmed(answer.get<std::string>());
    if (item.gold_answer.size() != 1 ||
        kLabels.substr(0, choices.size()).find(item.gold_answer[0]) == std::string_view::npos) {
      ctx.fail("answer", "expected a label among the choices");
    }
  } else {
    ctx.fail("answer", "expected a label or an index");
  }
  item.candidates = parse_candidates(ctx, obj, item.task_type);
  return item;
}

}  // namespace

std::optional<BenchmarkFormat> parse_benchmark_format(std::string_view s) noexcept {
  if (s == "canonical" || s == "jsonl") return BenchmarkFormat::canonical;
  if (s == "gsm8k") return BenchmarkFormat::gsm8k;
  if (s == "mcq") return BenchmarkFormat::mcq;
  return std::nullopt;
}

std::vector<BenchmarkItem> read_benchmark(std::istream& in,
                                          std::string_view source,
                                          BenchmarkFormat format,
                                          const LoadOptions& opts) {
  std::vector<BenchmarkItem> items;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trimmed(line).empty()) continue;
    const RecordContext ctx{source, line_no};
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      ctx.fail("<record>", std::string("not valid JSON: ") + e.what());
    }
    if (!obj.is_object()) ctx.fail("<record>", "expected a JSON object");

    BenchmarkItem item;
    switch (format) {
      case BenchmarkFormat::canonical: item = parse_canonical(ctx, obj); break;
      case BenchmarkFormat::gsm8k: item = parse_gsm8k(ctx, obj); break;
      case BenchmarkFormat::mcq: item = parse_mcq(ctx, obj); break;
    }
    if (opts.require_candidates && item.candidates.empty()) {
      ctx.fail("candidates", "at least one candidate is required");
    }
    if (!seen.insert(item.item_id).second) {
      ctx.fail("item_id", "duplicate item_id '" + item.item_id + "'");
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path,
                                          BenchmarkFormat format,
                                          const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open benchmark file " + path.string());
  return read_benchmark(in, path.string(), format, opts);
}

void write_benchmark(std::ostream& out, const std::vector<BenchmarkItem>& items) {
  for (const auto& item : items) {
    json obj = {
        {"item_id", item.item_id},
        {"question", item.question},
        {"task_type", std::string(to_string(item.task_type))},
        {"gold_answer", item.gold_answer},
    };
    if (item.task_type == TaskType::multiple_choice) {
      json opts = json::array();
      for (const auto& o : item.options) opts.push_back({{"label", o.label}, {"text", o.text}});
      obj["options"] = std::move(opts);
    }
    json cands = json::array();
    for (const auto& c : item.candidates) {
      json cj = {{"text", c.raw_text}};
      if (c.final_answer) cj["final_answer"] = *c.final_answer;
      cands.push_back(std::move(cj));
    }
    obj["candidates"] = std::move(cands);
    out << obj.dump() << '\n';
  }
}

void save_benchmark(const std::filesystem::path& path,
                    const std::vector<BenchmarkItem>& items) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write benchmark file " + path.string());
  write_benchmark(out, items);
}

}  // namespace ccb
