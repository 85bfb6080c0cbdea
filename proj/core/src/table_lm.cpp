#include "ccb/table_lm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "ccb/digest.hpp"
#include "ccb/errors.hpp"

namespace ccb {
namespace {

constexpr double kRowSumTolerance = 1e-12;

bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_word(char c) noexcept {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) || c == '_';
}

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_probability(const std::string& tok, std::string_view source,
                         std::size_t line) {
  auto parse_double = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size()) {
      throw FormatError(std::string(source), line, "probability",
                        "not a number: '" + tok + "'");
    }
    return v;
  };
  const auto slash = tok.find('/');
  if (slash == std::string::npos) return parse_double(tok);
  const double num = parse_double(tok.substr(0, slash));
  const double den = parse_double(tok.substr(slash + 1));
  if (den == 0.0) {
    throw FormatError(std::string(source), line, "probability", "zero denominator");
  }
  return num / den;
}

double entropy_of(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double mean_log_of(std::span<const double> probs) {
  double s = 0.0;
  for (double p : probs) s += std::log(p);  // log 0 = -inf propagates
  return s / static_cast<double>(probs.size());
}

bool all_equal(std::span<const double> probs) {
  return std::adjacent_find(probs.begin(), probs.end(),
                            std::not_equal_to<>()) == probs.end();
}

}  // namespace

double top_p_entropy(std::span<const double> probs, double top_p) {
  if (top_p >= 1.0) return entropy_of(probs);
  std::vector<double> sorted(probs.begin(), probs.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < sorted.size() && mass < top_p) mass += sorted[keep++];
  double h = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    const double q = sorted[i] / mass;
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

// --- fixture ----------------------------------------------------------------

void TableLMFixture::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw FormatError("<fixture>", 0, field, what);
  };
  const std::size_t v = vocabulary.size();
  if (v < 2) fail("vocab", "needs at least two symbols");
  std::vector<std::string> sorted = vocabulary;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    fail("vocab", "duplicate symbol");
  }
  if (!std::binary_search(sorted.begin(), sorted.end(), std::string(kUnkSymbol))) {
    fail("vocab", "must contain <unk>");
  }
  if (std::binary_search(sorted.begin(), sorted.end(), std::string(kBosSymbol))) {
    fail("vocab", "<s> is a context-only symbol");
  }
  for (const auto& [ctx, probs] : table) {
    if (ctx.size() > context_order) fail("row", "context longer than order");
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      if (ctx[i] == kBosSymbol) {
        if (i != 0) fail("row", "<s> may only open a context");
      } else if (!std::binary_search(sorted.begin(), sorted.end(), ctx[i])) {
        fail("row", "unknown context symbol '" + ctx[i] + "'");
      }
    }
    if (probs.size() != v) fail("row", "expected " + std::to_string(v) + " probabilities");
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) fail("row", "negative or non-finite probability");
      sum += p;
    }
    if (std::fabs(sum - 1.0) > kRowSumTolerance) fail("row", "probabilities do not sum to 1");
  }
}

std::string TableLMFixture::serialize() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "vocab";
  for (const auto& s : vocabulary) out << ' ' << s;
  out << "\norder " << context_order << '\n';
  for (const auto& [ctx, probs] : table) {
    bool first = true;
    for (const auto& s : ctx) {
      out << (first ? "" : " ") << s;
      first = false;
    }
    for (double p : probs) {
      out << (first ? "" : " ") << p;
      first = false;
    }
    out << '\n';
  }
  return out.str();
}

TableLMFixture TableLMFixture::parse(std::istream& in, std::string_view source) {
  TableLMFixture fx;
  bool have_vocab = false;
  bool have_order = false;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& field, const std::string& what) {
    throw FormatError(std::string(source), line_no, field, what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    auto toks = split_ws(line);
    // Whole-line comments only: "####" is a legal symbol.
    if (toks.empty() || toks[0] == "#") continue;
    if (toks[0] == "vocab") {
      if (have_vocab) fail("vocab", "declared twice");
      fx.vocabulary.assign(toks.begin() + 1, toks.end());
      have_vocab = true;
      continue;
    }
    if (toks[0] == "order") {
      if (toks.size() != 2) fail("order", "expected one integer");
      try {
        fx.context_order = std::stoul(toks[1]);
      } catch (const std::exception&) {
        fail("order", "expected one integer");
      }
      have_order = true;
      continue;
    }
    if (!have_vocab || !have_order) fail("header", "rows must follow 'vocab' and 'order'");
    const std::size_t v = fx.vocabulary.size();
    if (toks.size() < v) fail("row", "expected " + std::to_string(v) + " probabilities");
    const std::size_t n_ctx = toks.size() - v;
    if (n_ctx > fx.context_order) fail("row", "context longer than order");
    std::vector<std::string> ctx(toks.begin(), toks.begin() + static_cast<long>(n_ctx));
    std::vector<double> probs;
    probs.reserve(v);
    for (std::size_t i = n_ctx; i < toks.size(); ++i) {
      probs.push_back(parse_probability(toks[i], source, line_no));
    }
    if (!fx.table.emplace(std::move(ctx), std::move(probs)).second) {
      fail("row", "duplicate context");
    }
  }
  if (!have_vocab) fail("vocab", "missing header");
  if (!have_order) fail("order", "missing header");
  try {
    fx.validate();
  } catch (const FormatError& e) {
    throw FormatError(std::string(source), e.line(), e.field(), e.what());
  }
  return fx;
}

TableLMFixture TableLMFixture::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse(in, "<string>");
}

TableLMFixture TableLMFixture::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open fixture " + path.string());
  return parse(in, path.string());
}

// --- model ------------------------------------------------------------------

TableLM::TableLM(std::string id, TableLMFixture fixture)
    : id_(std::move(id)), fixture_(std::move(fixture)) {
  fixture_.validate();
  const auto& vocab = fixture_.vocabulary;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    symbol_ids_.emplace(vocab[i], static_cast<int>(i));
  }
  unk_ = symbol_ids_.at(std::string(kUnkSymbol));
  if (auto it = symbol_ids_.find(std::string(kEosSymbol)); it != symbol_ids_.end()) {
    eos_ = it->second;
  }
  auto make_row = [](std::vector<double> probs) {
    Row r;
    if (all_equal(probs)) {
      // Closed forms keep uniform rows exact: H = -log p, mean log = log p.
      const auto n = static_cast<double>(probs.size());
      const double lp = probs[0] == 1.0 / n ? -std::log(n) : std::log(probs[0]);
      r.entropy = -lp;
      r.mean_log = lp;
      r.logs.assign(probs.size(), lp);
    } else {
      for (double p : probs) r.logs.push_back(std::log(p));
      r.entropy = entropy_of(probs);
      r.mean_log = mean_log_of(probs);
    }
    r.probs = std::move(probs);
    return r;
  };
  for (const auto& [ctx, probs] : fixture_.table) {
    std::vector<int> key;
    for (const auto& s : ctx) key.push_back(s == kBosSymbol ? kBos : symbol_ids_.at(s));
    rows_.emplace(std::move(key), make_row(probs));
  }
  uniform_ = make_row(std::vector<double>(vocab.size(), 1.0 / static_cast<double>(vocab.size())));
  fingerprint_ = "table:" + sha256_hex(fixture_.serialize()).substr(0, 16) + ":sos=<s>";
}

std::shared_ptr<TableLM> TableLM::from_file(std::string id,
                                            const std::filesystem::path& path) {
  return std::make_shared<TableLM>(std::move(id), TableLMFixture::load(path));
}

BackendInfo TableLM::info() const {
  return BackendInfo{fingerprint_, vocab_size(), std::size_t{1} << 20};
}

int TableLM::symbol_id(std::string_view piece) const {
  auto it = symbol_ids_.find(std::string(piece));
  return it == symbol_ids_.end() ? unk_ : it->second;
}

std::vector<TableLM::Token> TableLM::tokenize(std::string_view text) const {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const std::size_t lead = i;
    while (i < n && is_space(text[i])) ++i;
    if (i == n) {
      if (!out.empty()) out.back().text.append(text.substr(lead));
      break;
    }
    std::size_t j = i;
    if (is_word(text[i])) {
      while (j < n && is_word(text[j])) ++j;
    } else {
      std::size_t best = 0;
      for (const auto& sym : fixture_.vocabulary) {
        if (sym.size() > best && text.substr(i, sym.size()) == sym) best = sym.size();
      }
      j = i + std::max<std::size_t>(best, 1);
    }
    Token t;
    t.text = std::string(text.substr(lead, j - lead));
    t.piece = std::string(text.substr(i, j - i));
    t.symbol = symbol_id(t.piece);
    out.push_back(std::move(t));
    i = j;
  }
  // Leading whitespace with no piece after it (whitespace-only text) yields
  // no tokens at all.
  return out;
}

std::vector<int> TableLM::history_of(std::string_view context) const {
  std::vector<int> h{kBos};
  for (const auto& t : tokenize(context)) h.push_back(t.symbol);
  return h;
}

const TableLM::Row& TableLM::row_for(std::span<const int> history) const {
  const std::size_t max_len = std::min(fixture_.context_order, history.size());
  std::vector<int> key;
  for (std::size_t len = max_len + 1; len-- > 0;) {
    key.assign(history.end() - static_cast<long>(len), history.end());
    if (auto it = rows_.find(key); it != rows_.end()) return it->second;
  }
  return uniform_;
}

std::span<const double> TableLM::distribution(std::span<const int> history) const {
  return row_for(history).probs;
}

ScoreResponse TableLM::score(const ScoreRequest& request) const {
  request.validate();
  auto tokens = tokenize(request.continuation);
  if (tokens.empty()) throw EmptyContinuationError();
  std::vector<int> history = history_of(request.context);

  ScoreResponse resp;
  resp.vocab_size = vocab_size();
  resp.model_fingerprint = fingerprint_;
  resp.tokens.reserve(tokens.size());
  for (auto& t : tokens) {
    const Row& row = row_for(history);
    TokenScore ts;
    ts.token_text = std::move(t.text);
    ts.realized_logprob = row.logs[static_cast<std::size_t>(t.symbol)];
    ts.entropy = request.entropy_top_p ? top_p_entropy(row.probs, *request.entropy_top_p)
                                       : row.entropy;
    ts.mean_vocab_logprob = row.mean_log;
    resp.tokens.push_back(std::move(ts));
    history.push_back(t.symbol);
  }
  resp.token_count = resp.tokens.size();
  return resp;
}

std::string TableLM::sample(std::string_view context, const SampleParams& params) const {
  if (!params.greedy && !(params.temperature > 0.0)) {
    throw std::invalid_argument("temperature must be > 0");
  }
  std::mt19937_64 rng(params.seed);
  std::vector<int> history = history_of(context);
  std::string out;
  std::vector<double> weights(vocab_size());
  for (std::size_t step = 0; step < params.max_tokens; ++step) {
    const auto probs = distribution(history);
    std::size_t pick = 0;
    if (params.greedy) {
      pick = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    } else {
      // p^(1/T), scaled by the largest entry to stay in range.
      double max_log = -std::numeric_limits<double>::infinity();
      for (double p : probs) {
        if (p > 0.0) max_log = std::max(max_log, std::log(p));
      }
      double total = 0.0;
      for (std::size_t j = 0; j < probs.size(); ++j) {
        weights[j] = probs[j] > 0.0 ? std::exp((std::log(probs[j]) - max_log) / params.temperature) : 0.0;
        total += weights[j];
      }
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
      double acc = 0.0;
      pick = probs.size() - 1;
      while (pick > 0 && weights[pick] == 0.0) --pick;
      for (std::size_t j = 0; j < probs.size(); ++j) {
        acc += weights[j];
        if (u < acc && weights[j] > 0.0) {
          pick = j;
          break;
        }
      }
    }
    const int sym = static_cast<int>(pick);
    if (sym == eos_) break;
    const std::string& piece = fixture_.vocabulary[pick];
    const bool attach = piece.size() == 1 && std::string_view(".,!?;:)").find(piece[0]) != std::string_view::npos;
    if (!out.empty() && !attach) out.push_back(' ');
    out += piece;
    history.push_back(sym);
  }
  return out;
}

}  // namespace ccb
