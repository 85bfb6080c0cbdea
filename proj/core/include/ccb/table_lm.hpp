#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ccb/scoring_backend.hpp"

namespace ccb {

inline constexpr std::string_view kUnkSymbol = "<unk>";
inline constexpr std::string_view kBosSymbol = "<s>";
inline constexpr std::string_view kEosSymbol = "</s>";

/// A finite-context language model given as an explicit table.
///
/// Text form:
///
///     # comment
///     vocab a b c . <unk> </s>
///     order 1
///     <s> 0.5 0.5 0 0 0 0
///     a   1/4 1/4 1/4 1/4 0 0
///     0.2 0.2 0.2 0.2 0.1 0.1
///
/// Each row lists up to `order` context symbols followed by exactly V
/// probabilities (decimal or p/q). `<s>` may only open a context and marks
/// the start of the sequence. A row with no context symbols is the backoff
/// for any history; with no matching row the distribution is uniform.
/// The vocabulary must contain `<unk>`; `</s>` is optional and stops sampling.
struct TableLMFixture {
  std::vector<std::string> vocabulary;
  std::size_t context_order = 0;
  /// Context suffix (symbols, `<s>` allowed first) -> distribution over V.
  std::map<std::vector<std::string>, std::vector<double>> table;

  /// Throws FormatError (line 0) on any broken invariant: rows must be
  /// non-negative, sum to 1 within 1e-12, have V entries, and reference
  /// known symbols.
  void validate() const;

  /// Canonical text form; parse(serialize()) reproduces the fixture.
  std::string serialize() const;

  static TableLMFixture parse(std::istream& in, std::string_view source);
  static TableLMFixture parse(std::string_view text);
  static TableLMFixture load(const std::filesystem::path& path);
};

/// Deterministic evaluator/generator over a TableLMFixture.
///
/// Tokenization: text is split at whitespace; inside a chunk, runs of word
/// characters (alphanumerics, '_', non-ASCII bytes) form one piece, and at
/// any other byte the longest vocabulary symbol starting there is taken
/// (else the single byte). Each token carries its leading whitespace, and
/// trailing whitespace of the text goes to the last token. Context and
/// continuation are tokenized separately. Pieces outside the vocabulary
/// score as `<unk>`.
class TableLM final : public ScoringBackend {
 public:
  struct Token {
    std::string text;
    std::string piece;
    int symbol = 0;
  };

  TableLM(std::string id, TableLMFixture fixture);
  static std::shared_ptr<TableLM> from_file(std::string id,
                                            const std::filesystem::path& path);

  const std::string& id() const override { return id_; }
  BackendInfo info() const override;
  ScoreResponse score(const ScoreRequest& request) const override;
  std::string sample(std::string_view context,
                     const SampleParams& params) const override;

  const TableLMFixture& fixture() const noexcept { return fixture_; }
  std::size_t vocab_size() const noexcept { return fixture_.vocabulary.size(); }
  std::vector<Token> tokenize(std::string_view text) const;

  /// Next-symbol distribution after `history` (symbol ids; kBos = -1).
  std::span<const double> distribution(std::span<const int> history) const;

  static constexpr int kBos = -1;

 private:
  struct Row {
    std::vector<double> probs;
    std::vector<double> logs;
    double entropy = 0.0;
    double mean_log = 0.0;
  };

  const Row& row_for(std::span<const int> history) const;
  std::vector<int> history_of(std::string_view context) const;
  int symbol_id(std::string_view piece) const;

  std::string id_;
  TableLMFixture fixture_;
  std::string fingerprint_;
  std::unordered_map<std::string, int> symbol_ids_;
  std::map<std::vector<int>, Row> rows_;
  Row uniform_;
  int unk_ = 0;
  int eos_ = -2;
};

/// Entropy (nats) of the smallest highest-probability nucleus with mass at
/// least `top_p`, renormalized. top_p = 1 gives the full entropy.
double top_p_entropy(std::span<const double> probs, double top_p);

}  // namespace ccb
