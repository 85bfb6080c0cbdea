#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace ccb {

/// Instruction block sent ahead of each step; "{sentence}" marks where the
/// step text goes.
extern const std::string_view kDefaultParaphrasePrompt;

struct RewriterConfig {
  /// Full URL of a chat-completions endpoint, e.g.
  /// http://localhost:8000/v1/chat/completions. Empty selects a mock.
  std::string endpoint;
  std::string model_name;
  std::string prompt_template{kDefaultParaphrasePrompt};
  double temperature = 0.0;
  int max_retries = 2;
  /// For endpoint-less configs: "identity" or "synonyms".
  std::string mock = "identity";
  std::map<std::string, std::string> synonyms;
  std::chrono::seconds timeout{60};

  /// Throws ConfigError when the template lacks "{sentence}".
  void validate() const;
  std::string render(std::string_view sentence) const;
};

/// Rewrites one sentence. Implementations are thread-safe.
class Rewriter {
 public:
  virtual ~Rewriter() = default;
  virtual std::string name() const = 0;
  /// Returns the raw reply; callers check it is a single sentence.
  virtual std::string rewrite(std::string_view sentence) const = 0;
};

class IdentityRewriter final : public Rewriter {
 public:
  std::string name() const override { return "identity"; }
  std::string rewrite(std::string_view sentence) const override { return std::string(sentence); }
};

/// Whole-word substitution from a fixed table (case-sensitive).
class SynonymRewriter final : public Rewriter {
 public:
  explicit SynonymRewriter(std::map<std::string, std::string> table) : table_(std::move(table)) {}
  std::string name() const override { return "synonyms"; }
  std::string rewrite(std::string_view sentence) const override;

 private:
  std::map<std::string, std::string> table_;
};

/// Chat-completion client: one user message holding the rendered prompt,
/// bearer token from $CCB_REWRITER_KEY when set. Transport failures throw.
class ChatRewriter final : public Rewriter {
 public:
  explicit ChatRewriter(RewriterConfig config);
  std::string name() const override { return "chat:" + config_.model_name; }
  std::string rewrite(std::string_view sentence) const override;

 private:
  RewriterConfig config_;
  std::string origin_;
  std::string path_;
};

std::unique_ptr<Rewriter> make_rewriter(const RewriterConfig& config);

}  // namespace ccb
