#include "ccb/rewriter.hpp"

#include <cctype>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "ccb/errors.hpp"

namespace ccb {

const std::string_view kDefaultParaphrasePrompt =
    "Paraphrase the following reasoning sentence.\n"
    "\n"
    "Rules:\n"
    "1. Preserve all mathematical meaning and symbols.\n"
    "2. Keep logical relationships intact.\n"
    "3. Make the wording formal and clear.\n"
    "4. Change phrasing, syntax, and structure as much as possible.\n"
    "5. Output only one rewritten sentence.\n"
    "\n"
    "Sentence:\n"
    "{sentence}";

namespace {
constexpr std::string_view kPlaceholder = "{sentence}";

bool is_word(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
         static_cast<unsigned char>(c) >= 0x80;
}
}  // namespace

void RewriterConfig::validate() const {
  if (prompt_template.find(kPlaceholder) == std::string::npos) {
    throw ConfigError("rewriter prompt_template lacks the {sentence} placeholder");
  }
  if (max_retries < 0) throw ConfigError("rewriter max_retries must be >= 0");
  if (endpoint.empty() && mock != "identity" && mock != "synonyms") {
    throw ConfigError("unknown mock rewriter '" + mock + "'");
  }
}

std::string RewriterConfig::render(std::string_view sentence) const {
  std::string out = prompt_template;
  const auto pos = out.find(kPlaceholder);
  out.replace(pos, kPlaceholder.size(), sentence);
  return out;
}

std::string SynonymRewriter::rewrite(std::string_view s) const {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!is_word(s[i])) {
      out.push_back(s[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_word(s[j])) ++j;
    const std::string word(s.substr(i, j - i));
    auto it = table_.find(word);
    out += it == table_.end() ? word : it->second;
    i = j;
  }
  return out;
}

ChatRewriter::ChatRewriter(RewriterConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto scheme = config_.endpoint.find("://");
  if (config_.endpoint.rfind("http://", 0) != 0 || scheme == std::string::npos) {
    throw ConfigError("rewriter endpoint must be an http:// URL");
  }
  const auto slash = config_.endpoint.find('/', scheme + 3);
  origin_ = config_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/v1/chat/completions" : config_.endpoint.substr(slash);
}

std::string ChatRewriter::rewrite(std::string_view sentence) const {
  const nlohmann::json body = {
      {"model", config_.model_name},
      {"temperature", config_.temperature},
      {"messages", {{{"role", "user"}, {"content", config_.render(sentence)}}}},
  };
  httplib::Client client(origin_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  httplib::Headers headers;
  if (const char* key = std::getenv("CCB_REWRITER_KEY"); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw TransportError("rewriter: " + httplib::to_string(res.error()), 1, 0);
  if (res->status != 200) {
    throw TransportError("rewriter: HTTP " + std::to_string(res->status), 1, res->status);
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("rewriter reply: ") + e.what());
  }
}

std::unique_ptr<Rewriter> make_rewriter(const RewriterConfig& config) {
  config.validate();
  if (!config.endpoint.empty()) return std::make_unique<ChatRewriter>(config);
  if (config.mock == "synonyms") return std::make_unique<SynonymRewriter>(config.synonyms);
  return std::make_unique<IdentityRewriter>();
}

}  // namespace ccb
