#pragma once

#include <string>
#include <string_view>

#include "ccb/scoring_backend.hpp"

namespace httplib {
class Server;
}

/// JSON codec and HTTP binding for the scoring protocol:
///
///   POST /v1/score  {context, continuation, needs: [...], top_k?, entropy_top_p?}
///     -> {tokens: [{token_text, realized_logprob, entropy, mean_vocab_logprob}],
///         token_count, vocab_size, model_fingerprint}
///   GET  /v1/info   -> {model_fingerprint, vocab_size, max_context}
///
/// Errors are non-2xx with {error: {code, message}}.
namespace ccb::wire {

std::string encode_request(const ScoreRequest& request);
/// Throws ProtocolError on a schema violation.
ScoreRequest decode_request(std::string_view body);

/// Throws ProtocolError if the response holds non-finite numbers, which the
/// JSON encoding cannot carry.
std::string encode_response(const ScoreResponse& response);

/// Parses and checks a response against `continuation`: token_count matches
/// the token list and is positive, token texts concatenate to the
/// continuation, vocab_size >= 2, realized_logprob <= 0, entropy within
/// [0, log V], mean_vocab_logprob <= 0. Any violation is a ProtocolError;
/// nothing is repaired.
ScoreResponse decode_response(std::string_view body, std::string_view continuation);

/// Same checks on an already-decoded response.
void check_response(const ScoreResponse& response, std::string_view continuation);

std::string encode_info(const BackendInfo& info);
BackendInfo decode_info(std::string_view body);

std::string encode_error(std::string_view code, std::string_view message);

/// Result of handling one request in-process: HTTP status plus JSON body.
struct Reply {
  int status = 200;
  std::string body;
};

/// Serves the protocol on top of any backend. Used by the HTTP binding and
/// directly by tests.
class ScoreService {
 public:
  explicit ScoreService(const ScoringBackend& backend) : backend_(backend) {}

  Reply handle_score(std::string_view body) const;
  Reply handle_info() const;

 private:
  const ScoringBackend& backend_;
};

/// Registers /v1/score and /v1/info on `server`. `service` must outlive it.
void bind_routes(httplib::Server& server, const ScoreService& service);

}  // namespace ccb::wire
