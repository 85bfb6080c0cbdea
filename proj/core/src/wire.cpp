#include "ccb/wire.hpp"

#include <cmath>

#include <httplib.h>
#include <json.hpp>

#include "ccb/errors.hpp"

namespace ccb::wire {
namespace {

using nlohmann::json;

// Slack for float noise in a peer's reductions (e.g. entropy a few ulps
// above log V). Anything beyond it is a contract violation.
constexpr double kNumericSlack = 1e-9;

json parse_object(std::string_view body, const char* what) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string(what) + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ProtocolError(std::string(what) + " is not a JSON object");
  return j;
}

const json& field(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end()) throw ProtocolError(std::string("missing field '") + name + "'");
  return *it;
}

double number(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_number()) throw ProtocolError(std::string("field '") + name + "' is not a number");
  return v.get<double>();
}

std::size_t count(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ProtocolError(std::string("field '") + name + "' is not a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::string string_field(const json& obj, const char* name) {
  const json& v = field(obj, name);
  if (!v.is_string()) throw ProtocolError(std::string("field '") + name + "' is not a string");
  return v.get<std::string>();
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw ProtocolError(std::string(what) + " is not finite and cannot be encoded");
  }
}

}  // namespace

std::string encode_request(const ScoreRequest& request) {
  json j = {
      {"context", request.context},
      {"continuation", request.continuation},
      {"needs", request.needs.names()},
  };
  if (request.entropy_top_p) j["entropy_top_p"] = *request.entropy_top_p;
  return j.dump();
}

ScoreRequest decode_request(std::string_view body) {
  const json j = parse_object(body, "request");
  ScoreRequest r;
  r.context = string_field(j, "context");
  r.continuation = string_field(j, "continuation");
  const json& needs = field(j, "needs");
  if (!needs.is_array()) throw ProtocolError("field 'needs' is not an array");
  std::vector<std::string> names;
  for (const auto& n : needs) {
    if (!n.is_string()) throw ProtocolError("field 'needs' holds a non-string");
    names.push_back(n.get<std::string>());
  }
  r.needs = Needs::from_names(names);
  if (auto it = j.find("top_k"); it != j.end() && !it->is_null() && !it->is_number_integer()) {
    throw ProtocolError("field 'top_k' is not an integer");
  }
  if (auto it = j.find("entropy_top_p"); it != j.end() && !it->is_null()) {
    if (!it->is_number()) throw ProtocolError("field 'entropy_top_p' is not a number");
    r.entropy_top_p = it->get<double>();
  }
  return r;
}

std::string encode_response(const ScoreResponse& response) {
  json tokens = json::array();
  for (const auto& t : response.tokens) {
    require_finite(t.realized_logprob, "realized_logprob");
    require_finite(t.entropy, "entropy");
    require_finite(t.mean_vocab_logprob, "mean_vocab_logprob");
    tokens.push_back({{"token_text", t.token_text},
                      {"realized_logprob", t.realized_logprob},
                      {"entropy", t.entropy},
                      {"mean_vocab_logprob", t.mean_vocab_logprob}});
  }
  return json{{"tokens", std::move(tokens)},
              {"token_count", response.token_count},
              {"vocab_size", response.vocab_size},
              {"model_fingerprint", response.model_fingerprint}}
      .dump();
}

void check_response(const ScoreResponse& r, std::string_view continuation) {
  if (r.tokens.empty()) throw ProtocolError("response has no tokens");
  if (r.token_count != r.tokens.size()) {
    throw ProtocolError("token_count " + std::to_string(r.token_count) +
                        " != number of tokens " + std::to_string(r.tokens.size()));
  }
  if (r.vocab_size < 2) throw ProtocolError("vocab_size must be >= 2");
  const double log_v = std::log(static_cast<double>(r.vocab_size));
  std::string joined;
  for (std::size_t i = 0; i < r.tokens.size(); ++i) {
    const auto& t = r.tokens[i];
    const std::string where = "token " + std::to_string(i) + ": ";
    if (std::isnan(t.realized_logprob) || t.realized_logprob > kNumericSlack) {
      throw ProtocolError(where + "realized_logprob must be <= 0");
    }
    if (!(t.entropy >= -kNumericSlack) || t.entropy > log_v + kNumericSlack) {
      throw ProtocolError(where + "entropy outside [0, log V]");
    }
    if (std::isnan(t.mean_vocab_logprob) || t.mean_vocab_logprob > kNumericSlack) {
      throw ProtocolError(where + "mean_vocab_logprob must be <= 0");
    }
    joined += t.token_text;
  }
  if (joined != continuation) {
    throw ProtocolError("token texts do not reconstruct the continuation");
  }
}

ScoreResponse decode_response(std::string_view body, std::string_view continuation) {
  const json j = parse_object(body, "response");
  ScoreResponse r;
  const json& tokens = field(j, "tokens");
  if (!tokens.is_array()) throw ProtocolError("field 'tokens' is not an array");
  for (const auto& t : tokens) {
    if (!t.is_object()) throw ProtocolError("token entry is not an object");
    TokenScore ts;
    ts.token_text = string_field(t, "token_text");
    ts.realized_logprob = number(t, "realized_logprob");
    ts.entropy = number(t, "entropy");
    ts.mean_vocab_logprob = number(t, "mean_vocab_logprob");
    r.tokens.push_back(std::move(ts));
  }
  r.token_count = count(j, "token_count");
  r.vocab_size = count(j, "vocab_size");
  r.model_fingerprint = string_field(j, "model_fingerprint");
  check_response(r, continuation);
  return r;
}

std::string encode_info(const BackendInfo& info) {
  return json{{"model_fingerprint", info.model_fingerprint},
              {"vocab_size", info.vocab_size},
              {"max_context", info.max_context}}
      .dump();
}

BackendInfo decode_info(std::string_view body) {
  const json j = parse_object(body, "info");
  BackendInfo info;
  info.model_fingerprint = string_field(j, "model_fingerprint");
  info.vocab_size = count(j, "vocab_size");
  info.max_context = count(j, "max_context");
  if (info.vocab_size < 2) throw ProtocolError("vocab_size must be >= 2");
  return info;
}

std::string encode_error(std::string_view code, std::string_view message) {
  return json{{"error", {{"code", code}, {"message", message}}}}.dump();
}

Reply ScoreService::handle_score(std::string_view body) const {
  ScoreRequest req;
  try {
    req = decode_request(body);
    req.validate();
  } catch (const ProtocolError& e) {
    return {400, encode_error("bad_request", e.what())};
  } catch (const std::invalid_argument& e) {
    return {400, encode_error("invalid_request", e.what())};
  }
  try {
    return {200, encode_response(backend_.score(req))};
  } catch (const EmptyContinuationError& e) {
    return {400, encode_error("empty_continuation", e.what())};
  } catch (const ProtocolError& e) {
    return {422, encode_error("unrepresentable", e.what())};
  } catch (const std::exception& e) {
    return {500, encode_error("internal", e.what())};
  }
}

Reply ScoreService::handle_info() const {
  return {200, encode_info(backend_.info())};
}

void bind_routes(httplib::Server& server, const ScoreService& service) {
  server.Post("/v1/score", [&service](const httplib::Request& req, httplib::Response& res) {
    const Reply r = service.handle_score(req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  server.Get("/v1/info", [&service](const httplib::Request&, httplib::Response& res) {
    const Reply r = service.handle_info();
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
}

}  // namespace ccb::wire
