#include "ccb/remote_backend.hpp"

#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ccb/errors.hpp"
#include "ccb/wire.hpp"

namespace ccb {
namespace {

bool retryable(int status) { return status == 0 || status == 429 || status >= 500; }

[[noreturn]] void raise_remote_error(int status, const std::string& body) {
  std::string code = "http_" + std::to_string(status);
  std::string message = body;
  try {
    const auto j = nlohmann::json::parse(body);
    const auto& err = j.at("error");
    code = err.at("code").get<std::string>();
    message = err.value("message", "");
  } catch (const std::exception&) {
    // Non-conforming error body; keep the raw text.
  }
  if (code == "empty_continuation") throw EmptyContinuationError();
  throw RemoteError(status, code, message);
}

}  // namespace

RemoteBackend::RemoteBackend(std::string id, std::string base_url, Options opts)
    : id_(std::move(id)), opts_(opts) {
  const auto scheme = base_url.find("://");
  const auto path_start = base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) {
    origin_ = base_url;
  } else {
    origin_ = base_url.substr(0, path_start);
    prefix_ = base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
  if (origin_.rfind("http://", 0) != 0) {
    throw ConfigError("remote backend '" + id_ + "': only http:// URLs are supported, got '" +
                      base_url + "'");
  }
}

RemoteBackend::HttpResult RemoteBackend::call(const std::string& method,
                                              const std::string& path,
                                              const std::string& body) const {
  auto backoff = opts_.retry.initial_backoff;
  HttpResult last;
  std::string last_error;
  const int attempts = opts_.retry.max_retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client client(origin_);
    client.set_connection_timeout(opts_.timeout);
    client.set_read_timeout(opts_.timeout);
    client.set_write_timeout(opts_.timeout);
    const std::string full = prefix_ + path;
    auto res = method == "POST" ? client.Post(full, body, "application/json")
                                : client.Get(full);
    if (res) {
      last = {res->status, res->body};
      if (!retryable(res->status)) return last;
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      last = {0, {}};
      last_error = httplib::to_string(res.error());
    }
    if (attempt < attempts) {
      spdlog::warn("{} {}{} failed ({}); retry {}/{} in {} ms", method, origin_, full,
                   last_error, attempt, opts_.retry.max_retries, backoff.count());
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<long long>(
          static_cast<double>(backoff.count()) * opts_.retry.backoff_multiplier));
    }
  }
  throw TransportError("backend '" + id_ + "' " + method + " " + path + ": " + last_error,
                       attempts, last.status);
}

BackendInfo RemoteBackend::info() const {
  std::lock_guard lock(info_mu_);
  if (!info_) {
    const auto r = call("GET", "/v1/info", {});
    if (r.status != 200) raise_remote_error(r.status, r.body);
    info_ = wire::decode_info(r.body);
  }
  return *info_;
}

ScoreResponse RemoteBackend::score(const ScoreRequest& request) const {
  request.validate();
  const auto r = call("POST", "/v1/score", wire::encode_request(request));
  if (r.status != 200) raise_remote_error(r.status, r.body);
  return wire::decode_response(r.body, request.continuation);
}

}  // namespace ccb
