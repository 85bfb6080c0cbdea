#pragma once

#include <chrono>
#include <mutex>
#include <optional>
#include <string>

#include "ccb/scoring_backend.hpp"

namespace ccb {

struct RetryPolicy {
  /// Extra attempts after the first one.
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{100};
  double backoff_multiplier = 2.0;
};

/// Client for a scorer speaking the /v1/score protocol over HTTP.
///
/// Connection failures, 5xx and 429 responses are retried with exponential
/// backoff; exhaustion raises TransportError carrying the attempt count and
/// last status. Other 4xx responses raise RemoteError (or
/// EmptyContinuationError for code "empty_continuation") without retrying.
/// Every response is validated by wire::check_response.
class RemoteBackend final : public ScoringBackend {
 public:
  struct Options {
    RetryPolicy retry;
    std::chrono::seconds timeout{60};
  };

  /// `base_url` is "http://host:port" optionally followed by a path prefix.
  RemoteBackend(std::string id, std::string base_url, Options opts);
  RemoteBackend(std::string id, std::string base_url)
      : RemoteBackend(std::move(id), std::move(base_url), Options{}) {}

  const std::string& id() const override { return id_; }
  BackendInfo info() const override;
  ScoreResponse score(const ScoreRequest& request) const override;

 private:
  struct HttpResult {
    int status = 0;
    std::string body;
  };
  HttpResult call(const std::string& method, const std::string& path,
                  const std::string& body) const;

  std::string id_;
  std::string origin_;
  std::string prefix_;
  Options opts_;
  mutable std::mutex info_mu_;
  mutable std::optional<BackendInfo> info_;
};

}  // namespace ccb
