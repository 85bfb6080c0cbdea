#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include "ccb/scoring_backend.hpp"

namespace ccb {

/// Content address of one score call: SHA-256 over the length-prefixed
/// (backend id, model fingerprint, context, continuation, needs, top-p).
struct CacheKey {
  std::string digest;  // 32 raw bytes

  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

CacheKey make_cache_key(std::string_view backend_id, std::string_view fingerprint,
                        const ScoreRequest& request);

struct CacheStats {
  std::size_t entries = 0;
  std::size_t dead = 0;
  std::uintmax_t bytes = 0;
  std::size_t quarantined = 0;
  std::map<std::string, std::size_t> per_fingerprint;
};

struct VerifyResult {
  std::size_t checked = 0;
  std::size_t quarantined = 0;
  /// Bytes of an unparseable tail (crash remnant) that were quarantined.
  std::uintmax_t truncated_bytes = 0;
};

struct GcResult {
  std::size_t kept = 0;
  std::size_t deleted = 0;
};

/// Persistent score cache: one append-only log plus an in-memory index.
///
/// Record layout (little-endian):
///   u32 magic | u32 payload_len | key[32] | payload | sha256(key||payload)[32]
/// Appends happen under an exclusive flock in a single write, so other
/// processes never index a half-written record. A record whose checksum no
/// longer matches is a miss: it is copied to quarantine.log, its magic is
/// overwritten with a tombstone, and a warning is logged.
///
/// Thread-safe: lookups share a lock, writers and maintenance are exclusive.
class ScoreCache {
 public:
  explicit ScoreCache(std::filesystem::path dir);
  ~ScoreCache();
  ScoreCache(const ScoreCache&) = delete;
  ScoreCache& operator=(const ScoreCache&) = delete;

  /// $CCB_CACHE_DIR, else ".ccb-cache" in the working directory.
  static std::filesystem::path default_dir();

  std::optional<ScoreResponse> lookup(const CacheKey& key);
  /// First write for a key wins; later stores of the same key are no-ops.
  void store(const CacheKey& key, const ScoreResponse& response);

  CacheStats stats();
  /// Re-checks every record, quarantining the corrupt ones.
  VerifyResult verify();
  /// Drops records whose model fingerprint is not in `known`.
  GcResult gc(const std::set<std::string>& known_fingerprints);

  const std::filesystem::path& dir() const noexcept { return dir_; }
  std::filesystem::path log_path() const { return dir_ / "scores.log"; }
  std::filesystem::path quarantine_path() const { return dir_ / "quarantine.log"; }

 private:
  struct Slot {
    std::uint64_t offset = 0;
    std::uint32_t payload_len = 0;
  };

  void open_log();
  void scan_from(std::uint64_t offset, bool truncate_torn_tail);
  bool read_record(const Slot& slot, std::string& key, std::string& payload,
                   bool& checksum_ok) const;
  void quarantine_record(const Slot& slot);
  void rebuild_index();

  std::filesystem::path dir_;
  int fd_ = -1;
  std::shared_mutex mu_;
  std::unordered_map<std::string, Slot> index_;
  std::uint64_t indexed_end_ = 0;
  std::size_t dead_ = 0;
};

/// Wraps a backend so every score call goes through a ScoreCache. Numbers
/// are returned exactly as stored.
class CachingBackend final : public ScoringBackend {
 public:
  CachingBackend(BackendPtr inner, std::shared_ptr<ScoreCache> cache);

  const std::string& id() const override { return inner_->id(); }
  BackendInfo info() const override { return inner_->info(); }
  ScoreResponse score(const ScoreRequest& request) const override;
  std::string sample(std::string_view context, const SampleParams& params) const override {
    return inner_->sample(context, params);
  }

 private:
  BackendPtr inner_;
  std::shared_ptr<ScoreCache> cache_;
  std::string fingerprint_;
};

}  // namespace ccb
