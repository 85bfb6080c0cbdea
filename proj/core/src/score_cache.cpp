#include "ccb/score_cache.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <system_error>

#include <spdlog/spdlog.h>

#include "ccb/digest.hpp"
#include "ccb/errors.hpp"

namespace ccb {
namespace {

constexpr std::uint32_t kLiveMagic = 0x31424343;  // "CCB1"
constexpr std::uint32_t kDeadMagic = 0x44414544;  // "DEAD"
constexpr std::size_t kKeySize = 32;
constexpr std::size_t kSumSize = 32;
constexpr std::size_t kHeaderSize = 8;
// Anything larger is a corrupted length field, not a real response.
constexpr std::uint32_t kMaxPayload = 256u << 20;

std::size_t record_size(std::uint32_t payload_len) {
  return kHeaderSize + kKeySize + payload_len + kSumSize;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_str(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}
std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint32_t u32() { return get_u32(take(4)); }
  std::uint64_t u64() { return get_u64(take(8)); }
  std::string str() {
    const auto n = u32();
    return std::string(take(n), n);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const char* take(std::size_t n) {
    if (data_.size() - pos_ < n) throw std::runtime_error("truncated cache payload");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string encode_payload(const ScoreResponse& r) {
  std::string out;
  put_str(out, r.model_fingerprint);
  put_u64(out, r.vocab_size);
  put_u64(out, r.token_count);
  put_u32(out, static_cast<std::uint32_t>(r.tokens.size()));
  for (const auto& t : r.tokens) {
    put_str(out, t.token_text);
    put_u64(out, std::bit_cast<std::uint64_t>(t.realized_logprob));
    put_u64(out, std::bit_cast<std::uint64_t>(t.entropy));
    put_u64(out, std::bit_cast<std::uint64_t>(t.mean_vocab_logprob));
  }
  return out;
}

ScoreResponse decode_payload(std::string_view payload) {
  Reader in(payload);
  ScoreResponse r;
  r.model_fingerprint = in.str();
  r.vocab_size = in.u64();
  r.token_count = in.u64();
  const auto n = in.u32();
  r.tokens.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    TokenScore t;
    t.token_text = in.str();
    t.realized_logprob = std::bit_cast<double>(in.u64());
    t.entropy = std::bit_cast<double>(in.u64());
    t.mean_vocab_logprob = std::bit_cast<double>(in.u64());
    r.tokens.push_back(std::move(t));
  }
  if (!in.done()) throw std::runtime_error("trailing bytes in cache payload");
  return r;
}

std::string fingerprint_of(std::string_view payload) {
  Reader in(payload);
  return in.str();
}

[[noreturn]] void throw_errno(const std::string& what) {
  throw std::system_error(errno, std::generic_category(), what);
}

void write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("cache write");
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

bool pread_all(int fd, char* buf, std::size_t n, std::uint64_t offset) {
  while (n > 0) {
    const ssize_t r = ::pread(fd, buf, n, static_cast<off_t>(offset));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw_errno("cache read");
    }
    if (r == 0) return false;
    buf += r;
    n -= static_cast<std::size_t>(r);
    offset += static_cast<std::uint64_t>(r);
  }
  return true;
}

std::uint64_t file_size(int fd) {
  struct stat st {};
  if (::fstat(fd, &st) != 0) throw_errno("cache fstat");
  return static_cast<std::uint64_t>(st.st_size);
}

// flock held for a scope.
class FileLock {
 public:
  FileLock(int fd, int op) : fd_(fd) {
    while (::flock(fd_, op) != 0) {
      if (errno != EINTR) throw_errno("cache flock");
    }
  }
  ~FileLock() { ::flock(fd_, LOCK_UN); }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_;
};

void append_quarantine(const std::filesystem::path& path, std::string_view bytes) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw_errno("open " + path.string());
  std::string framed;
  put_u64(framed, bytes.size());
  framed.append(bytes);
  write_all(fd, framed);
  ::close(fd);
}

}  // namespace

CacheKey make_cache_key(std::string_view backend_id, std::string_view fingerprint,
                        const ScoreRequest& request) {
  std::string buf;
  put_str(buf, backend_id);
  put_str(buf, fingerprint);
  put_str(buf, request.context);
  put_str(buf, request.continuation);
  buf.push_back(static_cast<char>(request.needs.bits()));
  if (request.entropy_top_p) {
    buf.push_back(1);
    put_u64(buf, std::bit_cast<std::uint64_t>(*request.entropy_top_p));
  } else {
    buf.push_back(0);
  }
  return CacheKey{sha256_raw(buf)};
}

std::filesystem::path ScoreCache::default_dir() {
  if (const char* env = std::getenv("CCB_CACHE_DIR"); env && *env) return env;
  return ".ccb-cache";
}

ScoreCache::ScoreCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  open_log();
  FileLock lock(fd_, LOCK_EX);
  scan_from(0, /*truncate_torn_tail=*/true);
}

ScoreCache::~ScoreCache() {
  if (fd_ >= 0) ::close(fd_);
}

void ScoreCache::open_log() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = ::open(log_path().c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) throw_errno("open " + log_path().string());
}

// Caller holds mu_ exclusively and a flock on fd_.
void ScoreCache::scan_from(std::uint64_t offset, bool truncate_torn_tail) {
  const std::uint64_t size = file_size(fd_);
  char head[kHeaderSize + kKeySize];
  while (offset + sizeof head <= size) {
    if (!pread_all(fd_, head, sizeof head, offset)) break;
    const auto magic = get_u32(head);
    const auto len = get_u32(head + 4);
    if ((magic != kLiveMagic && magic != kDeadMagic) || len > kMaxPayload ||
        offset + record_size(len) > size) {
      break;
    }
    if (magic == kLiveMagic) {
      index_.try_emplace(std::string(head + kHeaderSize, kKeySize), Slot{offset, len});
    } else {
      ++dead_;
    }
    offset += record_size(len);
  }
  indexed_end_ = offset;
  if (truncate_torn_tail && offset < size) {
    std::string tail(size - offset, '\0');
    pread_all(fd_, tail.data(), tail.size(), offset);
    append_quarantine(quarantine_path(), tail);
    if (::ftruncate(fd_, static_cast<off_t>(offset)) != 0) throw_errno("cache truncate");
    spdlog::warn("score cache {}: quarantined {} bytes of unreadable tail", dir_.string(),
                 tail.size());
  }
}

bool ScoreCache::read_record(const Slot& slot, std::string& key, std::string& payload,
                             bool& checksum_ok) const {
  std::string buf(record_size(slot.payload_len), '\0');
  if (!pread_all(fd_, buf.data(), buf.size(), slot.offset)) return false;
  if (get_u32(buf.data()) != kLiveMagic) return false;
  key.assign(buf, kHeaderSize, kKeySize);
  payload.assign(buf, kHeaderSize + kKeySize, slot.payload_len);
  const std::string sum = buf.substr(kHeaderSize + kKeySize + slot.payload_len, kSumSize);
  checksum_ok = sha256_raw(key + payload) == sum;
  return true;
}

// Caller holds mu_ exclusively.
void ScoreCache::quarantine_record(const Slot& slot) {
  std::string bytes(record_size(slot.payload_len), '\0');
  pread_all(fd_, bytes.data(), bytes.size(), slot.offset);
  append_quarantine(quarantine_path(), bytes);
  std::string dead;
  put_u32(dead, kDeadMagic);
  // O_APPEND ignores pwrite offsets on Linux, so tombstone via a second fd.
  const int wfd = ::open(log_path().c_str(), O_WRONLY | O_CLOEXEC);
  if (wfd < 0) throw_errno("open " + log_path().string());
  if (::pwrite(wfd, dead.data(), dead.size(), static_cast<off_t>(slot.offset)) != 4) {
    ::close(wfd);
    throw_errno("cache tombstone");
  }
  ::close(wfd);
  for (auto it = index_.begin(); it != index_.end(); ++it) {
    if (it->second.offset == slot.offset) {
      index_.erase(it);
      break;
    }
  }
  ++dead_;
}

std::optional<ScoreResponse> ScoreCache::lookup(const CacheKey& key) {
  auto try_read = [&](const Slot& slot, bool& corrupt) -> std::optional<ScoreResponse> {
    std::string k, payload;
    bool ok = false;
    corrupt = false;
    if (!read_record(slot, k, payload, ok)) return std::nullopt;
    if (!ok || k != key.digest) {
      corrupt = true;
      return std::nullopt;
    }
    try {
      return decode_payload(payload);
    } catch (const std::exception&) {
      corrupt = true;
      return std::nullopt;
    }
  };

  {
    std::shared_lock lock(mu_);
    auto it = index_.find(key.digest);
    if (it != index_.end()) {
      bool corrupt = false;
      if (auto r = try_read(it->second, corrupt)) return r;
      if (!corrupt) return std::nullopt;
    }
  }

  std::unique_lock lock(mu_);
  auto it = index_.find(key.digest);
  if (it == index_.end()) {
    // Another process may have appended since we last looked.
    FileLock flock_guard(fd_, LOCK_SH);
    scan_from(indexed_end_, false);
    it = index_.find(key.digest);
    if (it == index_.end()) return std::nullopt;
  }
  bool corrupt = false;
  if (auto r = try_read(it->second, corrupt)) return r;
  if (corrupt) {
    spdlog::warn("score cache {}: corrupt entry at offset {}; quarantined", dir_.string(),
                 it->second.offset);
    FileLock flock_guard(fd_, LOCK_EX);
    quarantine_record(it->second);
  }
  return std::nullopt;
}

void ScoreCache::store(const CacheKey& key, const ScoreResponse& response) {
  const std::string payload = encode_payload(response);
  std::string rec;
  rec.reserve(record_size(static_cast<std::uint32_t>(payload.size())));
  put_u32(rec, kLiveMagic);
  put_u32(rec, static_cast<std::uint32_t>(payload.size()));
  rec += key.digest;
  rec += payload;
  rec += sha256_raw(key.digest + payload);

  std::unique_lock lock(mu_);
  if (index_.count(key.digest)) return;
  FileLock flock_guard(fd_, LOCK_EX);
  scan_from(indexed_end_, false);
  if (index_.count(key.digest)) return;
  const std::uint64_t offset = file_size(fd_);
  write_all(fd_, rec);
  index_.emplace(key.digest, Slot{offset, static_cast<std::uint32_t>(payload.size())});
  indexed_end_ = offset + rec.size();
}

CacheStats ScoreCache::stats() {
  std::unique_lock lock(mu_);
  FileLock flock_guard(fd_, LOCK_SH);
  scan_from(indexed_end_, false);
  CacheStats s;
  s.entries = index_.size();
  s.dead = dead_;
  s.bytes = file_size(fd_);
  for (const auto& [k, slot] : index_) {
    std::string key, payload;
    bool ok = false;
    if (read_record(slot, key, payload, ok) && ok) {
      try {
        ++s.per_fingerprint[fingerprint_of(payload)];
      } catch (const std::exception&) {
      }
    }
  }
  std::error_code ec;
  if (std::filesystem::exists(quarantine_path(), ec)) {
    const int qfd = ::open(quarantine_path().c_str(), O_RDONLY | O_CLOEXEC);
    if (qfd >= 0) {
      const std::uint64_t qsize = file_size(qfd);
      std::uint64_t off = 0;
      char lenbuf[8];
      while (off + 8 <= qsize && pread_all(qfd, lenbuf, 8, off)) {
        off += 8 + get_u64(lenbuf);
        ++s.quarantined;
      }
      ::close(qfd);
    }
  }
  return s;
}

void ScoreCache::rebuild_index() {
  index_.clear();
  dead_ = 0;
  indexed_end_ = 0;
  scan_from(0, false);
}

VerifyResult ScoreCache::verify() {
  std::unique_lock lock(mu_);
  FileLock flock_guard(fd_, LOCK_EX);
  VerifyResult result;
  const std::uint64_t size = file_size(fd_);
  std::uint64_t offset = 0;
  char head[kHeaderSize];
  std::vector<Slot> bad;
  while (offset + kHeaderSize <= size) {
    pread_all(fd_, head, kHeaderSize, offset);
    const auto magic = get_u32(head);
    const auto len = get_u32(head + 4);
    if ((magic != kLiveMagic && magic != kDeadMagic) || len > kMaxPayload ||
        offset + record_size(len) > size) {
      break;
    }
    if (magic == kLiveMagic) {
      ++result.checked;
      std::string key, payload;
      bool ok = false;
      const Slot slot{offset, len};
      read_record(slot, key, payload, ok);
      if (ok) {
        try {
          decode_payload(payload);
        } catch (const std::exception&) {
          ok = false;
        }
      }
      if (!ok) bad.push_back(slot);
    }
    offset += record_size(len);
  }
  for (const auto& slot : bad) quarantine_record(slot);
  result.quarantined = bad.size();
  if (offset < size) {
    result.truncated_bytes = size - offset;
    std::string tail(size - offset, '\0');
    pread_all(fd_, tail.data(), tail.size(), offset);
    append_quarantine(quarantine_path(), tail);
    if (::ftruncate(fd_, static_cast<off_t>(offset)) != 0) throw_errno("cache truncate");
  }
  rebuild_index();
  return result;
}

GcResult ScoreCache::gc(const std::set<std::string>& known_fingerprints) {
  std::unique_lock lock(mu_);
  FileLock flock_guard(fd_, LOCK_EX);
  scan_from(indexed_end_, false);

  std::vector<Slot> slots;
  for (const auto& [k, slot] : index_) slots.push_back(slot);
  std::sort(slots.begin(), slots.end(),
            [](const Slot& a, const Slot& b) { return a.offset < b.offset; });

  GcResult result;
  std::string kept;
  for (const auto& slot : slots) {
    std::string key, payload;
    bool ok = false;
    bool keep = false;
    if (read_record(slot, key, payload, ok) && ok) {
      try {
        keep = known_fingerprints.count(fingerprint_of(payload)) > 0;
      } catch (const std::exception&) {
      }
    }
    if (!keep) {
      ++result.deleted;
      continue;
    }
    ++result.kept;
    std::string rec(record_size(slot.payload_len), '\0');
    pread_all(fd_, rec.data(), rec.size(), slot.offset);
    kept += rec;
  }
  if (result.deleted == 0 && dead_ == 0) return result;

  const auto tmp = dir_ / "scores.log.tmp";
  {
    const int tfd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (tfd < 0) throw_errno("open " + tmp.string());
    write_all(tfd, kept);
    ::fsync(tfd);
    ::close(tfd);
  }
  std::filesystem::rename(tmp, log_path());
  open_log();
  rebuild_index();
  return result;
}

// --- CachingBackend -----------------------------------------------------------

CachingBackend::CachingBackend(BackendPtr inner, std::shared_ptr<ScoreCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {
  fingerprint_ = inner_->info().model_fingerprint;
}

ScoreResponse CachingBackend::score(const ScoreRequest& request) const {
  const CacheKey key = make_cache_key(inner_->id(), fingerprint_, request);
  if (auto hit = cache_->lookup(key)) return std::move(*hit);
  ScoreResponse r = inner_->score(request);
  cache_->store(key, r);
  return r;
}

}  // namespace ccb
