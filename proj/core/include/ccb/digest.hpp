#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ccb {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Raw 32-byte SHA-256 of `data`.
std::string sha256_raw(std::string_view data);

std::uint64_t fnv1a64(std::string_view data) noexcept;

/// SplitMix64 finalizer (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace ccb
