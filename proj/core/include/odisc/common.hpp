#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace odisc {

inline constexpr const char* kVersion = "0.1.0";

// Discriminated error used across the library. The code survives the
// throw so callers and tests can tell failure classes apart without
// string matching.
struct Error : std::runtime_error {
  enum class Code {
    grammar_syntax,
    not_in_language,
    sequence_length,
    invalid_sequence,
    sample_retries,
    interpret,
    arity,
    missing_channel,
    degenerate,
    checkpoint,
    config,
    data,
    diverged,
  };

  Error(Code c, const std::string& msg) : std::runtime_error(msg), code(c) {}
  Code code;
};

// 64-bit FNV-1a. Used for grammar/config fingerprints embedded in
// output files; stability across runs matters, cryptography does not.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s,
                           std::uint64_t h = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

// Deterministic stream derivation: mixes a master seed with salts so
// that independent consumers (noise channels, per-individual evaluation,
// generation loops) never share a stream. SplitMix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt_a,
                              std::uint64_t salt_b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt_a + 1) +
                    0xbf58476d1ce4e5b9ull * (salt_b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t salt_a = 0,
                                std::uint64_t salt_b = 0) {
  return std::mt19937_64(mix_seed(seed, salt_a, salt_b));
}

// Fixed-format double rendering (snprintf "%.17g" round-trips exactly;
// shorter forms used for human-facing strings).
std::string format_double(double v, int precision = 17);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace odisc
