#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mmsrarec {

using json = nlohmann::json;

enum class ErrorCode {
  kInvalidArgument = 1,
  kIo,
  kParse,
  kCorpus,
  kBackendUnavailable,
  kCapability,
  kMissingArtifact,
  kInternal,
};

// Every failure surfaced by the library carries one of the codes above so the
// C layer can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline Error invalid_argument(const std::string& what) {
  return Error(ErrorCode::kInvalidArgument, what);
}

// ---------------------------------------------------------------------------
// Hashing

constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(std::uint64_t v);

// Stable seed for a sub-stream: mixes the base seed with a list of keys so a
// per-user (or per-impression) generator does not depend on iteration order.
std::uint64_t derive_seed(std::uint64_t seed,
                          std::initializer_list<std::string_view> keys);

// ---------------------------------------------------------------------------
// Random numbers
//
// std::mt19937_64 has a standardized output sequence; the distributions in
// <random> do not, so the few we need are written out here.

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, n) by rejection; n must be > 0.
  std::size_t uniform_index(std::size_t n);

  // Uniform on [0, 1).
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform on the open interval (0, 1).
  double uniform_open01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Strings

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_ci(std::string_view s, std::string_view prefix);

// Remove duplicates keeping the first occurrence.
std::vector<std::string> dedupe_stable(const std::vector<std::string>& items);

// Largest-remainder apportionment of `total` units across `weights`.
// Ties in the fractional part go to the earlier slot.
std::vector<std::size_t> largest_remainder(std::size_t total,
                                           const std::vector<double>& weights);

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
std::uint64_t file_checksum(const std::filesystem::path& path);

struct JsonlLine {
  std::size_t line_number;  // 1-based
  std::string text;
};

// Non-blank lines of a line-delimited JSON file.
std::vector<JsonlLine> read_lines(const std::filesystem::path& path);

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path,
                 const std::vector<json>& records);

}  // namespace mmsrarec
