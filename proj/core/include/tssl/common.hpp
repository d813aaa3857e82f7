#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tssl {

inline constexpr std::string_view kLibraryVersion = "0.1.0";

/// Error taxonomy shared across the library. Every throw site picks the kind
/// that matches the violated contract so the CLI can emit a machine-readable
/// error record.
enum class ErrorKind {
  dimension,  // shape disagreement between operands
  numeric,    // non-finite value, zero norm, invalid cell
  contract,   // precondition violated by the caller
  split,      // dataset partitioning impossible as requested
  schema,     // file/table structure mismatch
  config,     // bad or unknown configuration key
  io,         // filesystem / serialization failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  const char* kind_name() const {
    switch (kind_) {
      case ErrorKind::dimension: return "dimension";
      case ErrorKind::numeric: return "numeric";
      case ErrorKind::contract: return "contract";
      case ErrorKind::split: return "split";
      case ErrorKind::schema: return "schema";
      case ErrorKind::config: return "config";
      case ErrorKind::io: return "io";
    }
    return "unknown";
  }

 private:
  ErrorKind kind_;
};

namespace detail {
inline void append_all(std::ostringstream&) {}
template <typename T, typename... Rest>
void append_all(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  append_all(os, rest...);
}
}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(ErrorKind kind, const Parts&... parts) {
  std::ostringstream os;
  detail::append_all(os, parts...);
  throw Error(kind, os.str());
}

/// FNV-1a 64-bit over a byte range. Used for checkpoint checksums, input
/// digests and seed derivation.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t state = 0xcbf29ce484222325ull) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= 0x100000001b3ull;
  }
  return state;
}

inline std::uint64_t fnv1a64(std::string_view text,
                             std::uint64_t state = 0xcbf29ce484222325ull) {
  return fnv1a64(text.data(), text.size(), state);
}

namespace detail {
// splitmix64 finalizer; decorrelates structured seed inputs.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Deterministic seed derivation: seed_mix(master, tag, indices...) yields an
/// independent stream id for each distinct argument tuple. This is the
/// documented split rule for concurrent sweep cells and per-batch corruption.
inline std::uint64_t seed_mix(std::uint64_t seed) { return detail::mix64(seed); }

template <typename... Rest>
std::uint64_t seed_mix(std::uint64_t seed, std::uint64_t head, Rest... rest) {
  return seed_mix(detail::mix64(seed ^ detail::mix64(head)), rest...);
}

template <typename... Rest>
std::uint64_t seed_mix(std::uint64_t seed, std::string_view tag, Rest... rest) {
  return seed_mix(detail::mix64(seed ^ fnv1a64(tag)), rest...);
}

}  // namespace tssl
