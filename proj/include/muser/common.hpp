#pragma once

// Shared plumbing: error taxonomy, deterministic random draws, and
// byte-order-stable readers/writers for the binary file formats.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace muser {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Bad flags, config keys, or argument values. CLI exit code 1.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what) {}
};

/// Malformed or inconsistent input files and datasets. CLI exit code 2.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what) {}
};

/// Non-finite values where finite ones are required. CLI exit code 3.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what) {}
};

// ---------------------------------------------------------------------------
// Deterministic randomness. mt19937_64 is fully specified by the standard;
// the distribution helpers below avoid <random> distributions, whose output
// is implementation-defined, so streams are identical across toolchains.
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

/// splitmix64 finalizer over the pair; derives stream seeds such as (seed, epoch).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Uniform draw in [lo, hi) from the top 53 bits of one engine output.
inline double uniform_real(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + u * (hi - lo);
}

/// Standard normal via Box-Muller. No cached spare, so the engine state
/// alone determines the stream.
inline double normal(Rng& rng) {
  double u1 = uniform_real(rng, 0.0, 1.0);
  double u2 = uniform_real(rng, 0.0, 1.0);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Unbiased integer draw in [0, n) by rejection.
inline std::uint64_t bounded_uint(Rng& rng, std::uint64_t n) {
  if (n == 0) throw Error("bounded_uint: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

/// Fisher-Yates shuffle using bounded_uint (std::shuffle is not portable
/// across standard libraries).
template <typename T>
inline void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(bounded_uint(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

inline std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (is.fail()) throw DataError("rng_from_string: malformed engine state");
  return rng;
}

// ---------------------------------------------------------------------------
// Formatting
// ---------------------------------------------------------------------------

/// Shortest-round-trip decimal rendering of a double (%.17g survives a
/// parse back to the identical bit pattern).
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw UsageError("expected a number for " + what + ", got '" + s + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0' || s.find('-') != std::string::npos)
    throw UsageError("expected a non-negative integer for " + what + ", got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw UsageError("expected true/false for " + what + ", got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Little-endian byte streams (independent of host byte order)
// ---------------------------------------------------------------------------

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void str(std::string_view s) { raw(s.data(), s.size()); }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked cursor over a byte buffer. Every overrun is a diagnosed
/// DataError, so truncated files never read past the end.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  double f64() { return std::bit_cast<double>(get_le(8)); }
  std::string str(std::size_t n) {
    auto s = take(n);
    return std::string(reinterpret_cast<const char*>(s.data()), s.size());
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > remaining())
      throw DataError(origin_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", have " + std::to_string(remaining()) + ")");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  std::uint64_t get_le(int n) {
    auto s = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace muser
