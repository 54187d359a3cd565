#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace eeggsl {

/// Failure categories. They map one-to-one onto the C API status codes.
enum class ErrorCode : int {
  InvalidArgument = 1,
  ShapeMismatch = 2,
  Io = 3,
  Parse = 4,
  NumericFailure = 5,
  Leakage = 6,
  Unsupported = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

// Warnings go to a process-wide sink (stderr by default). Tests swap the sink
// to observe them.
using WarningSink = std::function<void(const std::string&)>;
void warn(const std::string& msg);
WarningSink set_warning_sink(WarningSink sink);

/// Captures warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }
  bool contains(const std::string& needle) const;

 private:
  std::vector<std::string> messages_;
  WarningSink previous_;
};

/// splitmix64 finalizer; used to derive independent RNG streams from
/// (run seed, subject, window, ...) tuples.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) {
  return derive_seed(mix64(seed) ^ mix64(next + 0x632BE59BD9B4E019ull), rest...);
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
template <typename Engine>
double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller; two uniform draws per call. Written out
/// so streams are identical across standard library implementations.
template <typename Engine>
double standard_normal(Engine& rng) {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Dense row-major float matrix for adjacency-style results.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f)
      : rows(r), cols(c), values(r * c, fill) {}

  float& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  float operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  bool operator==(const Matrix&) const = default;
};

/// Writes `content` to `path` via a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace eeggsl
