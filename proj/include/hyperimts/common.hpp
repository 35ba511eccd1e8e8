#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperimts {

// Error taxonomy. Every failure surfaced to callers is one of these, so the
// CLI can map them onto exit codes without string matching.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes incompatible with an operation.
struct ShapeError : Error {
  using Error::Error;
};

/// Row/element index outside the valid range.
struct IndexError : Error {
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

/// Malformed input text (dataset lines, config files).
struct ParseError : Error {
  using Error::Error;
};

/// Structurally valid input with inconsistent content.
struct DataError : Error {
  using Error::Error;
};

/// Invalid or mismatched configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// NaN/Inf where finite values are required, or training divergence.
struct NumericError : Error {
  using Error::Error;
};

/// Filesystem failures.
struct IoError : Error {
  using Error::Error;
};

/// Deterministic random source. All sampling is derived from the raw
/// mt19937_64 stream through fixed arithmetic, so identical seeds produce
/// identical values on every platform (std::*_distribution would not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    // xorshift* keeps the state a single word; period 2^64-1.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Box-Muller; draws two uniforms per call, no spare caching so the
  /// stream position is a pure function of the call count.
  double gauss(double mean, double sigma);

  /// Exponential with the given rate (mean 1/rate).
  double exponential(double rate);

  /// Uniform integer in [0, n). Lemire multiply-shift, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Sums the buffer after sorting it in place. The result depends only on the
/// multiset of values, never on their order, which makes reductions built on
/// it bitwise invariant under permutation of their inputs.
double stable_sum(std::vector<double>& buf);

std::string shape_to_string(const std::vector<std::size_t>& shape);

}  // namespace hyperimts
