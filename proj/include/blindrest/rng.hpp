#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace blindrest {

std::uint64_t splitmix64(std::uint64_t x);

// Folds a list of integers into one stream id.
std::uint64_t stream_id(std::initializer_list<std::uint64_t> parts);

/// Counter-based random stream keyed by (seed, stream).
///
/// Draw k of a stream is a pure function of (seed, stream, k), so any
/// partition of work across threads reproduces the serial result as long as
/// each work item owns its stream. Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng(std::uint64_t seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal();                        // Box-Muller
  std::int64_t poisson(double lambda);
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace blindrest
