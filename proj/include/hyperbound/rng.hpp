#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>

namespace hyperbound {

// Counter-free xoshiro256** generator. Implemented here rather than via
// <random> distributions so that streams are identical across standard
// libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0);

  /// Independent stream keyed by a seed and any number of coordinates,
  /// e.g. derive(seed, {epoch, example_index}).
  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

  std::uint64_t next();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace hyperbound
