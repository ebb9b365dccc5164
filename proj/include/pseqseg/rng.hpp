#pragma once

#include <cstdint>
#include <vector>

namespace pseqseg {

// xoshiro256++ with splitmix64 seeding. Distributions are hand-rolled on top
// of the raw stream so that a given (seed, stream) pair reproduces the same
// draws on every platform, independent of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(seed, 0, 0) {}
  Rng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b = 0);

  std::uint64_t next_u64();

  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer on [lo, hi], inclusive, unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);

  double normal();  // standard normal, Marsaglia polar
  double gamma(double shape);
  double beta(double a, double b);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      const auto j = uniform_int(0, i);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::uint64_t s_[4];
  double normal_cache_ = 0.0;
  bool has_normal_cache_ = false;
};

}  // namespace pseqseg
