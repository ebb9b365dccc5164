#include "pseqseg/rng.hpp"
#include "pseqseg/synthesis.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace pseqseg;

namespace {

// Kolmogorov-Smirnov statistic of samples against a CDF.
double ks_statistic(std::vector<double> samples, double (*cdf)(double)) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

double arcsine_cdf(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return 2.0 / M_PI * std::asin(std::sqrt(x));
}

double uniform_cdf(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a(123), b(123), c(124);
  Rng s1(123, 7, 1), s2(123, 7, 2);
  bool all_equal_cross_seed = true, all_equal_cross_stream = true;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    if (va != c.next_u64()) all_equal_cross_seed = false;
    if (s1.next_u64() != s2.next_u64()) all_equal_cross_stream = false;
  }
  CHECK_FALSE(all_equal_cross_seed);
  CHECK_FALSE(all_equal_cross_stream);
}

TEST_CASE("uniform_int is unbiased over a small range") {
  Rng rng(99);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(rng.uniform_int(0, 6))];
  for (const int c : counts) {
    CHECK(c > n / 7 - 500);
    CHECK(c < n / 7 + 500);
  }
}

TEST_CASE("beta(0.5, 0.5) matches the arcsine CDF") {
  Rng rng(2024);
  std::vector<double> draws(10000);
  for (auto& d : draws) d = rng.beta(0.5, 0.5);
  CHECK(ks_statistic(std::move(draws), arcsine_cdf) < 0.02);
}

TEST_CASE("beta(1, 1) is uniform") {
  Rng rng(2025);
  std::vector<double> draws(10000);
  for (auto& d : draws) d = rng.beta(1.0, 1.0);
  CHECK(ks_statistic(std::move(draws), uniform_cdf) < 0.02);
}

TEST_CASE("normal moments") {
  Rng rng(31);
  double sum = 0, sum2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sum2 / n - 1.0) < 0.03);
}

TEST_CASE("sample_placement stays inside the frame") {
  PlacementSampler sampler;  // 0.5, 0.5
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const auto [u, v] = sample_placement(sampler, 120, 96, 30, 20, rng);
    CHECK(u >= 0);
    CHECK(v >= 0);
    CHECK(u + 30 <= 120);
    CHECK(v + 20 <= 96);
  }
}

TEST_CASE("sample_placement with zero feasible region returns the origin") {
  PlacementSampler sampler;
  Rng rng(6);
  const auto [u, v] = sample_placement(sampler, 64, 48, 64, 48, rng);
  CHECK(u == 0);
  CHECK(v == 0);
}

TEST_CASE("sample_placement rejects oversized objects") {
  PlacementSampler sampler;
  Rng rng(7);
  CHECK_THROWS_AS(sample_placement(sampler, 64, 48, 65, 10, rng), InvalidInputError);
}

TEST_CASE("placement axis draws follow Beta(0.5, 0.5)") {
  PlacementSampler sampler{0.5, 0.5};
  Rng rng(2026);
  std::vector<double> u_draws(10000), v_draws(10000);
  for (int i = 0; i < 10000; ++i) {
    u_draws[static_cast<std::size_t>(i)] = sampler.sample_axis(rng);
    v_draws[static_cast<std::size_t>(i)] = sampler.sample_axis(rng);
  }
  CHECK(ks_statistic(std::move(u_draws), arcsine_cdf) < 0.02);
  CHECK(ks_statistic(std::move(v_draws), arcsine_cdf) < 0.02);
}

TEST_CASE("integer placements at alpha=beta=1 are uniform (chi-square)") {
  PlacementSampler sampler{1.0, 1.0};
  Rng rng(2027);
  // Feasible region width 20: rounded placements land on {0..20}, with the
  // two edge cells covering half a rounding interval each.
  const int feasible = 20, n = 10000;
  std::vector<int> counts(static_cast<std::size_t>(feasible) + 1, 0);
  for (int i = 0; i < n; ++i) {
    const auto [u, v] = sample_placement(sampler, 20 + feasible, 40, 20, 20, rng);
    (void)v;
    ++counts[static_cast<std::size_t>(u)];
  }
  std::vector<double> expected(counts.size(), static_cast<double>(n) / feasible);
  expected.front() = n / (2.0 * feasible);
  expected.back() = n / (2.0 * feasible);
  double chi2 = 0;
  for (std::size_t b = 0; b < counts.size(); ++b) {
    const double diff = counts[b] - expected[b];
    chi2 += diff * diff / expected[b];
  }
  // 20 dof, critical value at p = 0.01.
  CHECK(chi2 < 37.57);
}
