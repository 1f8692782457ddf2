#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <random>
#include <vector>

#include "uld/distributions.hpp"

namespace uld::fixtures {

/// Random normalized vector with strictly positive entries of varied scale.
inline ProbVector random_prob(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> v(n);
  double total = 0.0;
  for (auto& x : v) {
    x = expo(rng) + 1e-12;
    total += x;
  }
  for (auto& x : v) x /= total;
  return ProbVector(std::move(v));
}

inline std::vector<double> random_logits(std::mt19937_64& rng, std::size_t n, double scale = 2.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

inline std::vector<double> shuffled(std::mt19937_64& rng, std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace uld::fixtures
