#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uld/error.hpp"

namespace uld {

/// Unnormalized next-token scores, one per vocabulary entry.
class LogitVector {
 public:
  LogitVector() = default;

  explicit LogitVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
      throw InputError("logit vector must have at least one entry");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw InputError("non-finite logit at index " + std::to_string(i));
      }
    }
  }

  template <typename T>
  static LogitVector from(std::span<const T> values) {
    return LogitVector(std::vector<double>(values.begin(), values.end()));
  }

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const noexcept { return values_[i]; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }

 private:
  std::vector<double> values_;
};

/// A normalized distribution over a (possibly zero-padded) vocabulary support.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  ProbVector() = default;

  explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) {
      throw InputError("probability vector must have at least one entry");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      const double v = probs_[i];
      if (!(v >= 0.0 && v <= 1.0)) {
        throw InputError("probability out of [0,1] at index " + std::to_string(i));
      }
      total += v;
    }
    if (std::abs(total - 1.0) > kSumTolerance) {
      throw InputError("probabilities sum to " + std::to_string(total) + ", expected 1");
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return probs_.size(); }
  [[nodiscard]] std::size_t support_size() const noexcept { return probs_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const noexcept { return probs_[i]; }
  [[nodiscard]] std::span<const double> probs() const noexcept { return probs_; }
  [[nodiscard]] auto begin() const noexcept { return probs_.begin(); }
  [[nodiscard]] auto end() const noexcept { return probs_.end(); }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  struct Unchecked {};
  ProbVector(std::vector<double> probs, Unchecked) : probs_(std::move(probs)) {}

  friend ProbVector pad_to(const ProbVector& p, std::size_t n);
  friend std::pair<ProbVector, std::vector<std::size_t>> sort_desc(const ProbVector& p);
  friend ProbVector softmax_temp(const LogitVector& logits, double tau);

  std::vector<double> probs_;
};

/// sorted[i] = source[order[i]].
using SortPermutation = std::vector<std::size_t>;

/// softmax(logits / tau), max-subtracted.
inline ProbVector softmax_temp(const LogitVector& logits, double tau = 1.0) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ParameterError("temperature must be positive and finite, got " + std::to_string(tau));
  }
  const auto z = logits.values();
  if (z.empty()) {
    throw InputError("softmax of an empty logit vector");
  }
  const double peak = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp((z[i] - peak) / tau);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return ProbVector(std::move(out), ProbVector::Unchecked{});
}

/// Extends p with exact zeros up to length n.
inline ProbVector pad_to(const ProbVector& p, std::size_t n) {
  if (n < p.size()) {
    throw ParameterError("cannot pad a support of " + std::to_string(p.size()) + " down to " +
                         std::to_string(n));
  }
  std::vector<double> out(n, 0.0);
  std::copy(p.begin(), p.end(), out.begin());
  return ProbVector(std::move(out), ProbVector::Unchecked{});
}

/// Stable descending sort; ties keep ascending source index.
inline std::pair<ProbVector, SortPermutation> sort_desc(const ProbVector& p) {
  SortPermutation order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto probs = p.probs();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> sorted(p.size());
  for (std::size_t i = 0; i < order.size(); ++i) sorted[i] = probs[order[i]];
  return {ProbVector(std::move(sorted), ProbVector::Unchecked{}), std::move(order)};
}

/// Inverse of sort_desc: out[order[i]] = sorted[i].
inline std::vector<double> unpermute(std::span<const double> sorted, const SortPermutation& order) {
  std::vector<double> out(sorted.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[order[i]] = sorted[i];
  return out;
}

}  // namespace uld
