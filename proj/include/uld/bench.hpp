#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uld/distributions.hpp"
#include "uld/error.hpp"
#include "uld/losses.hpp"
#include "uld/ot.hpp"

namespace uld {

/// Dirichlet(1) sample of length n.
inline ProbVector random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> v(n);
  double total = 0.0;
  for (auto& x : v) total += (x = e(rng));
  for (auto& x : v) x /= total;
  return ProbVector(std::move(v));
}

/// Largest |closed form - 2 * exact transport on sorted supports| over
/// `trials` random pairs of length n.
inline double ot_check(std::size_t n, std::size_t trials, std::uint64_t seed) {
  if (n == 0 || trials == 0) throw ParameterError("ot-check needs n > 0 and trials > 0");
  std::mt19937_64 rng(seed);
  const CostMatrix c = CostMatrix::uniform01(n);
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const ProbVector p = random_simplex(rng, n);
    const ProbVector q = random_simplex(rng, n);
    const double closed = uld_w1_step(p, q);
    const double exact = exact_ot(sort_desc(p).first, sort_desc(q).first, c).cost;
    worst = std::max(worst, std::abs(closed - 2.0 * exact));
  }
  return worst;
}

/// Least-squares slope of log(seconds) against log(n).
inline double loglog_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw DegenerateInputError("a slope needs at least two sizes");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& [n, s] : points) {
    if (!(n > 0.0) || !(s > 0.0)) throw DegenerateInputError("log-log fit needs positive values");
    const double x = std::log(n), y = std::log(s);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = static_cast<double>(points.size());
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

inline std::vector<std::size_t> powers_of_two(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t n = lo; n <= hi; n *= 2) out.push_back(n);
  return out;
}

struct BenchOptions {
  std::vector<std::size_t> closed_sizes = powers_of_two(1024, 262144);
  std::vector<std::size_t> exact_sizes = powers_of_two(16, 512);
  std::size_t reps = 3;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string method;
  std::size_t n = 0;
  std::size_t rep = 0;
  double seconds = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::map<std::string, double> slopes;

  /// Median per-call seconds for `method` at size n.
  [[nodiscard]] double median(const std::string& method, std::size_t n) const {
    std::vector<double> v;
    for (const auto& r : rows) {
      if (r.method == method && r.n == n) v.push_back(r.seconds);
    }
    if (v.empty()) throw DegenerateInputError("no timings for " + method + " at n=" + std::to_string(n));
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  }
};

namespace detail {

// Per-call seconds, amortized over enough calls to span about 20 ms.
template <typename F>
double time_per_call(F&& f) {
  using clock = std::chrono::steady_clock;
  std::size_t calls = 1;
  for (;;) {
    const auto t0 = clock::now();
    for (std::size_t i = 0; i < calls; ++i) f();
    const double s = std::chrono::duration<double>(clock::now() - t0).count();
    if (s >= 0.02 || calls >= (std::size_t{1} << 20)) return s / static_cast<double>(calls);
    calls *= 2;
  }
}

}  // namespace detail

/// Times the closed form and the exact solver on random pairs and fits
/// log-log slopes over median timings.
inline BenchResult bench_ot(const BenchOptions& opt) {
  if (opt.reps == 0) throw ParameterError("reps must be positive");
  BenchResult res;
  std::mt19937_64 rng(opt.seed);
  volatile double sink = 0.0;
  std::vector<std::pair<double, double>> closed_pts, exact_pts;
  for (std::size_t n : opt.closed_sizes) {
    for (std::size_t rep = 0; rep < opt.reps; ++rep) {
      const ProbVector p = random_simplex(rng, n);
      const ProbVector q = random_simplex(rng, n);
      const double s = detail::time_per_call([&] { sink = sink + uld_w1_step(p, q); });
      res.rows.push_back({"closed_form", n, rep, s});
    }
    closed_pts.emplace_back(static_cast<double>(n), res.median("closed_form", n));
  }
  for (std::size_t n : opt.exact_sizes) {
    const CostMatrix c = CostMatrix::uniform01(n);
    for (std::size_t rep = 0; rep < opt.reps; ++rep) {
      const ProbVector p = sort_desc(random_simplex(rng, n)).first;
      const ProbVector q = sort_desc(random_simplex(rng, n)).first;
      const double s = detail::time_per_call([&] { sink = sink + exact_ot(p, q, c).cost; });
      res.rows.push_back({"exact_ot", n, rep, s});
    }
    exact_pts.emplace_back(static_cast<double>(n), res.median("exact_ot", n));
  }
  if (closed_pts.size() >= 2) res.slopes["closed_form"] = loglog_slope(closed_pts);
  if (exact_pts.size() >= 2) res.slopes["exact_ot"] = loglog_slope(exact_pts);
  return res;
}

inline std::string bench_csv(const BenchResult& r) {
  std::ostringstream out;
  out.precision(9);
  out << "method,n,rep,seconds\n";
  for (const auto& row : r.rows) out << row.method << ',' << row.n << ',' << row.rep << ',' << row.seconds << '\n';
  for (const auto& [method, slope] : r.slopes) out << "slope," << method << ',' << slope << '\n';
  return out.str();
}

}  // namespace uld
