#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "uld/distributions.hpp"
#include "uld/error.hpp"
#include "uld/min_cost_flow.hpp"
#include "uld/tokenizer.hpp"

namespace uld {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

enum class CostKind { uniform01, levenshtein, embedding_l2, custom };

inline const char* to_string(CostKind k) {
  switch (k) {
    case CostKind::uniform01: return "uniform01";
    case CostKind::levenshtein: return "levenshtein";
    case CostKind::embedding_l2: return "embedding_l2";
    case CostKind::custom: return "custom";
  }
  return "custom";
}

/// Non-negative pairwise transport costs, source rows by target columns.
class CostMatrix {
 public:
  CostMatrix(Matrix entries, CostKind kind) : entries_(std::move(entries)), kind_(kind) {
    for (double c : entries_.data) {
      if (!(c >= 0.0) || !std::isfinite(c)) {
        throw InputError("cost entries must be finite and non-negative");
      }
    }
  }

  /// 0 on the diagonal, 1 elsewhere.
  static CostMatrix uniform01(std::size_t n) {
    Matrix m(n, n, 1.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 0.0;
    return CostMatrix(std::move(m), CostKind::uniform01);
  }

  /// |i - j| on an ordered integer support.
  static CostMatrix line(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        m(i, j) = std::abs(static_cast<double>(i) - static_cast<double>(j));
      }
    }
    return CostMatrix(std::move(m), CostKind::custom);
  }

  [[nodiscard]] std::size_t rows() const noexcept { return entries_.rows; }
  [[nodiscard]] std::size_t cols() const noexcept { return entries_.cols; }
  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return entries_(i, j); }
  [[nodiscard]] const Matrix& entries() const noexcept { return entries_; }
  [[nodiscard]] CostKind kind() const noexcept { return kind_; }

 private:
  Matrix entries_;
  CostKind kind_;
};

/// A coupling of two distributions and its cost. `source_dual` and
/// `target_dual` certify optimality for exact plans: u_i + v_j <= C_ij with
/// equality wherever mass flows, so u is a (sub)gradient of the optimal
/// cost with respect to the source masses.
struct TransportPlan {
  Matrix flows;
  double cost = 0.0;
  std::vector<double> source_dual;
  std::vector<double> target_dual;
  std::size_t iterations = 0;
  bool converged = true;
  double marginal_violation = 0.0;
};

inline constexpr std::size_t kExactOtMaxSupport = 4096;
/// Masses are integerized on a 2^-48 grid before the flow solve.
inline constexpr double kMassGrid = 1.0 / 281474976710656.0;

namespace detail {

inline std::vector<std::int64_t> integerize(std::span<const double> mass, std::int64_t total) {
  std::vector<std::int64_t> units(mass.size());
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    units[i] = std::llround(mass[i] / kMassGrid);
    sum += units[i];
  }
  const auto largest = static_cast<std::size_t>(
      std::max_element(mass.begin(), mass.end()) - mass.begin());
  units[largest] += total - sum;
  return units;
}

}  // namespace detail

/// Exact discrete optimal transport by min-cost flow on the bipartite
/// source/target graph.
inline TransportPlan exact_ot(const ProbVector& p, const ProbVector& q, const CostMatrix& c) {
  const std::size_t n = p.size();
  const std::size_t m = q.size();
  if (n > kExactOtMaxSupport || m > kExactOtMaxSupport) {
    throw ScaleError("exact transport is limited to supports of " +
                     std::to_string(kExactOtMaxSupport));
  }
  if (c.rows() != n || c.cols() != m) {
    throw ParameterError("cost matrix is " + std::to_string(c.rows()) + "x" +
                         std::to_string(c.cols()) + " but supports are " + std::to_string(n) +
                         " and " + std::to_string(m));
  }
  constexpr std::int64_t kTotal = 281474976710656;  // 1 / kMassGrid
  const auto supply = detail::integerize(p.probs(), kTotal);
  const auto demand = detail::integerize(q.probs(), kTotal);

  const int source = 0;
  const int sink = static_cast<int>(n + m + 1);
  MinCostFlow graph(static_cast<int>(n + m + 2));
  graph.reserve_arcs(n * m + n + m);
  for (std::size_t i = 0; i < n; ++i) {
    if (supply[i] > 0) graph.add_arc(source, static_cast<int>(1 + i), supply[i], 0.0);
  }
  std::vector<int> arc_id(n * m, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (supply[i] <= 0) continue;
    for (std::size_t j = 0; j < m; ++j) {
      if (demand[j] <= 0) continue;
      arc_id[i * m + j] =
          graph.add_arc(static_cast<int>(1 + i), static_cast<int>(1 + n + j), kTotal, c(i, j));
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (demand[j] > 0) graph.add_arc(static_cast<int>(1 + n + j), sink, demand[j], 0.0);
  }
  const auto pushed = graph.solve(source, sink, kTotal);
  if (pushed != kTotal) {
    throw InputError("transport problem is infeasible after mass integerization");
  }

  TransportPlan plan;
  plan.flows = Matrix(n, m);
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const int id = arc_id[i * m + j];
      if (id < 0) continue;
      const double f = static_cast<double>(graph.flow(id)) * kMassGrid;
      plan.flows(i, j) = f;
      cost += f * c(i, j);
    }
  }
  plan.cost = cost;

  // Node potentials give u_i = -pi(i), v_j = pi(j) with u_i + v_j <= C_ij.
  // Zero-mass nodes take the tightest value the constraints allow.
  plan.source_dual.assign(n, 0.0);
  plan.target_dual.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    plan.target_dual[j] = graph.potential(static_cast<int>(1 + n + j));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (supply[i] > 0) {
      plan.source_dual[i] = -graph.potential(static_cast<int>(1 + i));
    } else {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) best = std::min(best, c(i, j) - plan.target_dual[j]);
      plan.source_dual[i] = best;
    }
  }
  if (c.kind() == CostKind::uniform01 && n == m) {
    // Canonical dual for 0-1 costs: u_i = sign(p_i - q_i) / 2, v = -u. An
    // optimal 0-1 plan keeps min(p_i, q_i) on the diagonal, so the sign is
    // that of the mass node i ships away.
    for (std::size_t i = 0; i < n; ++i) {
      const std::int64_t net = supply[i] - demand[i];
      plan.source_dual[i] = net > 0 ? 0.5 : (net < 0 ? -0.5 : 0.0);
      plan.target_dual[i] = -plan.source_dual[i];
    }
  }
  return plan;
}

/// 1-D transport with cost |i - j|: sum of absolute CDF differences.
inline double w1_1d_cdf(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) {
    throw ParameterError("CDF distance needs equal support lengths");
  }
  double cp = 0.0;
  double cq = 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    cp += p[k];
    cq += q[k];
    total += std::abs(cp - cq);
  }
  return total;
}

inline constexpr std::size_t kBruteForceMaxSupport = 8;

/// min over all permutations pi of sum_i |p(i) - q(pi(i))|, by enumeration.
inline double brute_force_alignment_min(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) {
    throw ParameterError("alignment search needs equal (padded) support lengths");
  }
  const std::size_t n = p.size();
  if (n > kBruteForceMaxSupport) {
    throw ScaleError("exhaustive alignment is limited to n <= 8, got " + std::to_string(n));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::abs(p[i] - q[perm[i]]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct SinkhornOptions {
  double epsilon = 1e-2;
  std::size_t max_iter = 10000;
  double tol = 1e-9;
};

/// Entropic-regularized transport, iterated in the log domain. Non-convergence
/// is reported through `converged`, not raised.
inline TransportPlan sinkhorn(const ProbVector& p, const ProbVector& q, const CostMatrix& c,
                              const SinkhornOptions& opt = {}) {
  const std::size_t n = p.size();
  const std::size_t m = q.size();
  if (c.rows() != n || c.cols() != m) throw ParameterError("cost matrix shape mismatch");
  if (!(opt.epsilon > 0.0)) throw ParameterError("sinkhorn epsilon must be positive");
  constexpr double kFloor = 1e-30;
  const double eps = opt.epsilon;
  std::vector<double> log_p(n);
  std::vector<double> log_q(m);
  for (std::size_t i = 0; i < n; ++i) log_p[i] = std::log(p[i] + kFloor);
  for (std::size_t j = 0; j < m; ++j) log_q[j] = std::log(q[j] + kFloor);

  std::vector<double> f(n, 0.0);
  std::vector<double> g(m, 0.0);
  std::vector<double> scratch(std::max(n, m));
  auto logsumexp = [](std::span<const double> v) {
    const double peak = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(peak)) return peak;
    double s = 0.0;
    for (double x : v) s += std::exp(x - peak);
    return peak + std::log(s);
  };

  TransportPlan plan;
  plan.converged = false;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) scratch[j] = (g[j] - c(i, j)) / eps;
      f[i] = eps * (log_p[i] - logsumexp(std::span<const double>(scratch.data(), m)));
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) scratch[i] = (f[i] - c(i, j)) / eps;
      g[j] = eps * (log_q[j] - logsumexp(std::span<const double>(scratch.data(), n)));
    }
    // Columns are exact after the g update; measure the rows.
    double violation = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < m; ++j) row += std::exp((f[i] + g[j] - c(i, j)) / eps);
      violation = std::max(violation, std::abs(row - p[i]));
    }
    plan.iterations = it + 1;
    plan.marginal_violation = violation;
    if (violation < opt.tol) {
      plan.converged = true;
      break;
    }
  }

  plan.flows = Matrix(n, m);
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double t = std::exp((f[i] + g[j] - c(i, j)) / eps);
      plan.flows(i, j) = t;
      cost += t * c(i, j);
    }
  }
  plan.cost = cost;
  plan.source_dual = f;
  plan.target_dual = g;
  return plan;
}

/// C_ij = edit distance between token i of `a` and token j of `b`.
inline CostMatrix levenshtein_cost_matrix(const Vocabulary& a, const Vocabulary& b) {
  if (a.size() == 0 || b.size() == 0) throw ParameterError("vocabularies must be non-empty");
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      m(i, j) = static_cast<double>(
          levenshtein(a.token(static_cast<TokenId>(i)), b.token(static_cast<TokenId>(j))));
    }
  }
  return CostMatrix(std::move(m), CostKind::levenshtein);
}

/// C_ij = Euclidean distance between row i of `a` and row j of `b`.
inline CostMatrix embedding_l2_cost_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) {
    throw ParameterError("embedding dimensions differ: " + std::to_string(a.cols) + " vs " +
                         std::to_string(b.cols));
  }
  Matrix m(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) {
        const double d = a(i, k) - b(j, k);
        s += d * d;
      }
      m(i, j) = std::sqrt(s);
    }
  }
  return CostMatrix(std::move(m), CostKind::embedding_l2);
}

}  // namespace uld
