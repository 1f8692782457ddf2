#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uld/distributions.hpp"
#include "uld/error.hpp"

namespace uld {

inline constexpr double kDefaultLambda = 1.5;
inline constexpr double kDefaultTau = 1.0;
/// Probabilities are clamped to this floor before the log in cross-entropy.
inline constexpr double kProbFloor = 1e-12;

enum class LossMode { ce, ce_kl, ce_uld };

/// One aligned time step: student logits, optional teacher logits, gold id.
struct StepLossInput {
  LogitVector student_logits;
  std::optional<LogitVector> teacher_logits;
  std::size_t gold_token = 0;
  double tau = kDefaultTau;
  double lambda = kDefaultLambda;
};

struct StepLoss {
  double ce = 0.0;
  std::optional<double> w1;
  std::optional<double> kl;
  double total = 0.0;
};

/// Sums over a sequence plus the per-step breakdown. `w1` and `kl` are sums
/// over the steps that carry teacher logits.
struct LossReport {
  double ce = 0.0;
  double w1 = 0.0;
  std::optional<double> kl;
  double total = 0.0;
  std::vector<StepLoss> per_step;
};

inline double ce_step(const ProbVector& student, std::size_t gold_token) {
  if (gold_token >= student.size()) {
    throw ParameterError("gold token " + std::to_string(gold_token) + " outside vocabulary of " +
                         std::to_string(student.size()));
  }
  return -std::log(std::max(student[gold_token], kProbFloor));
}

/// KL(teacher || student), natural log.
inline double kl_step(const ProbVector& teacher, const ProbVector& student) {
  if (teacher.size() != student.size()) {
    throw SupportError("KL needs one shared vocabulary: teacher has " +
                       std::to_string(teacher.size()) + " entries, student has " +
                       std::to_string(student.size()));
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const double q = teacher[i];
    if (q == 0.0) continue;
    const double p = student[i];
    if (p == 0.0) {
      throw AbsoluteContinuityError("teacher mass " + std::to_string(q) + " at index " +
                                    std::to_string(i) + " where the student has none");
    }
    kl += q * std::log(q / p);
  }
  return std::max(kl, 0.0);
}

namespace detail {

// Ascending sort of non-negative doubles. Their bit patterns order like the
// values, so large inputs go through a four-pass 16-bit radix sort.
inline void sort_nonnegative(std::vector<double>& v, std::vector<std::uint64_t>& keys,
                             std::vector<std::uint64_t>& scratch) {
  const std::size_t n = v.size();
  if (n < 4096) {
    std::sort(v.begin(), v.end());
    return;
  }
  keys.resize(n);
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // -0.0 is the only value with the sign bit set; it sorts with +0.0.
    const auto bits = std::bit_cast<std::uint64_t>(v[i]);
    keys[i] = bits >> 63 ? 0 : bits;
  }
  std::vector<std::size_t> count(65536);
  for (unsigned shift = 0; shift < 64; shift += 16) {
    std::fill(count.begin(), count.end(), 0);
    for (auto k : keys) ++count[(k >> shift) & 0xffff];
    std::size_t run = 0;
    for (auto& c : count) run += std::exchange(c, run);
    for (auto k : keys) scratch[count[(k >> shift) & 0xffff]++] = k;
    keys.swap(scratch);
  }
  for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(keys[i]);
}

}  // namespace detail

/// Closed-form uniform-cost transport distance: sum of absolute differences
/// between the descending-sorted, zero-padded probability vectors.
inline double uld_w1_step(const ProbVector& student, const ProbVector& teacher) {
  const std::size_t n = std::max(student.size(), teacher.size());
  std::vector<double> a(n, 0.0);
  std::vector<double> b(n, 0.0);
  std::copy(student.begin(), student.end(), a.begin());
  std::copy(teacher.begin(), teacher.end(), b.begin());
  std::vector<std::uint64_t> keys, scratch;
  detail::sort_nonnegative(a, keys, scratch);
  detail::sort_nonnegative(b, keys, scratch);
  // Walk from the largest mass down, the same order as a descending sort.
  double total = 0.0;
  for (std::size_t i = n; i-- > 0;) total += std::abs(a[i] - b[i]);
  return total;
}

/// Both vectors padded to a common length and stably sorted; rank i of the
/// student is matched with rank i of the teacher.
struct SortedAlignment {
  ProbVector student_sorted;
  ProbVector teacher_sorted;
  SortPermutation student_order;
  SortPermutation teacher_order;
  std::size_t student_size = 0;
};

inline SortedAlignment align_sorted(const ProbVector& student, const ProbVector& teacher) {
  const std::size_t n = std::max(student.size(), teacher.size());
  auto [ps, po] = sort_desc(pad_to(student, n));
  auto [qs, qo] = sort_desc(pad_to(teacher, n));
  return {std::move(ps), std::move(qs), std::move(po), std::move(qo), student.size()};
}

namespace detail {

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/// Adds weight * d/dz of <g, softmax(z/tau)> into grad, given p = softmax(z/tau).
inline void add_softmax_vjp(std::span<const double> p, std::span<const double> g, double weight,
                            double tau, std::span<double> grad) {
  double dot = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * g[k];
  for (std::size_t k = 0; k < p.size(); ++k) {
    grad[k] += weight * (p[k] * (g[k] - dot)) / tau;
  }
}

/// d(uld_w1_step)/dp restricted to the real (unpadded) student entries, with
/// the permutation frozen at the stable sort and sign(0) = 0.
inline std::vector<double> uld_prob_subgradient(const SortedAlignment& al) {
  std::vector<double> g(al.student_size, 0.0);
  const auto ps = al.student_sorted.probs();
  const auto qs = al.teacher_sorted.probs();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::size_t src = al.student_order[i];
    if (src < al.student_size) g[src] = sign(ps[i] - qs[i]);
  }
  return g;
}

}  // namespace detail

/// Loss value and gradient with respect to the student logits for one step.
struct StepEvaluation {
  StepLoss loss;
  std::vector<double> grad;
};

/// Evaluates CE on softmax(z) plus lambda times the distillation term on
/// softmax(z / tau) against softmax(z_teacher / tau). Teacher logits are
/// constants. A step without teacher logits contributes CE only.
inline StepEvaluation evaluate_step(LossMode mode, const StepLossInput& in) {
  if (in.lambda < 0.0) {
    throw ParameterError("lambda must be non-negative");
  }
  const ProbVector p = softmax_temp(in.student_logits, 1.0);
  StepEvaluation out;
  out.loss.ce = ce_step(p, in.gold_token);
  out.grad.assign(p.probs().begin(), p.probs().end());
  out.grad[in.gold_token] -= 1.0;
  out.loss.total = out.loss.ce;

  if (mode == LossMode::ce || !in.teacher_logits) return out;

  const ProbVector ps = in.tau == 1.0 ? p : softmax_temp(in.student_logits, in.tau);
  const ProbVector qt = softmax_temp(*in.teacher_logits, in.tau);
  if (mode == LossMode::ce_kl) {
    const double kl = kl_step(qt, ps);
    out.loss.kl = kl;
    out.loss.total = out.loss.ce + in.lambda * kl;
    if (in.lambda != 0.0) {
      for (std::size_t k = 0; k < ps.size(); ++k) {
        out.grad[k] += in.lambda * (ps[k] - qt[k]) / in.tau;
      }
    }
    return out;
  }

  const SortedAlignment al = align_sorted(ps, qt);
  double w1 = 0.0;
  const auto a = al.student_sorted.probs();
  const auto b = al.teacher_sorted.probs();
  for (std::size_t i = 0; i < a.size(); ++i) w1 += std::abs(a[i] - b[i]);
  out.loss.w1 = w1;
  out.loss.total = out.loss.ce + in.lambda * w1;
  if (in.lambda != 0.0) {
    const auto g = detail::uld_prob_subgradient(al);
    detail::add_softmax_vjp(ps.probs(), g, in.lambda, in.tau, out.grad);
  }
  return out;
}

/// Analytic gradient of the selected loss with respect to the student logits.
inline std::vector<double> loss_grad(LossMode mode, const StepLossInput& in) {
  return evaluate_step(mode, in).grad;
}

namespace detail {

inline LossReport reduce_sequence(LossMode mode, std::span<const StepLossInput> steps,
                                  double lambda) {
  if (steps.empty()) {
    throw DegenerateInputError("loss over an empty step list");
  }
  if (lambda < 0.0) {
    throw ParameterError("lambda must be non-negative");
  }
  LossReport report;
  double kl_sum = 0.0;
  bool any_kl = false;
  for (const StepLossInput& s : steps) {
    StepLossInput step = s;
    step.lambda = lambda;
    StepLoss l = evaluate_step(mode, step).loss;
    report.ce += l.ce;
    if (l.w1) report.w1 += *l.w1;
    if (l.kl) {
      kl_sum += *l.kl;
      any_kl = true;
    }
    report.per_step.push_back(l);
  }
  if (any_kl) report.kl = kl_sum;
  const double distill = mode == LossMode::ce_kl ? kl_sum : report.w1;
  report.total = lambda == 0.0 ? report.ce : report.ce + lambda * distill;
  return report;
}

}  // namespace detail

/// Sum over steps of CE + lambda * closed-form W1, summed left to right.
inline LossReport uld_sequence(std::span<const StepLossInput> steps, double lambda = kDefaultLambda) {
  return detail::reduce_sequence(LossMode::ce_uld, steps, lambda);
}

/// Sum over steps of CE + lambda * KL(teacher || student).
inline LossReport kl_sequence(std::span<const StepLossInput> steps, double lambda = kDefaultLambda) {
  for (const StepLossInput& s : steps) {
    if (s.teacher_logits && s.teacher_logits->size() != s.student_logits.size()) {
      throw SupportError("KL needs one shared vocabulary: teacher has " +
                         std::to_string(s.teacher_logits->size()) + " tokens, student has " +
                         std::to_string(s.student_logits.size()));
    }
  }
  return detail::reduce_sequence(LossMode::ce_kl, steps, lambda);
}

/// Sum of CE only.
inline LossReport ce_sequence(std::span<const StepLossInput> steps) {
  return detail::reduce_sequence(LossMode::ce, steps, 0.0);
}

}  // namespace uld
