#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uld/error.hpp"

namespace uld::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) {
      throw ParameterError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
  }

  [[nodiscard]] std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  [[nodiscard]] std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  T& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  T at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

namespace kernels {

// C[m,n] += A[m,k] * B[k,n]
// The reduction index is unrolled by four so each pass over a C row
// carries four multiply-adds.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const T s0 = arow[p], s1 = arow[p + 1], s2 = arow[p + 2], s3 = arow[p + 3];
      const T* b0 = b + p * n;
      const T* b1 = b0 + n;
      const T* b2 = b1 + n;
      const T* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s0 * b0[j] + s1 * b1[j] + s2 * b2[j] + s3 * b3[j];
    }
    for (; p < k; ++p) {
      const T s = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t p = 0;
  for (; p + 4 <= m; p += 4) {
    const T* b0 = b + p * n;
    const T* b1 = b0 + n;
    const T* b2 = b1 + n;
    const T* b3 = b2 + n;
    for (std::size_t i = 0; i < k; ++i) {
      const T s0 = a[p * k + i], s1 = a[(p + 1) * k + i], s2 = a[(p + 2) * k + i], s3 = a[(p + 3) * k + i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s0 * b0[j] + s1 * b1[j] + s2 * b2[j] + s3 * b3[j];
    }
  }
  for (; p < m; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < k; ++i) {
      const T s = a[p * k + i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  gemm_nn(a, bt.data(), c, m, k, n);
}

}  // namespace kernels

/// Records primitive operations in creation order; backward() replays them
/// in reverse. Every op's inputs precede it, so the record is topological.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Var leaf(Tensor<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  [[nodiscard]] const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  [[nodiscard]] const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape; }
  /// Empty when the node received no gradient.
  [[nodiscard]] const std::vector<T>& grad(Var v) const { return nodes_.at(v.id).grad; }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require_rank2(A, "matmul");
    require_rank2(B, "matmul");
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    if (B.shape[0] != k) mismatch("matmul", A.shape, B.shape);
    Tensor<T> out({m, n});
    kernels::gemm_nn(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    return push(std::move(out), any(a, b), [a, b, m, k, n](Tape& t, std::size_t self) {
      const T* dc = t.nodes_[self].grad.data();
      if (t.requires_grad(a)) {
        kernels::gemm_nt(dc, t.value(b).data.data(), t.grad_ref(a), m, n, k);
      }
      if (t.requires_grad(b)) {
        kernels::gemm_tn(t.value(a).data.data(), dc, t.grad_ref(b), m, k, n);
      }
    });
  }

  /// a * b^T for a [m,k], b [n,k].
  Var matmul_nt(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require_rank2(A, "matmul_nt");
    require_rank2(B, "matmul_nt");
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[0];
    if (B.shape[1] != k) mismatch("matmul_nt", A.shape, B.shape);
    Tensor<T> out({m, n});
    kernels::gemm_nt(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    return push(std::move(out), any(a, b), [a, b, m, k, n](Tape& t, std::size_t self) {
      const T* dc = t.nodes_[self].grad.data();
      if (t.requires_grad(a)) {
        kernels::gemm_nn(dc, t.value(b).data.data(), t.grad_ref(a), m, n, k);
      }
      if (t.requires_grad(b)) {
        kernels::gemm_tn(dc, t.value(a).data.data(), t.grad_ref(b), m, n, k);
      }
    });
  }

  /// Elementwise sum; `b` may also be a vector broadcast over the rows of `a`.
  Var add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    const bool broadcast = A.shape != B.shape;
    if (broadcast && !(B.shape.size() == 1 && B.shape[0] == A.cols())) {
      mismatch("add", A.shape, B.shape);
    }
    Tensor<T> out = A;
    const std::size_t cols = B.data.size();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i % cols];
    return push(std::move(out), any(a, b), [a, b, cols](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      if (t.requires_grad(a)) {
        T* da = t.grad_ref(a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (t.requires_grad(b)) {
        T* db = t.grad_ref(b);
        for (std::size_t i = 0; i < dy.size(); ++i) db[i % cols] += dy[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape != B.shape) mismatch("mul", A.shape, B.shape);
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
    return push(std::move(out), any(a, b), [a, b](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      if (t.requires_grad(a)) {
        T* da = t.grad_ref(a);
        const auto& bv = t.value(b).data;
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
      }
      if (t.requires_grad(b)) {
        T* db = t.grad_ref(b);
        const auto& av = t.value(a).data;
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
      }
    });
  }

  Var scale(Var a, T s) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v *= s;
    return push(std::move(out), any(a), [a, s](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      T* da = t.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * s;
    });
  }

  /// Embedding lookup: row ids[i] of `table` becomes row i of the output.
  Var gather_rows(Var table, std::span<const std::size_t> ids) {
    const auto& W = value(table);
    require_rank2(W, "gather_rows");
    const std::size_t d = W.shape[1];
    Tensor<T> out({ids.size(), d});
    std::vector<std::size_t> rows(ids.begin(), ids.end());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= W.shape[0]) {
        throw ParameterError("gather_rows index " + std::to_string(rows[i]) + " outside " +
                             std::to_string(W.shape[0]) + " rows");
      }
      std::copy_n(W.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return push(std::move(out), any(table), [table, rows = std::move(rows), d](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      T* dw = t.grad_ref(table);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) dw[rows[i] * d + j] += dy[i * d + j];
      }
    });
  }

  /// Softmax over the last axis, max-subtracted.
  Var softmax_rows(Var a) {
    Tensor<T> out = value(a);
    const std::size_t c = out.cols();
    const std::size_t r = out.data.size() / c;
    for (std::size_t i = 0; i < r; ++i) {
      T* row = out.data.data() + i * c;
      const T peak = *std::max_element(row, row + c);
      T total = 0;
      for (std::size_t j = 0; j < c; ++j) {
        row[j] = std::exp(row[j] - peak);
        total += row[j];
      }
      for (std::size_t j = 0; j < c; ++j) row[j] /= total;
    }
    return push(std::move(out), any(a), [a, r, c](Tape& t, std::size_t self) {
      const auto& y = t.nodes_[self].value.data;
      const auto& dy = t.nodes_[self].grad;
      T* da = t.grad_ref(a);
      for (std::size_t i = 0; i < r; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += dy[i * c + j] * y[i * c + j];
        for (std::size_t j = 0; j < c; ++j) da[i * c + j] += y[i * c + j] * (dy[i * c + j] - dot);
      }
    });
  }

  /// Row-wise x / sqrt(mean(x^2) + eps) * gain.
  Var rms_norm(Var x, Var gain, T eps = T(1e-5)) {
    const auto& X = value(x);
    const auto& G = value(gain);
    const std::size_t c = X.cols();
    if (G.data.size() != c) mismatch("rms_norm", X.shape, G.shape);
    const std::size_t r = X.data.size() / c;
    Tensor<T> out(X.shape);
    std::vector<T> inv(r);
    for (std::size_t i = 0; i < r; ++i) {
      const T* row = X.data.data() + i * c;
      T ss = 0;
      for (std::size_t j = 0; j < c; ++j) ss += row[j] * row[j];
      inv[i] = T(1) / std::sqrt(ss / static_cast<T>(c) + eps);
      for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] = row[j] * inv[i] * G.data[j];
    }
    return push(std::move(out), any(x, gain),
                [x, gain, r, c, inv = std::move(inv)](Tape& t, std::size_t self) {
                  const auto& dy = t.nodes_[self].grad;
                  const auto& xv = t.value(x).data;
                  const auto& g = t.value(gain).data;
                  if (t.requires_grad(gain)) {
                    T* dg = t.grad_ref(gain);
                    for (std::size_t i = 0; i < r; ++i) {
                      for (std::size_t j = 0; j < c; ++j) dg[j] += dy[i * c + j] * xv[i * c + j] * inv[i];
                    }
                  }
                  if (t.requires_grad(x)) {
                    T* dx = t.grad_ref(x);
                    for (std::size_t i = 0; i < r; ++i) {
                      T dot = 0;
                      for (std::size_t j = 0; j < c; ++j) dot += dy[i * c + j] * g[j] * xv[i * c + j] * inv[i];
                      dot /= static_cast<T>(c);
                      for (std::size_t j = 0; j < c; ++j) {
                        const T xhat = xv[i * c + j] * inv[i];
                        dx[i * c + j] += inv[i] * (dy[i * c + j] * g[j] - xhat * dot);
                      }
                    }
                  }
                });
  }

  /// Tanh-approximated GELU.
  Var gelu(Var a) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v = gelu_value(v);
    return push(std::move(out), any(a), [a](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      const auto& xv = t.value(a).data;
      T* da = t.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * gelu_derivative(xv[i]);
    });
  }

  Var reshape(Var a, Shape s) {
    if (numel(s) != value(a).data.size()) mismatch("reshape", value(a).shape, s);
    Tensor<T> out(std::move(s), value(a).data);
    return push(std::move(out), any(a), [a](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      T* da = t.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    });
  }

  /// Adds -inf above the diagonal of a square score matrix.
  Var causal_mask_add(Var scores) {
    const auto& S = value(scores);
    require_rank2(S, "causal_mask_add");
    if (S.shape[0] != S.shape[1]) mismatch("causal_mask_add", S.shape, S.shape);
    const std::size_t n = S.shape[0];
    Tensor<T> out = S;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) out.data[i * n + j] = -std::numeric_limits<T>::infinity();
    }
    return push(std::move(out), any(scores), [scores, n](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      T* ds = t.grad_ref(scores);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) ds[i * n + j] += dy[i * n + j];
      }
    });
  }

  Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const auto& A = value(a);
    require_rank2(A, "slice_cols");
    const std::size_t r = A.shape[0], c = A.shape[1];
    if (begin + count > c) throw ParameterError("slice_cols range exceeds " + std::to_string(c));
    Tensor<T> out({r, count});
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(i * c + begin), count,
                  out.data.begin() + static_cast<std::ptrdiff_t>(i * count));
    }
    return push(std::move(out), any(a), [a, r, c, begin, count](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      T* da = t.grad_ref(a);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < count; ++j) da[i * c + begin + j] += dy[i * count + j];
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ParameterError("concat_cols of nothing");
    const std::size_t r = value(parts[0]).shape[0];
    std::size_t c = 0;
    std::vector<std::size_t> widths;
    bool needs = false;
    for (Var p : parts) {
      const auto& P = value(p);
      require_rank2(P, "concat_cols");
      if (P.shape[0] != r) mismatch("concat_cols", value(parts[0]).shape, P.shape);
      widths.push_back(P.shape[1]);
      c += P.shape[1];
      needs = needs || requires_grad(p);
    }
    Tensor<T> out({r, c});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto& P = value(parts[k]);
      for (std::size_t i = 0; i < r; ++i) {
        std::copy_n(P.data.begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k],
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * c + off));
      }
      off += widths[k];
    }
    return push(std::move(out), needs, [parts, widths, r, c](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      std::size_t off = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (t.requires_grad(parts[k])) {
          T* dp = t.grad_ref(parts[k]);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < widths[k]; ++j) dp[i * widths[k] + j] += dy[i * c + off + j];
          }
        }
        off += widths[k];
      }
    });
  }

  Var log(Var a) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v = std::log(v);
    return push(std::move(out), any(a), [a](Tape& t, std::size_t self) {
      const auto& dy = t.nodes_[self].grad;
      const auto& xv = t.value(a).data;
      T* da = t.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] / xv[i];
    });
  }

  Var sum(Var a) {
    const auto& A = value(a);
    T total = 0;
    for (T v : A.data) total += v;
    return push(Tensor<T>({1}, std::vector<T>{total}), any(a), [a](Tape& t, std::size_t self) {
      const T g = t.nodes_[self].grad[0];
      T* da = t.grad_ref(a);
      const std::size_t n = t.value(a).data.size();
      for (std::size_t i = 0; i < n; ++i) da[i] += g;
    });
  }

  /// Scalar holding element `flat_index` of `a`.
  Var pick(Var a, std::size_t flat_index) {
    const auto& A = value(a);
    if (flat_index >= A.data.size()) throw ParameterError("pick index out of range");
    return push(Tensor<T>({1}, std::vector<T>{A.data[flat_index]}), any(a),
                [a, flat_index](Tape& t, std::size_t self) {
                  t.grad_ref(a)[flat_index] += t.nodes_[self].grad[0];
                });
  }

  /// Scalar loss computed outside the tape. Its backward injects the supplied
  /// gradient with respect to `a`.
  Var external_loss(Var a, T value_, std::vector<T> grad) {
    if (grad.size() != value(a).data.size()) mismatch("external_loss", value(a).shape, {grad.size()});
    return push(Tensor<T>({1}, std::vector<T>{value_}), any(a),
                [a, grad = std::move(grad)](Tape& t, std::size_t self) {
                  const T g = t.nodes_[self].grad[0];
                  T* da = t.grad_ref(a);
                  for (std::size_t i = 0; i < grad.size(); ++i) da[i] += g * grad[i];
                });
  }

  /// Reverse sweep from a scalar; accumulates into every node that requires
  /// a gradient, in fixed tape order.
  void backward(Var loss) {
    auto& L = nodes_.at(loss.id);
    if (L.value.data.size() != 1) {
      throw ParameterError("backward needs a scalar loss, got shape " + shape_str(L.value.shape));
    }
    if (!L.requires_grad) return;
    L.grad.assign(1, T(1));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
      node.backward(*this, id);
    }
  }

  static T gelu_value(T x) {
    const T k = T(0.7978845608028654);
    return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
  }

  static T gelu_derivative(T x) {
    const T k = T(0.7978845608028654);
    const T inner = k * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(inner);
    const T dinner = k * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Backward fn) {
    nodes_.push_back({std::move(value), {}, requires_grad, requires_grad ? std::move(fn) : nullptr});
    return Var{nodes_.size() - 1};
  }

  T* grad_ref(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad.assign(n.value.data.size(), T(0));
    return n.grad.data();
  }

  template <typename... Vs>
  bool any(Vs... vs) const {
    return (requires_grad(vs) || ...);
  }

  static void require_rank2(const Tensor<T>& t, const char* op) {
    if (t.shape.size() != 2) {
      throw ParameterError(std::string(op) + " needs a rank-2 tensor, got " + shape_str(t.shape));
    }
  }

  [[noreturn]] static void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ParameterError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                         shape_str(b));
  }

  std::vector<Node> nodes_;
};

/// Central-difference gradient of a scalar function.
inline std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                            std::span<const double> x, double h) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Worst coordinate of |a - n| / max(|a|, |n|, floor).
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-3) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Builds `f` on a fresh f64 tape, compares the reverse-mode gradient with
/// respect to `x` against central differences with step `h`.
inline GradCheckResult grad_check(const std::function<Var(Tape<double>&, Var)>& f,
                                  const Tensor<double>& x, double h = 1e-5, double floor = 1e-3) {
  GradCheckResult r;
  {
    Tape<double> tape;
    const Var xv = tape.leaf(x, true);
    const Var y = f(tape, xv);
    tape.backward(y);
    r.analytic = tape.grad(xv);
    if (r.analytic.empty()) r.analytic.assign(x.data.size(), 0.0);
  }
  auto eval = [&](std::span<const double> probe) {
    Tape<double> tape;
    const Var xv = tape.leaf(Tensor<double>(x.shape, std::vector<double>(probe.begin(), probe.end())));
    return tape.value(f(tape, xv)).data.at(0);
  };
  r.numeric = numeric_gradient(eval, x.data, h);
  r.max_rel_error = max_relative_error(r.analytic, r.numeric, floor);
  return r;
}

}  // namespace uld::ad
