#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "hoflow/core/rng.hpp"
#include "hoflow/core/tensor.hpp"

// Differentiable ops over f32 tensors. Every op validates shapes up front and
// throws std::invalid_argument naming both shapes on mismatch. When a GradTape
// is active and any input is tracked, the op tracks its output and records a
// backward closure on the tape.

namespace hoflow {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace detail {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool want_grad(Tensor a) { return GradTape::current() && a.tracked(); }

// Index map for right-aligned broadcasting of b over the output shape.
// Fast paths: identical shapes, suffix shapes (bias), and trailing dim 1.
struct Bcast {
  enum Mode { kSame, kSuffix, kLastOne, kGeneric } mode;
  int64_t mod = 1;       // kSuffix: b.size()
  int64_t last = 1;      // kLastOne: size of out's last dim
  std::vector<int64_t> ostride, bstride;  // kGeneric

  Bcast(const Shape& out, const Shape& b, const std::string& op) {
    int n = static_cast<int>(out.size());
    int m = static_cast<int>(b.size());
    check(m <= n, op + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(out));
    bool same = (m == n);
    bool suffix = true;
    for (int i = 0; i < m; ++i) {
      int od = out[static_cast<size_t>(n - 1 - i)];
      int bd = b[static_cast<size_t>(m - 1 - i)];
      check(bd == od || bd == 1,
            op + ": shapes " + shape_str(out) + " and " + shape_str(b) + " do not broadcast");
      if (bd != od) { same = false; suffix = false; }
    }
    if (same && m == n) { mode = kSame; return; }
    if (suffix) { mode = kSuffix; mod = numel(b); return; }
    if (m == n && b[static_cast<size_t>(n - 1)] == 1) {
      bool rest_same = true;
      for (int i = 0; i + 1 < n; ++i)
        if (b[static_cast<size_t>(i)] != out[static_cast<size_t>(i)]) rest_same = false;
      if (rest_same) { mode = kLastOne; last = out[static_cast<size_t>(n - 1)]; return; }
    }
    mode = kGeneric;
    ostride.assign(static_cast<size_t>(n), 0);
    bstride.assign(static_cast<size_t>(n), 0);
    int64_t os = 1, bs = 1;
    for (int i = n - 1; i >= 0; --i) {
      ostride[static_cast<size_t>(i)] = os;
      os *= out[static_cast<size_t>(i)];
      int bi = i - (n - m);
      if (bi >= 0) {
        int bd = b[static_cast<size_t>(bi)];
        bstride[static_cast<size_t>(i)] = (bd == 1) ? 0 : bs;
        bs *= bd;
      }
    }
  }

  int64_t map(int64_t i) const {
    switch (mode) {
      case kSame: return i;
      case kSuffix: return i % mod;
      case kLastOne: return i / last;
      default: {
        int64_t r = i, idx = 0;
        for (size_t d = 0; d < ostride.size(); ++d) {
          int64_t q = r / ostride[d];
          r -= q * ostride[d];
          idx += q * bstride[d];
        }
        return idx;
      }
    }
  }
};

// Shared skeleton for broadcasting binary ops. fa/fb compute the local input
// gradients from (go, a_i, b_i, out_i).
template <class F, class Ga, class Gb>
Tensor binary_op(Tensor a, Tensor b, const char* name, F f, Ga fa, Gb fb) {
  Bcast bc(a.shape(), b.shape(), name);
  Tensor out(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  const int64_t n = a.size();
  if (bc.mode == Bcast::kSame) {
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
  } else {
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[bc.map(i)]);
  }
  if (GradTape::current() && (a.tracked() || b.tracked())) {
    out.track();
    GradTape::current()->record([a, b, out, bc, fa, fb]() mutable {
      const float* go = out.grad();
      const float* pa2 = a.data();
      const float* pb2 = b.data();
      const float* po2 = out.data();
      const int64_t m = out.size();
      float* ga = a.grad();
      float* gb = b.grad();
      for (int64_t i = 0; i < m; ++i) {
        int64_t j = bc.map(i);
        if (ga) ga[i] += fa(go[i], pa2[i], pb2[j], po2[i]);
        if (gb) gb[j] += fb(go[i], pa2[i], pb2[j], po2[i]);
      }
    });
  }
  return out;
}

template <class F, class G>
Tensor unary_op(Tensor a, F f, G g) {
  Tensor out(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  if (want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out, g]() mutable {
      const float* go = out.grad();
      const float* pa2 = a.data();
      const float* po2 = out.data();
      float* ga = a.grad();
      const int64_t n2 = a.size();
      for (int64_t i = 0; i < n2; ++i) ga[i] += go[i] * g(pa2[i], po2[i]);
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(Tensor a, Tensor b) {
  return detail::binary_op(
      a, b, "add", [](float x, float y) { return x + y; },
      [](float go, float, float, float) { return go; },
      [](float go, float, float, float) { return go; });
}

inline Tensor sub(Tensor a, Tensor b) {
  return detail::binary_op(
      a, b, "sub", [](float x, float y) { return x - y; },
      [](float go, float, float, float) { return go; },
      [](float go, float, float, float) { return -go; });
}

inline Tensor mul(Tensor a, Tensor b) {
  return detail::binary_op(
      a, b, "mul", [](float x, float y) { return x * y; },
      [](float go, float, float y, float) { return go * y; },
      [](float go, float x, float, float) { return go * x; });
}

inline Tensor div(Tensor a, Tensor b) {
  return detail::binary_op(
      a, b, "div", [](float x, float y) { return x / y; },
      [](float go, float, float y, float) { return go / y; },
      [](float go, float x, float y, float) { return -go * x / (y * y); });
}

inline Tensor scale(Tensor a, float s) {
  return detail::unary_op(a, [s](float x) { return s * x; },
                          [s](float, float) { return s; });
}

inline Tensor add_scalar(Tensor a, float s) {
  return detail::unary_op(a, [s](float x) { return x + s; },
                          [](float, float) { return 1.0f; });
}

inline Tensor neg(Tensor a) { return scale(a, -1.0f); }

inline Tensor exp_t(Tensor a) {
  return detail::unary_op(a, [](float x) { return std::exp(x); },
                          [](float, float y) { return y; });
}

inline Tensor log_t(Tensor a) {
  return detail::unary_op(a, [](float x) { return std::log(x); },
                          [](float x, float) { return 1.0f / x; });
}

inline Tensor sqrt_t(Tensor a) {
  return detail::unary_op(a, [](float x) { return std::sqrt(x); },
                          [](float, float y) { return 0.5f / y; });
}

// |x|; subgradient 0 at the kink
inline Tensor abs_t(Tensor a) {
  return detail::unary_op(a, [](float x) { return std::fabs(x); },
                          [](float x, float) { return x > 0 ? 1.0f : (x < 0 ? -1.0f : 0.0f); });
}

inline Tensor square(Tensor a) {
  return detail::unary_op(a, [](float x) { return x * x; },
                          [](float x, float) { return 2.0f * x; });
}

inline Tensor tanh_t(Tensor a) {
  return detail::unary_op(a, [](float x) { return std::tanh(x); },
                          [](float, float y) { return 1.0f - y * y; });
}

inline Tensor sigmoid(Tensor a) {
  return detail::unary_op(a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); },
                          [](float, float y) { return y * (1.0f - y); });
}

inline Tensor silu(Tensor a) {
  return detail::unary_op(
      a,
      [](float x) { return x / (1.0f + std::exp(-x)); },
      [](float x, float) {
        float s = 1.0f / (1.0f + std::exp(-x));
        return s * (1.0f + x * (1.0f - s));
      });
}

inline Tensor gelu(Tensor a) {
  constexpr float kInvSqrt2 = 0.70710678118654752440f;
  constexpr float kInvSqrt2Pi = 0.39894228040143267794f;
  return detail::unary_op(
      a,
      [](float x) { return 0.5f * x * (1.0f + std::erf(x * kInvSqrt2)); },
      [](float x, float) {
        float cdf = 0.5f * (1.0f + std::erf(x * kInvSqrt2));
        float pdf = kInvSqrt2Pi * std::exp(-0.5f * x * x);
        return cdf + x * pdf;
      });
}

// pass-through gradient inside [lo, hi], zero outside
inline Tensor clamp(Tensor a, float lo, float hi) {
  return detail::unary_op(
      a, [lo, hi](float x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

inline Tensor stop_gradient(Tensor a) { return a.detached_view(); }

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// 2D x 2D, 3D x 3D (matching batch) or 3D x 2D (shared right operand)
inline Tensor matmul(Tensor a, Tensor b) {
  using detail::check;
  const int an = a.ndim(), bn = b.ndim();
  check((an == 2 && bn == 2) || (an == 3 && (bn == 3 || bn == 2)),
        "matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int B = (an == 3) ? a.dim(0) : 1;
  int M = a.dim(an - 2), K = a.dim(an - 1);
  int Kb = b.dim(bn - 2), N = b.dim(bn - 1);
  check(K == Kb, "matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  if (bn == 3)
    check(b.dim(0) == B, "matmul: batch dims differ, " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  Shape oshape = (an == 3) ? Shape{B, M, N} : Shape{M, N};
  Tensor out(oshape);
  const bool b_shared = (bn == 2);
  for (int i = 0; i < B; ++i) {
    ECMap ma(a.data() + static_cast<int64_t>(i) * M * K, M, K);
    ECMap mb(b.data() + (b_shared ? 0 : static_cast<int64_t>(i) * K * N), K, N);
    EMap mo(out.data() + static_cast<int64_t>(i) * M * N, M, N);
    mo.noalias() = ma * mb;
  }
  if (GradTape::current() && (a.tracked() || b.tracked())) {
    out.track();
    GradTape::current()->record([a, b, out, B, M, K, N, b_shared]() mutable {
      for (int i = 0; i < B; ++i) {
        ECMap go(out.grad() + static_cast<int64_t>(i) * M * N, M, N);
        ECMap ma(a.data() + static_cast<int64_t>(i) * M * K, M, K);
        ECMap mb(b.data() + (b_shared ? 0 : static_cast<int64_t>(i) * K * N), K, N);
        if (a.grad()) {
          EMap ga(a.grad() + static_cast<int64_t>(i) * M * K, M, K);
          ga.noalias() += go * mb.transpose();
        }
        if (b.grad()) {
          EMap gb(b.grad() + (b_shared ? 0 : static_cast<int64_t>(i) * K * N), K, N);
          gb.noalias() += ma.transpose() * go;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

// Aliases storage and gradient; nothing to record.
inline Tensor reshape(Tensor a, Shape shape) { return a.aliased_reshape(std::move(shape)); }

inline Tensor permute(Tensor a, const std::vector<int>& perm) {
  using detail::check;
  const int n = a.ndim();
  check(static_cast<int>(perm.size()) == n, "permute: perm size != rank");
  Shape oshape(static_cast<size_t>(n));
  std::vector<int64_t> astride(static_cast<size_t>(n)), ostride(static_cast<size_t>(n));
  int64_t s = 1;
  for (int i = n - 1; i >= 0; --i) { astride[static_cast<size_t>(i)] = s; s *= a.dim(i); }
  for (int i = 0; i < n; ++i) oshape[static_cast<size_t>(i)] = a.dim(perm[static_cast<size_t>(i)]);
  s = 1;
  for (int i = n - 1; i >= 0; --i) { ostride[static_cast<size_t>(i)] = s; s *= oshape[static_cast<size_t>(i)]; }
  // stride of out dim i in the input
  std::vector<int64_t> instride(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) instride[static_cast<size_t>(i)] = astride[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  Tensor out(oshape);
  const float* pa = a.data();
  float* po = out.data();
  const int64_t total = a.size();
  for (int64_t oi = 0; oi < total; ++oi) {
    int64_t r = oi, ai = 0;
    for (int d = 0; d < n; ++d) {
      int64_t q = r / ostride[static_cast<size_t>(d)];
      r -= q * ostride[static_cast<size_t>(d)];
      ai += q * instride[static_cast<size_t>(d)];
    }
    po[oi] = pa[ai];
  }
  if (detail::want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out, ostride, instride, n]() mutable {
      const float* go = out.grad();
      float* ga = a.grad();
      const int64_t total2 = out.size();
      for (int64_t oi = 0; oi < total2; ++oi) {
        int64_t r = oi, ai = 0;
        for (int d = 0; d < n; ++d) {
          int64_t q = r / ostride[static_cast<size_t>(d)];
          r -= q * ostride[static_cast<size_t>(d)];
          ai += q * instride[static_cast<size_t>(d)];
        }
        ga[ai] += go[oi];
      }
    });
  }
  return out;
}

inline Tensor slice(Tensor a, int axis, int start, int len) {
  using detail::check;
  const int n = a.ndim();
  check(axis >= 0 && axis < n, "slice: bad axis");
  check(start >= 0 && len >= 1 && start + len <= a.dim(axis),
        "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
            ") out of bounds for dim " + std::to_string(a.dim(axis)) + " of " +
            shape_str(a.shape()));
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < n; ++i) inner *= a.dim(i);
  Shape oshape = a.shape();
  oshape[static_cast<size_t>(axis)] = len;
  Tensor out(oshape);
  const int64_t arow = static_cast<int64_t>(a.dim(axis)) * inner;
  const int64_t orow = static_cast<int64_t>(len) * inner;
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * orow, a.data() + o * arow + start * inner,
                static_cast<size_t>(orow) * sizeof(float));
  if (detail::want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out, outer, inner, arow, orow, start]() mutable {
      float* ga = a.grad();
      const float* go = out.grad();
      for (int64_t o = 0; o < outer; ++o) {
        float* dst = ga + o * arow + start * inner;
        const float* src = go + o * orow;
        for (int64_t i = 0; i < orow; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

inline Tensor concat(std::vector<Tensor> parts, int axis) {
  using detail::check;
  check(!parts.empty(), "concat: empty input list");
  const int n = parts[0].ndim();
  check(axis >= 0 && axis < n, "concat: bad axis");
  int cat = 0;
  for (const Tensor& p : parts) {
    check(p.ndim() == n, "concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
    for (int i = 0; i < n; ++i)
      if (i != axis)
        check(p.dim(i) == parts[0].dim(i), "concat: shape mismatch " +
                                               shape_str(parts[0].shape()) + " vs " +
                                               shape_str(p.shape()));
    cat += p.dim(axis);
  }
  Shape oshape = parts[0].shape();
  oshape[static_cast<size_t>(axis)] = cat;
  Tensor out(oshape);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= oshape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < n; ++i) inner *= oshape[static_cast<size_t>(i)];
  const int64_t orow = static_cast<int64_t>(cat) * inner;
  int64_t off = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    const int64_t prow = static_cast<int64_t>(p.dim(axis)) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * orow + off, p.data() + o * prow,
                  static_cast<size_t>(prow) * sizeof(float));
    off += prow;
    any_tracked = any_tracked || p.tracked();
  }
  if (GradTape::current() && any_tracked) {
    out.track();
    GradTape::current()->record([parts, out, outer, inner, orow]() mutable {
      const float* go = out.grad();
      int64_t off2 = 0;
      for (Tensor& p : parts) {
        const int64_t row = p.size() / outer;
        if (p.grad()) {
          float* gp = p.grad();
          for (int64_t o = 0; o < outer; ++o) {
            const float* src = go + o * orow + off2;
            float* dst = gp + o * row;
            for (int64_t i = 0; i < row; ++i) dst[i] += src[i];
          }
        }
        off2 += row;
      }
    });
  }
  return out;
}

inline Tensor gather_rows(Tensor a, const std::vector<int>& idx) {
  using detail::check;
  check(a.ndim() >= 2, "gather_rows: need rank >= 2, got " + shape_str(a.shape()));
  const int rows = a.dim(0);
  const int64_t rowsz = a.size() / rows;
  Shape oshape = a.shape();
  oshape[0] = static_cast<int>(idx.size());
  Tensor out(oshape);
  for (size_t r = 0; r < idx.size(); ++r) {
    check(idx[r] >= 0 && idx[r] < rows, "gather_rows: index " + std::to_string(idx[r]) +
                                            " out of range [0," + std::to_string(rows) + ")");
    std::memcpy(out.data() + static_cast<int64_t>(r) * rowsz,
                a.data() + static_cast<int64_t>(idx[r]) * rowsz,
                static_cast<size_t>(rowsz) * sizeof(float));
  }
  if (detail::want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out, idx, rowsz]() mutable {
      float* ga = a.grad();
      const float* go = out.grad();
      for (size_t r = 0; r < idx.size(); ++r) {
        float* dst = ga + static_cast<int64_t>(idx[r]) * rowsz;
        const float* src = go + static_cast<int64_t>(r) * rowsz;
        for (int64_t i = 0; i < rowsz; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(Tensor a) {
  double acc = 0.0;
  const float* pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) acc += pa[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (detail::want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out]() mutable {
      const float g = out.grad()[0];
      float* ga = a.grad();
      for (int64_t i = 0; i < a.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

inline Tensor mean_all(Tensor a) { return scale(sum_all(a), 1.0f / static_cast<float>(a.size())); }

// sum over the last axis, keepdim
inline Tensor sum_lastdim(Tensor a) {
  using detail::check;
  check(a.ndim() >= 1, "sum_lastdim: rank 0 input");
  const int d = a.dim(a.ndim() - 1);
  const int64_t rows = a.size() / d;
  Shape oshape = a.shape();
  oshape.back() = 1;
  Tensor out(oshape);
  const float* pa = a.data();
  float* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += pa[r * d + i];
    po[r] = static_cast<float>(acc);
  }
  if (detail::want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out, rows, d]() mutable {
      float* ga = a.grad();
      const float* go = out.grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < d; ++i) ga[r * d + i] += go[r];
    });
  }
  return out;
}

// max over a middle or leading axis; argmax routes the gradient.
// Supported: 2D axis 0, 3D axis 1.
inline Tensor reduce_max(Tensor a, int axis) {
  using detail::check;
  check((a.ndim() == 2 && axis == 0) || (a.ndim() == 3 && axis == 1),
        "reduce_max: unsupported rank/axis for " + shape_str(a.shape()));
  const int B = (a.ndim() == 3) ? a.dim(0) : 1;
  const int P = a.dim(a.ndim() - 2);
  const int F = a.dim(a.ndim() - 1);
  Shape oshape = (a.ndim() == 3) ? Shape{B, F} : Shape{F};
  Tensor out(oshape);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(B) * F);
  const float* pa = a.data();
  float* po = out.data();
  for (int b = 0; b < B; ++b) {
    const float* base = pa + static_cast<int64_t>(b) * P * F;
    for (int f = 0; f < F; ++f) {
      float best = base[f];
      int bi = 0;
      for (int p = 1; p < P; ++p) {
        float v = base[static_cast<int64_t>(p) * F + f];
        if (v > best) { best = v; bi = p; }
      }
      po[static_cast<int64_t>(b) * F + f] = best;
      (*argmax)[static_cast<size_t>(b) * F + f] = bi;
    }
  }
  if (detail::want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out, argmax, B, P, F]() mutable {
      float* ga = a.grad();
      const float* go = out.grad();
      for (int b = 0; b < B; ++b)
        for (int f = 0; f < F; ++f) {
          int p = (*argmax)[static_cast<size_t>(b) * F + f];
          ga[(static_cast<int64_t>(b) * P + p) * F + f] += go[static_cast<int64_t>(b) * F + f];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization / attention pieces
// ---------------------------------------------------------------------------

inline Tensor softmax_lastdim(Tensor a) {
  const int d = a.dim(a.ndim() - 1);
  const int64_t rows = a.size() / d;
  Tensor out(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* x = pa + r * d;
    float* y = po + r * d;
    float mx = x[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (int i = 0; i < d; ++i) { y[i] = std::exp(x[i] - mx); z += y[i]; }
    const float inv = static_cast<float>(1.0 / z);
    for (int i = 0; i < d; ++i) y[i] *= inv;
  }
  if (detail::want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out, rows, d]() mutable {
      float* ga = a.grad();
      const float* go = out.grad();
      const float* y = out.data();
      for (int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += static_cast<double>(go[r * d + i]) * y[r * d + i];
        for (int i = 0; i < d; ++i)
          ga[r * d + i] += y[r * d + i] * (go[r * d + i] - static_cast<float>(dot));
      }
    });
  }
  return out;
}

// LayerNorm over the last axis with affine gamma/beta of shape [d].
inline Tensor layer_norm(Tensor a, Tensor gamma, Tensor beta,
                         float eps = 1e-5f) {
  using detail::check;
  const int d = a.dim(a.ndim() - 1);
  check(gamma.size() == d && beta.size() == d,
        "layer_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
            " do not match feature dim " + std::to_string(d));
  const int64_t rows = a.size() / d;
  Tensor out(a.shape());
  auto xhat = std::make_shared<std::vector<float>>(a.size());
  auto rstd = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
  const float* pa = a.data();
  const float* pg = gamma.data();
  const float* pb = beta.data();
  float* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const float* x = pa + r * d;
    double mu = 0.0;
    for (int i = 0; i < d; ++i) mu += x[i];
    mu /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) { double t = x[i] - mu; var += t * t; }
    var /= d;
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*rstd)[static_cast<size_t>(r)] = rs;
    for (int i = 0; i < d; ++i) {
      float h = (x[i] - static_cast<float>(mu)) * rs;
      (*xhat)[static_cast<size_t>(r * d + i)] = h;
      po[r * d + i] = h * pg[i] + pb[i];
    }
  }
  if (GradTape::current() && (a.tracked() || gamma.tracked() || beta.tracked())) {
    out.track();
    GradTape::current()->record([a, gamma, beta, out, xhat, rstd, rows, d]() mutable {
      const float* go = out.grad();
      const float* pg2 = gamma.data();
      float* ga = a.grad();
      float* gg = gamma.grad();
      float* gb = beta.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const float rs = (*rstd)[static_cast<size_t>(r)];
        const float* h = xhat->data() + r * d;
        const float* g = go + r * d;
        if (gg || gb) {
          for (int i = 0; i < d; ++i) {
            if (gg) gg[i] += g[i] * h[i];
            if (gb) gb[i] += g[i];
          }
        }
        if (ga) {
          double s1 = 0.0, s2 = 0.0;
          for (int i = 0; i < d; ++i) {
            double gy = static_cast<double>(g[i]) * pg2[i];
            s1 += gy;
            s2 += gy * h[i];
          }
          s1 /= d;
          s2 /= d;
          for (int i = 0; i < d; ++i) {
            double gy = static_cast<double>(g[i]) * pg2[i];
            ga[r * d + i] += static_cast<float>(rs * (gy - s1 - h[i] * s2));
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// temporal ops
// ---------------------------------------------------------------------------

// x: [Cin, T], w: [Cout, Cin, K], bias: [Cout] (may be undefined)
inline Tensor conv1d(Tensor x, Tensor w, Tensor bias, int stride,
                     int pad) {
  using detail::check;
  check(x.ndim() == 2 && w.ndim() == 3,
        "conv1d: expected [Cin,T] and [Cout,Cin,K], got " + shape_str(x.shape()) + " and " +
            shape_str(w.shape()));
  const int Cin = x.dim(0), T = x.dim(1);
  const int Cout = w.dim(0), K = w.dim(2);
  check(w.dim(1) == Cin, "conv1d: channel mismatch, input " + shape_str(x.shape()) +
                             " vs weight " + shape_str(w.shape()));
  check(stride >= 1 && pad >= 0, "conv1d: bad stride/pad");
  const int Tout = (T + 2 * pad - K) / stride + 1;
  check(Tout >= 1, "conv1d: output length < 1 for input length " + std::to_string(T));
  Tensor out(Shape{Cout, Tout});
  const float* px = x.data();
  const float* pw = w.data();
  float* po = out.data();
  for (int co = 0; co < Cout; ++co) {
    const float b = bias.defined() ? bias.at(co) : 0.0f;
    for (int t = 0; t < Tout; ++t) {
      double acc = b;
      const int t0 = t * stride - pad;
      for (int ci = 0; ci < Cin; ++ci) {
        const float* xr = px + static_cast<int64_t>(ci) * T;
        const float* wr = pw + (static_cast<int64_t>(co) * Cin + ci) * K;
        for (int k = 0; k < K; ++k) {
          const int ti = t0 + k;
          if (ti >= 0 && ti < T) acc += static_cast<double>(xr[ti]) * wr[k];
        }
      }
      po[static_cast<int64_t>(co) * Tout + t] = static_cast<float>(acc);
    }
  }
  const bool track = GradTape::current() &&
                     (x.tracked() || w.tracked() || (bias.defined() && bias.tracked()));
  if (track) {
    out.track();
    GradTape::current()->record([x, w, bias, out, stride, pad, Cin, T, Cout, K, Tout]() mutable {
      const float* go = out.grad();
      const float* px2 = x.data();
      const float* pw2 = w.data();
      float* gx = x.grad();
      float* gw = w.grad();
      float* gb = bias.defined() ? bias.grad() : nullptr;
      for (int co = 0; co < Cout; ++co) {
        for (int t = 0; t < Tout; ++t) {
          const float g = go[static_cast<int64_t>(co) * Tout + t];
          if (gb) gb[co] += g;
          const int t0 = t * stride - pad;
          for (int ci = 0; ci < Cin; ++ci) {
            const int64_t xoff = static_cast<int64_t>(ci) * T;
            const int64_t woff = (static_cast<int64_t>(co) * Cin + ci) * K;
            for (int k = 0; k < K; ++k) {
              const int ti = t0 + k;
              if (ti < 0 || ti >= T) continue;
              if (gx) gx[xoff + ti] += g * pw2[woff + k];
              if (gw) gw[woff + k] += g * px2[xoff + ti];
            }
          }
        }
      }
    });
  }
  return out;
}

// [C, T] -> [C, 2T]: even samples copy, odd samples average neighbours
// (last odd sample repeats the final input sample).
inline Tensor upsample2x_linear(Tensor x) {
  detail::check(x.ndim() == 2, "upsample2x_linear: expected [C,T], got " + shape_str(x.shape()));
  const int C = x.dim(0), T = x.dim(1);
  Tensor out(Shape{C, 2 * T});
  const float* px = x.data();
  float* po = out.data();
  for (int c = 0; c < C; ++c) {
    const float* xr = px + static_cast<int64_t>(c) * T;
    float* yr = po + static_cast<int64_t>(c) * 2 * T;
    for (int t = 0; t < T; ++t) {
      yr[2 * t] = xr[t];
      yr[2 * t + 1] = (t + 1 < T) ? 0.5f * (xr[t] + xr[t + 1]) : xr[t];
    }
  }
  if (detail::want_grad(x)) {
    out.track();
    GradTape::current()->record([x, out, C, T]() mutable {
      float* gx = x.grad();
      const float* go = out.grad();
      for (int c = 0; c < C; ++c) {
        float* gr = gx + static_cast<int64_t>(c) * T;
        const float* gor = go + static_cast<int64_t>(c) * 2 * T;
        for (int t = 0; t < T; ++t) {
          gr[t] += gor[2 * t];
          if (t + 1 < T) {
            gr[t] += 0.5f * gor[2 * t + 1];
            gr[t + 1] += 0.5f * gor[2 * t + 1];
          } else {
            gr[t] += gor[2 * t + 1];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

inline Tensor dropout(Tensor a, float p, Rng& rng, bool training) {
  if (!training || p <= 0.0f) return a;
  detail::check(p < 1.0f, "dropout: p must be < 1");
  auto mask = std::make_shared<std::vector<float>>(a.size());
  const float keep = 1.0f - p;
  for (int64_t i = 0; i < a.size(); ++i)
    (*mask)[static_cast<size_t>(i)] = (rng.uniform() < p) ? 0.0f : 1.0f / keep;
  Tensor out(a.shape());
  const float* pa = a.data();
  float* po = out.data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * (*mask)[static_cast<size_t>(i)];
  if (detail::want_grad(a)) {
    out.track();
    GradTape::current()->record([a, out, mask]() mutable {
      float* ga = a.grad();
      const float* go = out.grad();
      for (int64_t i = 0; i < a.size(); ++i) ga[i] += go[i] * (*mask)[static_cast<size_t>(i)];
    });
  }
  return out;
}

inline Tensor l1_loss(Tensor a, Tensor b) { return mean_all(abs_t(sub(a, b))); }

inline Tensor mse_loss(Tensor a, Tensor b) { return mean_all(square(sub(a, b))); }

inline bool all_finite(Tensor a) {
  const float* p = a.data();
  for (int64_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace hoflow
