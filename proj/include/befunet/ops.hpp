#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "befunet/common.hpp"
#include "befunet/tensor.hpp"

// Differentiable op library. Every op computes its forward value, adds
// its multiply-accumulate count to ctx.counter, and, when ctx.tape is
// active and any input is tracked, records a backward closure that
// accumulates into the inputs' grad buffers.
namespace befunet {

namespace detail {

template <typename T>
inline bool want_grad(const Ctx<T>& ctx, std::initializer_list<const Tensor<T>*> ins) {
  if (!ctx.tape) return false;
  for (const Tensor<T>* t : ins)
    if (t->defined() && t->tracked()) return true;
  return false;
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "add: shape mismatch " +
                                            detail::shape_str(a.shape()) + " vs " +
                                            detail::shape_str(b.shape()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.numel();
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* ov = out.value().data();
  for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
  if (detail::want_grad(ctx, {&a, &b})) {
    out.mark_tracked();
    Tensor<T> ta = a, tb = b, to = out;
    ctx.tape->record([ta, tb, to]() mutable {
      const std::vector<T>& go = to.grad();
      if (ta.tracked()) {
        std::vector<T>& g = ta.grad();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
      if (tb.tracked()) {
        std::vector<T>& g = tb.grad();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] - b.value()[i];
  if (detail::want_grad(ctx, {&a, &b})) {
    out.mark_tracked();
    Tensor<T> ta = a, tb = b, to = out;
    ctx.tape->record([ta, tb, to]() mutable {
      const std::vector<T>& go = to.grad();
      if (ta.tracked()) {
        std::vector<T>& g = ta.grad();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
      if (tb.tracked()) {
        std::vector<T>& g = tb.grad();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * b.value()[i];
  if (ctx.counter) ctx.counter->add(n);
  if (detail::want_grad(ctx, {&a, &b})) {
    out.mark_tracked();
    Tensor<T> ta = a, tb = b, to = out;
    ctx.tape->record([ta, tb, to]() mutable {
      const std::vector<T>& go = to.grad();
      if (ta.tracked()) {
        std::vector<T>& g = ta.grad();
        const std::vector<T>& bv = tb.value();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * bv[i];
      }
      if (tb.tracked()) {
        std::vector<T>& g = tb.grad();
        const std::vector<T>& av = ta.value();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> div(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "div: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] / b.value()[i];
  if (ctx.counter) ctx.counter->add(n);
  if (detail::want_grad(ctx, {&a, &b})) {
    out.mark_tracked();
    Tensor<T> ta = a, tb = b, to = out;
    ctx.tape->record([ta, tb, to]() mutable {
      const std::vector<T>& go = to.grad();
      const std::vector<T>& av = ta.value();
      const std::vector<T>& bv = tb.value();
      if (ta.tracked()) {
        std::vector<T>& g = ta.grad();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] / bv[i];
      }
      if (tb.tracked()) {
        std::vector<T>& g = tb.grad();
        for (std::size_t i = 0; i < go.size(); ++i)
          g[i] -= go[i] * av[i] / (bv[i] * bv[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scalar-broadcast ops.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> scale(Ctx<T>& ctx, const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] * c;
  if (ctx.counter) ctx.counter->add(n);
  if (detail::want_grad(ctx, {&a})) {
    out.mark_tracked();
    Tensor<T> ta = a, to = out;
    ctx.tape->record([ta, to, c]() mutable {
      if (!ta.tracked()) return;
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = ta.grad();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(Ctx<T>& ctx, const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = a.value()[i] + c;
  if (detail::want_grad(ctx, {&a})) {
    out.mark_tracked();
    Tensor<T> ta = a, to = out;
    ctx.tape->record([ta, to]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = ta.grad();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> neg(Ctx<T>& ctx, const Tensor<T>& a) {
  return scale(ctx, a, T(-1));
}

// out[i,j] = x[i,j] + b[j]
template <typename T>
Tensor<T> add_rowwise(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& b) {
  detail::check(x.rank() == 2 && b.rank() == 1 && x.dim(1) == b.dim(0),
                "add_rowwise: x " + detail::shape_str(x.shape()) + " vs b " +
                    detail::shape_str(b.shape()));
  const int n = x.dim(0), d = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out.value()[static_cast<std::size_t>(i) * d + j] =
          x.value()[static_cast<std::size_t>(i) * d + j] + b.value()[j];
  if (detail::want_grad(ctx, {&x, &b})) {
    out.mark_tracked();
    Tensor<T> tx = x, tb = b, to = out;
    ctx.tape->record([tx, tb, to, n, d]() mutable {
      const std::vector<T>& go = to.grad();
      if (tx.tracked()) {
        std::vector<T>& g = tx.grad();
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
      if (tb.tracked()) {
        std::vector<T>& g = tb.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < d; ++j) g[j] += go[static_cast<std::size_t>(i) * d + j];
      }
    });
  }
  return out;
}

// Repeat a [1,D] row n times -> [n,D].
template <typename T>
Tensor<T> broadcast_rows(Ctx<T>& ctx, const Tensor<T>& r, int n) {
  detail::check(r.rank() == 2 && r.dim(0) == 1, "broadcast_rows: expects [1,D]");
  const int d = r.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out.value()[static_cast<std::size_t>(i) * d + j] = r.value()[j];
  if (detail::want_grad(ctx, {&r})) {
    out.mark_tracked();
    Tensor<T> tr = r, to = out;
    ctx.tape->record([tr, to, n, d]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = tr.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) g[j] += go[static_cast<std::size_t>(i) * d + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Ctx<T>& ctx, const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                "matmul: incompatible " + detail::shape_str(a.shape()) + " x " +
                    detail::shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out = Tensor<T>::zeros({m, n});
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* ov = out.value().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const T aip = av[static_cast<std::size_t>(i) * k + p];
      const T* brow = bv + static_cast<std::size_t>(p) * n;
      T* orow = ov + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  if (ctx.counter)
    ctx.counter->add(static_cast<std::uint64_t>(m) * n * k);
  if (detail::want_grad(ctx, {&a, &b})) {
    out.mark_tracked();
    Tensor<T> ta = a, tb = b, to = out;
    ctx.tape->record([ta, tb, to, m, k, n]() mutable {
      const T* go = to.grad().data();
      if (ta.tracked()) {
        T* ga = ta.grad().data();
        const T* bv2 = tb.value().data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            T acc = 0;
            const T* gr = go + static_cast<std::size_t>(i) * n;
            const T* br = bv2 + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc += gr[j] * br[j];
            ga[static_cast<std::size_t>(i) * k + p] += acc;
          }
      }
      if (tb.tracked()) {
        T* gb = tb.grad().data();
        const T* av2 = ta.value().data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const T aip = av2[static_cast<std::size_t>(i) * k + p];
            const T* gr = go + static_cast<std::size_t>(i) * n;
            T* gbr = gb + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) gbr[j] += aip * gr[j];
          }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(Ctx<T>& ctx, const Tensor<T>& x) {
  detail::check(x.rank() == 2, "transpose2d: expects rank 2");
  const int m = x.dim(0), n = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.value()[static_cast<std::size_t>(j) * m + i] =
          x.value()[static_cast<std::size_t>(i) * n + j];
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to, m, n]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = tx.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          g[static_cast<std::size_t>(i) * n + j] += go[static_cast<std::size_t>(j) * m + i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(Ctx<T>& ctx, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.value()[i] = x.value()[i] > T(0) ? x.value()[i] : T(0);
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to]() mutable {
      const std::vector<T>& go = to.grad();
      const std::vector<T>& xv = tx.value();
      std::vector<T>& g = tx.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (xv[i] > T(0)) g[i] += go[i];
    });
  }
  return out;
}

// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(Ctx<T>& ctx, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = out.numel();
  const T inv_sqrt2 = T(0.70710678118654752440);
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x.value()[i];
    out.value()[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to, inv_sqrt2]() mutable {
      const std::vector<T>& go = to.grad();
      const std::vector<T>& xv = tx.value();
      std::vector<T>& g = tx.grad();
      const T inv_sqrt2pi = T(0.39894228040143267794);
      for (std::size_t i = 0; i < go.size(); ++i) {
        const T v = xv[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        g[i] += go[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Ctx<T>& ctx, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.value()[i] = T(1) / (T(1) + std::exp(-x.value()[i]));
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to]() mutable {
      const std::vector<T>& go = to.grad();
      const std::vector<T>& ov = to.value();
      std::vector<T>& g = tx.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        g[i] += go[i] * ov[i] * (T(1) - ov[i]);
    });
  }
  return out;
}

// Natural log; caller guarantees positive inputs (clamp first).
template <typename T>
Tensor<T> log_elem(Ctx<T>& ctx, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.value()[i] = std::log(x.value()[i]);
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to]() mutable {
      const std::vector<T>& go = to.grad();
      const std::vector<T>& xv = tx.value();
      std::vector<T>& g = tx.grad();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] / xv[i];
    });
  }
  return out;
}

// Subgradient zero outside [lo, hi].
template <typename T>
Tensor<T> clamp(Ctx<T>& ctx, const Tensor<T>& x, T lo, T hi) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i)
    out.value()[i] = std::min(hi, std::max(lo, x.value()[i]));
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to, lo, hi]() mutable {
      const std::vector<T>& go = to.grad();
      const std::vector<T>& xv = tx.value();
      std::vector<T>& g = tx.grad();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (xv[i] > lo && xv[i] < hi) g[i] += go[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and layer norm, applied over the last dimension.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(Ctx<T>& ctx, const Tensor<T>& x) {
  detail::check(x.rank() >= 1, "softmax_rows: rank >= 1");
  const int d = x.dim(x.rank() - 1);
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * d;
    T* or_ = out.value().data() + r * d;
    T mx = xr[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    T denom = 0;
    for (int j = 0; j < d; ++j) {
      or_[j] = std::exp(xr[j] - mx);
      denom += or_[j];
    }
    for (int j = 0; j < d; ++j) or_[j] /= denom;
  }
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to, rows, d]() mutable {
      const std::vector<T>& go = to.grad();
      const std::vector<T>& ov = to.value();
      std::vector<T>& g = tx.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = go.data() + r * d;
        const T* yr = ov.data() + r * d;
        T dot = 0;
        for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
        T* gx = g.data() + r * d;
        for (int j = 0; j < d; ++j) gx[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

// y = gamma * (x - mean) / sqrt(var + eps) + beta, per row over the last dim.
template <typename T>
Tensor<T> layer_norm_rows(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& gamma,
                          const Tensor<T>& beta, T eps = T(1e-5)) {
  const int d = x.dim(x.rank() - 1);
  detail::check(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 &&
                    beta.dim(0) == d,
                "layer_norm_rows: affine params must be [" + std::to_string(d) + "]");
  const std::size_t rows = x.numel() / static_cast<std::size_t>(d);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().data() + r * d;
    T mu = 0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_sigma[r] = is;
    T* or_ = out.value().data() + r * d;
    for (int j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * is;
      or_[j] = gamma.value()[j] * xhat[r * d + j] + beta.value()[j];
    }
  }
  if (detail::want_grad(ctx, {&x, &gamma, &beta})) {
    out.mark_tracked();
    Tensor<T> tx = x, tg = gamma, tb = beta, to = out;
    auto xh = std::make_shared<std::vector<T>>(std::move(xhat));
    auto isv = std::make_shared<std::vector<T>>(std::move(inv_sigma));
    ctx.tape->record([tx, tg, tb, to, xh, isv, rows, d]() mutable {
      const std::vector<T>& go = to.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = go.data() + r * d;
        const T* xhr = xh->data() + r * d;
        if (tg.tracked()) {
          std::vector<T>& gg = tg.grad();
          for (int j = 0; j < d; ++j) gg[j] += gr[j] * xhr[j];
        }
        if (tb.tracked()) {
          std::vector<T>& gb = tb.grad();
          for (int j = 0; j < d; ++j) gb[j] += gr[j];
        }
        if (tx.tracked()) {
          // dx = is * (dyg - mean(dyg) - xhat * mean(dyg*xhat))
          const std::vector<T>& gv = tg.value();
          T m1 = 0, m2 = 0;
          for (int j = 0; j < d; ++j) {
            const T dyg = gr[j] * gv[j];
            m1 += dyg;
            m2 += dyg * xhr[j];
          }
          m1 /= T(d);
          m2 /= T(d);
          std::vector<T>& gx = tx.grad();
          const T is = (*isv)[r];
          for (int j = 0; j < d; ++j) {
            const T dyg = gr[j] * gv[j];
            gx[r * d + j] += is * (dyg - m1 - xhr[j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spatial ops on [H, W, C] maps.
// ---------------------------------------------------------------------------

// Out-of-bounds reads: zeros, or the clamped border pixel. Difference
// convolutions use replicate so borders of a constant map stay silent.
enum class PadMode { kZero, kReplicate };

template <typename T>
Tensor<T> conv2d(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& bias, int stride, int pad,
                 PadMode pad_mode = PadMode::kZero) {
  detail::check(x.rank() == 3 && w.rank() == 4, "conv2d: x must be [H,W,C], w [kh,kw,Ci,Co]");
  const int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const int kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  detail::check(w.dim(2) == ci, "conv2d: input has " + std::to_string(ci) +
                                    " channels, kernel expects " + std::to_string(w.dim(2)));
  if (bias.defined())
    detail::check(bias.rank() == 1 && bias.dim(0) == co, "conv2d: bias must be [Co]");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  detail::check(ho > 0 && wo > 0, "conv2d: output would be empty");
  Tensor<T> out = Tensor<T>::zeros({ho, wo, co});
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  T* ov = out.value().data();
  if (bias.defined()) {
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int c = 0; c < co; ++c)
          ov[(static_cast<std::size_t>(oy) * wo + ox) * co + c] = bias.value()[c];
  }
  const bool rep = pad_mode == PadMode::kReplicate;
  auto src = [rep](int v, int lim) {
    if (v >= 0 && v < lim) return v;
    return rep ? std::clamp(v, 0, lim - 1) : -1;
  };
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      T* orow = ov + (static_cast<std::size_t>(oy) * wo + ox) * co;
      for (int dy = 0; dy < kh; ++dy) {
        const int iy = src(oy * stride + dy - pad, h);
        if (iy < 0) continue;
        for (int dx = 0; dx < kw; ++dx) {
          const int ix = src(ox * stride + dx - pad, wd);
          if (ix < 0) continue;
          const T* xrow = xv + (static_cast<std::size_t>(iy) * wd + ix) * ci;
          const T* wpos = wv + (static_cast<std::size_t>(dy) * kw + dx) * ci * co;
          for (int c = 0; c < ci; ++c) {
            const T xvc = xrow[c];
            const T* wrow = wpos + static_cast<std::size_t>(c) * co;
            for (int o = 0; o < co; ++o) orow[o] += xvc * wrow[o];
          }
        }
      }
    }
  }
  if (ctx.counter)
    ctx.counter->add(static_cast<std::uint64_t>(ho) * wo * kh * kw * ci * co);
  if (detail::want_grad(ctx, {&x, &w, &bias})) {
    out.mark_tracked();
    Tensor<T> tx = x, tw = w, tb = bias, to = out;
    ctx.tape->record([tx, tw, tb, to, src, h, wd, ci, kh, kw, co, ho, wo, stride,
                      pad]() mutable {
      const T* go = to.grad().data();
      const bool gx = tx.tracked(), gw = tw.tracked();
      T* gxv = gx ? tx.grad().data() : nullptr;
      T* gwv = gw ? tw.grad().data() : nullptr;
      const T* xv2 = tx.value().data();
      const T* wv2 = tw.value().data();
      if (tb.defined() && tb.tracked()) {
        std::vector<T>& gb = tb.grad();
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox)
            for (int o = 0; o < co; ++o)
              gb[o] += go[(static_cast<std::size_t>(oy) * wo + ox) * co + o];
      }
      if (!gx && !gw) return;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const T* grow = go + (static_cast<std::size_t>(oy) * wo + ox) * co;
          for (int dy = 0; dy < kh; ++dy) {
            const int iy = src(oy * stride + dy - pad, h);
            if (iy < 0) continue;
            for (int dx = 0; dx < kw; ++dx) {
              const int ix = src(ox * stride + dx - pad, wd);
              if (ix < 0) continue;
              const std::size_t xoff = (static_cast<std::size_t>(iy) * wd + ix) * ci;
              const std::size_t woff = (static_cast<std::size_t>(dy) * kw + dx) * ci * co;
              for (int c = 0; c < ci; ++c) {
                const T* wrow = wv2 + woff + static_cast<std::size_t>(c) * co;
                if (gx) {
                  T acc = 0;
                  for (int o = 0; o < co; ++o) acc += grow[o] * wrow[o];
                  gxv[xoff + c] += acc;
                }
                if (gw) {
                  const T xvc = xv2[xoff + c];
                  T* gwrow = gwv + woff + static_cast<std::size_t>(c) * co;
                  for (int o = 0; o < co; ++o) gwrow[o] += xvc * grow[o];
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& w, int stride,
                 int pad, PadMode pad_mode = PadMode::kZero) {
  return conv2d(ctx, x, w, Tensor<T>(), stride, pad, pad_mode);
}

// One filter per channel: x [H,W,C], w [kh,kw,C].
template <typename T>
Tensor<T> depthwise_conv2d(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& bias, int stride, int pad,
                           PadMode pad_mode = PadMode::kZero) {
  detail::check(x.rank() == 3 && w.rank() == 3, "depthwise_conv2d: x [H,W,C], w [kh,kw,C]");
  const int h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const int kh = w.dim(0), kw = w.dim(1);
  detail::check(w.dim(2) == c, "depthwise_conv2d: channel mismatch: input " +
                                   std::to_string(c) + ", kernel " + std::to_string(w.dim(2)));
  if (bias.defined())
    detail::check(bias.rank() == 1 && bias.dim(0) == c, "depthwise_conv2d: bias must be [C]");
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  detail::check(ho > 0 && wo > 0, "depthwise_conv2d: output would be empty");
  Tensor<T> out = Tensor<T>::zeros({ho, wo, c});
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  T* ov = out.value().data();
  const bool rep = pad_mode == PadMode::kReplicate;
  auto src = [rep](int v, int lim) {
    if (v >= 0 && v < lim) return v;
    return rep ? std::clamp(v, 0, lim - 1) : -1;
  };
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      T* orow = ov + (static_cast<std::size_t>(oy) * wo + ox) * c;
      if (bias.defined())
        for (int ch = 0; ch < c; ++ch) orow[ch] = bias.value()[ch];
      for (int dy = 0; dy < kh; ++dy) {
        const int iy = src(oy * stride + dy - pad, h);
        if (iy < 0) continue;
        for (int dx = 0; dx < kw; ++dx) {
          const int ix = src(ox * stride + dx - pad, wd);
          if (ix < 0) continue;
          const T* xrow = xv + (static_cast<std::size_t>(iy) * wd + ix) * c;
          const T* wrow = wv + (static_cast<std::size_t>(dy) * kw + dx) * c;
          for (int ch = 0; ch < c; ++ch) orow[ch] += xrow[ch] * wrow[ch];
        }
      }
    }
  }
  if (ctx.counter)
    ctx.counter->add(static_cast<std::uint64_t>(ho) * wo * kh * kw * c);
  if (detail::want_grad(ctx, {&x, &w, &bias})) {
    out.mark_tracked();
    Tensor<T> tx = x, tw = w, tb = bias, to = out;
    ctx.tape->record([tx, tw, tb, to, src, h, wd, c, kh, kw, ho, wo, stride,
                      pad]() mutable {
      const T* go = to.grad().data();
      const bool gx = tx.tracked(), gw = tw.tracked();
      T* gxv = gx ? tx.grad().data() : nullptr;
      T* gwv = gw ? tw.grad().data() : nullptr;
      const T* xv2 = tx.value().data();
      const T* wv2 = tw.value().data();
      if (tb.defined() && tb.tracked()) {
        std::vector<T>& gb = tb.grad();
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox)
            for (int ch = 0; ch < c; ++ch)
              gb[ch] += go[(static_cast<std::size_t>(oy) * wo + ox) * c + ch];
      }
      if (!gx && !gw) return;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const T* grow = go + (static_cast<std::size_t>(oy) * wo + ox) * c;
          for (int dy = 0; dy < kh; ++dy) {
            const int iy = src(oy * stride + dy - pad, h);
            if (iy < 0) continue;
            for (int dx = 0; dx < kw; ++dx) {
              const int ix = src(ox * stride + dx - pad, wd);
              if (ix < 0) continue;
              const std::size_t xoff = (static_cast<std::size_t>(iy) * wd + ix) * c;
              const std::size_t woff = (static_cast<std::size_t>(dy) * kw + dx) * c;
              for (int ch = 0; ch < c; ++ch) {
                if (gx) gxv[xoff + ch] += grow[ch] * wv2[woff + ch];
                if (gw) gwv[woff + ch] += grow[ch] * xv2[xoff + ch];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(Ctx<T>& ctx, const Tensor<T>& x, int k = 2, int stride = 2) {
  detail::check(x.rank() == 3, "maxpool2d: expects [H,W,C]");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int ho = (h - k) / stride + 1;
  const int wo = (w - k) / stride + 1;
  Tensor<T> out = Tensor<T>::zeros({ho, wo, c});
  std::vector<int> argmax(out.numel());
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        T best = -std::numeric_limits<T>::infinity();
        int bi = 0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            const int iy = oy * stride + dy, ix = ox * stride + dx;
            const int idx = (iy * w + ix) * c + ch;
            if (x.value()[idx] > best) {
              best = x.value()[idx];
              bi = idx;
            }
          }
        const std::size_t oi = (static_cast<std::size_t>(oy) * wo + ox) * c + ch;
        out.value()[oi] = best;
        argmax[oi] = bi;
      }
    }
  }
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    auto am = std::make_shared<std::vector<int>>(std::move(argmax));
    ctx.tape->record([tx, to, am]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = tx.grad();
      for (std::size_t i = 0; i < go.size(); ++i) g[(*am)[i]] += go[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(Ctx<T>& ctx, const Tensor<T>& x, int factor) {
  detail::check(x.rank() == 3 && factor >= 1, "upsample_nearest: expects [H,W,C]");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int ho = h * factor, wo = w * factor;
  Tensor<T> out = Tensor<T>::zeros({ho, wo, c});
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const std::size_t src = (static_cast<std::size_t>(oy / factor) * w + ox / factor) * c;
      const std::size_t dst = (static_cast<std::size_t>(oy) * wo + ox) * c;
      for (int ch = 0; ch < c; ++ch) out.value()[dst + ch] = x.value()[src + ch];
    }
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to, h, w, c, factor]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = tx.grad();
      const int wo2 = w * factor;
      for (int oy = 0; oy < h * factor; ++oy)
        for (int ox = 0; ox < wo2; ++ox) {
          const std::size_t src = (static_cast<std::size_t>(oy / factor) * w + ox / factor) * c;
          const std::size_t dst = (static_cast<std::size_t>(oy) * wo2 + ox) * c;
          for (int ch = 0; ch < c; ++ch) g[src + ch] += go[dst + ch];
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Ctx<T>& ctx, const Tensor<T>& x, std::vector<int> shape) {
  detail::check(detail::shape_numel(shape) == x.numel(),
                "reshape: element count mismatch " + detail::shape_str(x.shape()) +
                    " -> " + detail::shape_str(shape));
  Tensor<T> out = Tensor<T>::from_data(std::move(shape), x.value());
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = tx.grad();
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    });
  }
  return out;
}

// Concatenate along `axis`; shapes must agree elsewhere.
template <typename T>
Tensor<T> concat(Ctx<T>& ctx, const std::vector<Tensor<T>>& parts, int axis) {
  detail::check(!parts.empty(), "concat: no inputs");
  const int rank = parts[0].rank();
  detail::check(axis >= 0 && axis < rank, "concat: bad axis");
  std::vector<int> shape = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    detail::check(p.rank() == rank, "concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis)
        detail::check(p.dim(i) == shape[static_cast<std::size_t>(i)],
                      "concat: shape mismatch off-axis");
    total += p.dim(axis);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  Tensor<T> out = Tensor<T>::zeros(shape);
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(shape[i]);
  for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(shape[i]);
  const std::size_t out_block = static_cast<std::size_t>(total) * inner;
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t blk = static_cast<std::size_t>(p.dim(axis)) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(p.value().begin() + o * blk, p.value().begin() + (o + 1) * blk,
                out.value().begin() + o * out_block + off);
    off += blk;
  }
  bool any = false;
  for (const auto& p : parts)
    if (p.tracked()) any = true;
  if (ctx.tape && any) {
    out.mark_tracked();
    std::vector<Tensor<T>> tp = parts;
    Tensor<T> to = out;
    auto offs = std::make_shared<std::vector<std::size_t>>(std::move(offsets));
    ctx.tape->record([tp, to, offs, outer, inner, out_block]() mutable {
      const std::vector<T>& go = to.grad();
      for (std::size_t pi = 0; pi < tp.size(); ++pi) {
        if (!tp[pi].tracked()) continue;
        std::vector<T>& g = tp[pi].grad();
        const std::size_t blk = g.size() / outer;
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < blk; ++i)
            g[o * blk + i] += go[o * out_block + (*offs)[pi] + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(Ctx<T>& ctx, const std::vector<Tensor<T>>& parts) {
  return concat(ctx, parts, 0);
}

// Slice `len` entries starting at `start` along `axis`.
template <typename T>
Tensor<T> narrow(Ctx<T>& ctx, const Tensor<T>& x, int axis, int start, int len) {
  const int rank = x.rank();
  detail::check(axis >= 0 && axis < rank, "narrow: bad axis");
  detail::check(start >= 0 && len > 0 && start + len <= x.dim(axis),
                "narrow: range out of bounds");
  std::vector<int> shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = len;
  Tensor<T> out = Tensor<T>::zeros(shape);
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(x.dim(i));
  for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(x.dim(i));
  const std::size_t in_block = static_cast<std::size_t>(x.dim(axis)) * inner;
  const std::size_t out_block = static_cast<std::size_t>(len) * inner;
  const std::size_t skip = static_cast<std::size_t>(start) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(x.value().begin() + o * in_block + skip,
              x.value().begin() + o * in_block + skip + out_block,
              out.value().begin() + o * out_block);
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to, outer, in_block, out_block, skip]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = tx.grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < out_block; ++i)
          g[o * in_block + skip + i] += go[o * out_block + i];
    });
  }
  return out;
}

// Select rows of a [N, D] matrix by index; indices may repeat.
template <typename T>
Tensor<T> gather_rows(Ctx<T>& ctx, const Tensor<T>& x, std::vector<int> idx) {
  detail::check(x.rank() == 2, "gather_rows: expects [N,D]");
  const int n = x.dim(0), d = x.dim(1);
  for (int i : idx)
    detail::check(i >= 0 && i < n, "gather_rows: index out of range");
  Tensor<T> out = Tensor<T>::zeros({static_cast<int>(idx.size()), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy(x.value().begin() + static_cast<std::size_t>(idx[r]) * d,
              x.value().begin() + static_cast<std::size_t>(idx[r]) * d + d,
              out.value().begin() + r * d);
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    auto ids = std::make_shared<std::vector<int>>(std::move(idx));
    ctx.tape->record([tx, to, ids, d]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = tx.grad();
      for (std::size_t r = 0; r < ids->size(); ++r) {
        const std::size_t src = r * d;
        const std::size_t dst = static_cast<std::size_t>((*ids)[r]) * d;
        for (int j = 0; j < d; ++j) g[dst + j] += go[src + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(Ctx<T>& ctx, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = 0;
  for (const T v : x.value()) acc += v;
  out.value()[0] = acc;
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to]() mutable {
      const T g = to.grad()[0];
      std::vector<T>& gx = tx.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(Ctx<T>& ctx, const Tensor<T>& x) {
  Tensor<T> s = sum_all(ctx, x);
  return scale(ctx, s, T(1) / static_cast<T>(x.numel()));
}

// Column means of a [N, D] matrix -> [1, D].
template <typename T>
Tensor<T> mean_rows(Ctx<T>& ctx, const Tensor<T>& x) {
  detail::check(x.rank() == 2, "mean_rows: expects [N,D]");
  const int n = x.dim(0), d = x.dim(1);
  Tensor<T> out = Tensor<T>::zeros({1, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      out.value()[j] += x.value()[static_cast<std::size_t>(i) * d + j];
  for (int j = 0; j < d; ++j) out.value()[j] /= T(n);
  if (detail::want_grad(ctx, {&x})) {
    out.mark_tracked();
    Tensor<T> tx = x, to = out;
    ctx.tape->record([tx, to, n, d]() mutable {
      const std::vector<T>& go = to.grad();
      std::vector<T>& g = tx.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          g[static_cast<std::size_t>(i) * d + j] += go[j] / T(n);
    });
  }
  return out;
}

// x [N,Din] @ w [Din,Dout] (+ b).
template <typename T>
Tensor<T> linear(Ctx<T>& ctx, const Tensor<T>& x, const Tensor<T>& w,
                 const Tensor<T>& b = Tensor<T>()) {
  Tensor<T> y = matmul(ctx, x, w);
  if (b.defined()) y = add_rowwise(ctx, y, b);
  return y;
}

}  // namespace befunet
