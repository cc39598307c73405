#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include "adk/autodiff.hpp"
#include "adk/tensor.hpp"

namespace adk {

enum class Padding { reflect, none };

/// One 2-D convolution layer. Weights are out x in x kh x kw, bias is out.
template <class T>
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_extent = 3;
  Padding padding = Padding::reflect;
  Tensor<T> weights;
  Tensor<T> bias;
};

// ---------------------------------------------------------------------------
// Tensor-level primitives

/// Edge-exclusive mirror padding of an H x W x C tensor.
template <class T>
Tensor<T> reflect_pad(const Tensor<T>& t, std::size_t pad) {
  require_rank(t, 3, "reflect_pad");
  const std::size_t h = t.extent(0), w = t.extent(1), c = t.extent(2);
  if (pad >= std::min(h, w)) {
    throw DimensionError("reflect_pad: pad " + std::to_string(pad) + " requires at least " +
                         std::to_string(pad + 1) + " rows and columns, got " + to_string(t.shape()));
  }
  if (pad == 0) return t;
  const std::size_t ho = h + 2 * pad, wo = w + 2 * pad;
  Tensor<T> out(Shape{ho, wo, c});
  for (std::size_t y = 0; y < ho; ++y) {
    const auto sy = static_cast<std::size_t>(reflect_index(static_cast<std::ptrdiff_t>(y) - pad, h));
    for (std::size_t x = 0; x < wo; ++x) {
      const auto sx = static_cast<std::size_t>(reflect_index(static_cast<std::ptrdiff_t>(x) - pad, w));
      std::memcpy(&out(y, x, 0), &t(sy, sx, 0), c * sizeof(T));
    }
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& t) {
  Tensor<T> out = t;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

/// H x W x C -> (H/s) x (W/s) x (C*s*s); output channel = c*s*s + dy*s + dx.
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& t, std::size_t s) {
  require_rank(t, 3, "pixel_unshuffle");
  const std::size_t h = t.extent(0), w = t.extent(1), c = t.extent(2);
  if (s == 0 || h % s || w % s) {
    throw ShapeError("pixel_unshuffle: scale " + std::to_string(s) + " does not divide " + to_string(t.shape()));
  }
  const std::size_t ho = h / s, wo = w / s, co = c * s * s;
  Tensor<T> out(Shape{ho, wo, co});
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx)
            out(y, x, ch * s * s + dy * s + dx) = t(y * s + dy, x * s + dx, ch);
  return out;
}

/// Inverse of pixel_unshuffle.
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& t, std::size_t s) {
  require_rank(t, 3, "pixel_shuffle");
  const std::size_t h = t.extent(0), w = t.extent(1), ci = t.extent(2);
  if (s == 0 || ci % (s * s)) {
    throw ShapeError("pixel_shuffle: channel count of " + to_string(t.shape()) + " not divisible by s^2");
  }
  const std::size_t c = ci / (s * s);
  Tensor<T> out(Shape{h * s, w * s, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx)
            out(y * s + dy, x * s + dx, ch) = t(y, x, ch * s * s + dy * s + dx);
  return out;
}

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Source indices for every (output position, tap) pair along one axis.
struct AxisTaps {
  std::size_t out = 0;
  std::vector<std::size_t> src;  // out * k entries
};

inline AxisTaps axis_taps(std::size_t n, std::size_t k, Padding padding) {
  AxisTaps a;
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
  if (padding == Padding::reflect) {
    if (static_cast<std::size_t>(r) >= n) {
      throw DimensionError("conv2d: reflection pad " + std::to_string(r) + " needs extent > " +
                           std::to_string(r) + ", got " + std::to_string(n));
    }
    a.out = n;
    a.src.resize(n * k);
    for (std::size_t o = 0; o < n; ++o)
      for (std::size_t t = 0; t < k; ++t)
        a.src[o * k + t] = static_cast<std::size_t>(
            reflect_index(static_cast<std::ptrdiff_t>(o + t) - r, static_cast<std::ptrdiff_t>(n)));
  } else {
    if (k > n) throw DimensionError("conv2d: kernel larger than unpadded input");
    a.out = n - k + 1;
    a.src.resize(a.out * k);
    for (std::size_t o = 0; o < a.out; ++o)
      for (std::size_t t = 0; t < k; ++t) a.src[o * k + t] = o + t;
  }
  return a;
}

struct ConvGeometry {
  std::size_t h, w, cin, cout, k;
  AxisTaps rows, cols;
  std::size_t positions() const { return rows.out * cols.out; }
  std::size_t patch() const { return k * k * cin; }
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias,
                           Padding padding) {
  require_rank(x, 3, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  const std::size_t cout = weights.extent(0), cin = weights.extent(1), k = weights.extent(2);
  if (weights.extent(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd extent, got " + to_string(weights.shape()));
  }
  if (x.extent(2) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(x.extent(2)) + " channels, weights expect " +
                     std::to_string(cin));
  }
  if (bias.rank() != 1 || bias.extent(0) != cout) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()) + " does not match " + std::to_string(cout) +
                     " output channels");
  }
  return ConvGeometry{x.extent(0), x.extent(1), cin, cout, k, axis_taps(x.extent(0), k, padding),
                      axis_taps(x.extent(1), k, padding)};
}

// Patch matrix with columns ordered (ky, kx, ci) so each tap copies a contiguous channel run.
template <class T>
RowMatrix<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
  RowMatrix<T> col(g.positions(), g.patch());
  const std::size_t k = g.k;
  for (std::size_t oy = 0; oy < g.rows.out; ++oy) {
    for (std::size_t ox = 0; ox < g.cols.out; ++ox) {
      T* dst = col.data() + (oy * g.cols.out + ox) * g.patch();
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::size_t sy = g.rows.src[oy * k + ky];
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t sx = g.cols.src[ox * k + kx];
          std::memcpy(dst, x.data() + (sy * g.w + sx) * g.cin, g.cin * sizeof(T));
          dst += g.cin;
        }
      }
    }
  }
  return col;
}

template <class T>
void col2im_add(const RowMatrix<T>& dcol, const ConvGeometry& g, Tensor<T>& dx) {
  const std::size_t k = g.k;
  for (std::size_t oy = 0; oy < g.rows.out; ++oy) {
    for (std::size_t ox = 0; ox < g.cols.out; ++ox) {
      const T* src = dcol.data() + (oy * g.cols.out + ox) * g.patch();
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::size_t sy = g.rows.src[oy * k + ky];
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::size_t sx = g.cols.src[ox * k + kx];
          T* d = dx.data() + (sy * g.w + sx) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) d[c] += src[c];
          src += g.cin;
        }
      }
    }
  }
}

// out x (in, ky, kx) -> out x (ky, kx, in)
template <class T>
RowMatrix<T> weights_tap_major(const Tensor<T>& w, const ConvGeometry& g) {
  RowMatrix<T> m(g.cout, g.patch());
  const std::size_t kk = g.k * g.k;
  for (std::size_t o = 0; o < g.cout; ++o)
    for (std::size_t c = 0; c < g.cin; ++c)
      for (std::size_t t = 0; t < kk; ++t) m(o, t * g.cin + c) = w[(o * g.cin + c) * kk + t];
  return m;
}

template <class T>
void add_tap_major_to_weights(const RowMatrix<T>& m, const ConvGeometry& g, Tensor<T>& dw) {
  const std::size_t kk = g.k * g.k;
  for (std::size_t o = 0; o < g.cout; ++o)
    for (std::size_t c = 0; c < g.cin; ++c)
      for (std::size_t t = 0; t < kk; ++t) dw[(o * g.cin + c) * kk + t] += m(o, t * g.cin + c);
}

template <class T>
Tensor<T> conv_forward(const RowMatrix<T>& col, const RowMatrix<T>& wt, const Tensor<T>& bias,
                       const ConvGeometry& g) {
  Tensor<T> out(Shape{g.rows.out, g.cols.out, g.cout});
  Eigen::Map<RowMatrix<T>> o(out.data(), static_cast<Eigen::Index>(g.positions()),
                             static_cast<Eigen::Index>(g.cout));
  o.noalias() = col * wt.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), static_cast<Eigen::Index>(g.cout));
  o.rowwise() += b;
  return out;
}

}  // namespace detail

/// Cross-correlation plus bias. Reflection padding of (k-1)/2 preserves the spatial extents.
template <class T>
Tensor<T> conv2d(const Tensor<T>& t, const ConvSpec<T>& spec) {
  if (spec.weights.rank() != 4 || spec.weights.extent(0) != spec.out_channels ||
      spec.weights.extent(1) != spec.in_channels || spec.weights.extent(2) != spec.kernel_extent) {
    throw ShapeError("conv2d: ConvSpec fields disagree with weight shape " + to_string(spec.weights.shape()));
  }
  const auto g = detail::conv_geometry(t, spec.weights, spec.bias, spec.padding);
  return detail::conv_forward(detail::im2col(t, g), detail::weights_tap_major(spec.weights, g), spec.bias, g);
}

// ---------------------------------------------------------------------------
// Differentiable operations

namespace ad {

namespace detail {

enum class Broadcast { same, last_axis, scalar };

inline Broadcast classify(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::same;
  if (element_count(b) == 1) return Broadcast::scalar;
  if (a.size() == b.size() && !a.empty() && b.back() == 1 &&
      std::equal(a.begin(), a.end() - 1, b.begin())) {
    return Broadcast::last_axis;
  }
  throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(b) + " onto " + to_string(a));
}

inline std::size_t rhs_index(Broadcast mode, std::size_t i, std::size_t last) {
  switch (mode) {
    case Broadcast::same: return i;
    case Broadcast::last_axis: return i / last;
    case Broadcast::scalar: return 0;
  }
  return 0;
}

// Shared skeleton for the broadcasting binary ops. `f` computes the value,
// `da`/`db` the local partials given (a, b).
template <class T, class F, class DA, class DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* op, F f, DA da, DB db) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Broadcast mode = classify(av.shape(), bv.shape(), op);
  const std::size_t last = av.shape().back();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[rhs_index(mode, i, last)]);
  return a.tape().record(
      std::move(out), {a, b},
      [a, b, mode, last, da, db](Tape<T>& tape, const Tensor<T>& g) {
        const Tensor<T>& av = a.value();
        const Tensor<T>& bv = b.value();
        if (tape.requires_grad(a)) {
          Tensor<T>& ga = tape.grad_buffer(a);
          for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i] * da(av[i], bv[rhs_index(mode, i, last)]);
        }
        if (tape.requires_grad(b)) {
          Tensor<T>& gb = tape.grad_buffer(b);
          for (std::size_t i = 0; i < av.size(); ++i) {
            const std::size_t j = rhs_index(mode, i, last);
            gb[j] += g[i] * db(av[i], bv[j]);
          }
        }
      },
      op);
}

template <class T, class F, class D>
Var<T> unary(const Var<T>& a, const char* op, F f, D d) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return a.tape().record(
      std::move(out), {a},
      [a, d](Tape<T>& tape, const Tensor<T>& g) {
        const Tensor<T>& av = a.value();
        Tensor<T>& ga = tape.grad_buffer(a);
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[i] * d(av[i]);
      },
      op);
}

// Extremum over the last axis; gradient goes to the first extremal element.
template <class T, class Better>
Var<T> extremum_over(const Var<T>& a, const char* op, Better better) {
  const Tensor<T>& av = a.value();
  const std::size_t last = av.shape().back();
  const std::size_t rows = av.size() / last;
  Shape os = av.shape();
  os.back() = 1;
  Tensor<T> out(os);
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = r * last;
    for (std::size_t j = 1; j < last; ++j)
      if (better(av[r * last + j], av[best])) best = r * last + j;
    arg[r] = best;
    out[r] = av[best];
  }
  return a.tape().record(
      std::move(out), {a},
      [a, arg = std::move(arg)](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>& ga = tape.grad_buffer(a);
        for (std::size_t r = 0; r < arg.size(); ++r) ga[arg[r]] += g[r];
      },
      op);
}

}  // namespace detail

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T{1}; },
                        [](T, T) { return T{1}; });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T{1}; },
                        [](T, T) { return T{-1}; });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                        [](T x, T) { return x; });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T{1} / y; },
                        [](T x, T y) { return -x / (y * y); });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  return detail::unary(a, "add_scalar", [c](T x) { return x + c; }, [](T) { return T{1}; });
}

template <class T>
Var<T> mul_scalar(const Var<T>& a, T c) {
  return detail::unary(a, "mul_scalar", [c](T x) { return x * c; }, [c](T) { return c; });
}

/// Subgradient 0 at x == 0.
template <class T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(a, "relu", [](T x) { return x > T{0} ? x : T{0}; },
                       [](T x) { return x > T{0} ? T{1} : T{0}; });
}

/// Subgradient 0 at x == 0.
template <class T>
Var<T> abs(const Var<T>& a) {
  return detail::unary(a, "abs", [](T x) { return x < T{0} ? -x : x; },
                       [](T x) { return x > T{0} ? T{1} : (x < T{0} ? T{-1} : T{0}); });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return detail::unary(a, "square", [](T x) { return x * x; }, [](T x) { return T{2} * x; });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (T v : a.value().values()) s += v;
  return a.tape().record(
      Tensor<T>::scalar(s), {a},
      [a](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>& ga = tape.grad_buffer(a);
        for (auto& v : ga.values()) v += g[0];
      },
      "sum");
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return mul_scalar(sum(a), T{1} / static_cast<T>(a.value().size()));
}

/// Sum over the last axis, keeping it with extent 1.
template <class T>
Var<T> sum_over(const Var<T>& a) {
  const Tensor<T>& av = a.value();
  const std::size_t last = av.shape().back();
  Shape os = av.shape();
  os.back() = 1;
  Tensor<T> out(os);
  for (std::size_t i = 0; i < av.size(); ++i) out[i / last] += av[i];
  return a.tape().record(
      std::move(out), {a},
      [a, last](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>& ga = tape.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i / last];
      },
      "sum_over");
}

template <class T>
Var<T> max_over(const Var<T>& a) {
  return detail::extremum_over(a, "max_over", [](T x, T best) { return x > best; });
}

template <class T>
Var<T> min_over(const Var<T>& a) {
  return detail::extremum_over(a, "min_over", [](T x, T best) { return x < best; });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  return a.tape().record(
      a.value().reshaped(std::move(shape)), {a},
      [a](Tape<T>& tape, const Tensor<T>& g) { tape.accumulate(a, g); }, "reshape");
}

template <class T>
Var<T> reflect_pad(const Var<T>& a, std::size_t pad) {
  return a.tape().record(
      adk::reflect_pad(a.value(), pad), {a},
      [a, pad](Tape<T>& tape, const Tensor<T>& g) {
        Tensor<T>& ga = tape.grad_buffer(a);
        const std::size_t h = ga.extent(0), w = ga.extent(1), c = ga.extent(2);
        for (std::size_t y = 0; y < g.extent(0); ++y) {
          const auto sy = static_cast<std::size_t>(reflect_index(static_cast<std::ptrdiff_t>(y) - pad, h));
          for (std::size_t x = 0; x < g.extent(1); ++x) {
            const auto sx = static_cast<std::size_t>(reflect_index(static_cast<std::ptrdiff_t>(x) - pad, w));
            for (std::size_t ch = 0; ch < c; ++ch) ga(sy, sx, ch) += g(y, x, ch);
          }
        }
      },
      "reflect_pad");
}

template <class T>
Var<T> pixel_unshuffle(const Var<T>& a, std::size_t s) {
  return a.tape().record(
      adk::pixel_unshuffle(a.value(), s), {a},
      [a, s](Tape<T>& tape, const Tensor<T>& g) { tape.accumulate(a, adk::pixel_shuffle(g, s)); },
      "pixel_unshuffle");
}

template <class T>
Var<T> pixel_shuffle(const Var<T>& a, std::size_t s) {
  return a.tape().record(
      adk::pixel_shuffle(a.value(), s), {a},
      [a, s](Tape<T>& tape, const Tensor<T>& g) { tape.accumulate(a, adk::pixel_unshuffle(g, s)); },
      "pixel_shuffle");
}

/// x: H x W x Cin, w: Cout x Cin x k x k, b: Cout.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Padding padding = Padding::reflect) {
  using adk::detail::RowMatrix;
  auto g = adk::detail::conv_geometry(x.value(), w.value(), b.value(), padding);
  RowMatrix<T> col = adk::detail::im2col(x.value(), g);
  RowMatrix<T> wt = adk::detail::weights_tap_major(w.value(), g);
  Tensor<T> out = adk::detail::conv_forward(col, wt, b.value(), g);
  Tape<T>& tape = x.tape();
  const bool keep = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
  if (!keep) {
    col.resize(0, 0);
    wt.resize(0, 0);
  }
  return tape.record(
      std::move(out), {x, w, b},
      [x, w, b, g = std::move(g), col = std::move(col), wt = std::move(wt)](Tape<T>& tape,
                                                                            const Tensor<T>& grad) {
        Eigen::Map<const RowMatrix<T>> go(grad.data(), static_cast<Eigen::Index>(g.positions()),
                                          static_cast<Eigen::Index>(g.cout));
        if (tape.requires_grad(b)) {
          Tensor<T>& gb = tape.grad_buffer(b);
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gbm(gb.data(), static_cast<Eigen::Index>(g.cout));
          gbm += go.colwise().sum();
        }
        if (tape.requires_grad(w)) {
          RowMatrix<T> dwt = go.transpose() * col;
          adk::detail::add_tap_major_to_weights(dwt, g, tape.grad_buffer(w));
        }
        if (tape.requires_grad(x)) {
          RowMatrix<T> dcol = go * wt;
          adk::detail::col2im_add(dcol, g, tape.grad_buffer(x));
        }
      },
      "conv2d");
}

}  // namespace ad

}  // namespace adk
