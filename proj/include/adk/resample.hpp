#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "adk/autodiff.hpp"
#include "adk/error.hpp"
#include "adk/tensor.hpp"

namespace adk::resample {

/// HR-grid position of an LR pixel centre. (u, v) are column/row coordinates;
/// the anchor is the HR pixel the kernel window is centred on.
struct ProjectedCenter {
  double u = 0.0;
  double v = 0.0;
  std::ptrdiff_t anchor_u = 0;
  std::ptrdiff_t anchor_v = 0;
};

/// floor((i + 0.5) * s), i.e. round-half-up of the projected coordinate, in exact integer arithmetic.
inline std::ptrdiff_t anchor_index(std::size_t i, std::size_t s) {
  return static_cast<std::ptrdiff_t>(((2 * i + 1) * s) / 2);
}

inline double projected_coordinate(std::size_t i, std::size_t s) {
  return (static_cast<double>(i) + 0.5) * static_cast<double>(s) - 0.5;
}

/// Projects LR pixel (x, y) of a w x h grid onto the HR grid at scale s.
inline ProjectedCenter project(std::size_t x, std::size_t y, std::size_t s, std::size_t w, std::size_t h) {
  if (x >= w || y >= h) {
    throw UsageError("project: LR index (" + std::to_string(x) + ", " + std::to_string(y) +
                     ") outside a " + std::to_string(w) + "x" + std::to_string(h) + " grid");
  }
  if (s == 0) throw UsageError("project: scale must be positive");
  return ProjectedCenter{projected_coordinate(x, s), projected_coordinate(y, s), anchor_index(x, s),
                         anchor_index(y, s)};
}

namespace detail {

struct KernelGeometry {
  std::size_t hr_h, hr_w, channels, lr_h, lr_w, k;
};

template <class T>
KernelGeometry kernel_geometry(const Tensor<T>& image, const Tensor<T>& kernels, std::size_t s) {
  require_rank(image, 3, "apply_kernels image");
  require_rank(kernels, 5, "apply_kernels kernels");
  const std::size_t hh = image.extent(0), ww = image.extent(1), ch = image.extent(2);
  if (s == 0 || hh % s || ww % s) {
    throw ShapeError("apply_kernels: scale " + std::to_string(s) + " does not divide " + to_string(image.shape()));
  }
  const std::size_t k = kernels.extent(3);
  if (kernels.extent(0) != hh / s || kernels.extent(1) != ww / s || kernels.extent(2) != ch ||
      kernels.extent(4) != k || k % 2 == 0) {
    throw ShapeError("apply_kernels: kernel field " + to_string(kernels.shape()) + " does not match image " +
                     to_string(image.shape()) + " at scale " + std::to_string(s));
  }
  return KernelGeometry{hh, ww, ch, hh / s, ww / s, k};
}

// Reflected HR source index for each (LR index, tap) pair along one axis.
inline std::vector<std::size_t> window_sources(std::size_t lr_n, std::size_t hr_n, std::size_t s, std::size_t k) {
  std::vector<std::size_t> src(lr_n * k);
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t i = 0; i < lr_n; ++i) {
    const std::ptrdiff_t a = anchor_index(i, s);
    for (std::size_t t = 0; t < k; ++t) {
      src[i * k + t] = static_cast<std::size_t>(
          reflect_index(a + static_cast<std::ptrdiff_t>(t) - r, static_cast<std::ptrdiff_t>(hr_n)));
    }
  }
  return src;
}

}  // namespace detail

/// Weighted sum of each LR pixel's k x k HR window (reflection at borders).
/// image: H x W x C; kernels: (H/s) x (W/s) x C x k x k.
template <class T>
Tensor<T> apply_kernels(const Tensor<T>& image, const Tensor<T>& kernels, std::size_t s) {
  const auto g = detail::kernel_geometry(image, kernels, s);
  const auto rows = detail::window_sources(g.lr_h, g.hr_h, s, g.k);
  const auto cols = detail::window_sources(g.lr_w, g.hr_w, s, g.k);
  const std::size_t kk = g.k * g.k;
  Tensor<T> out(Shape{g.lr_h, g.lr_w, g.channels});
  for (std::size_t y = 0; y < g.lr_h; ++y) {
    for (std::size_t x = 0; x < g.lr_w; ++x) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        const T* kern = kernels.data() + ((y * g.lr_w + x) * g.channels + c) * kk;
        T acc{0};
        for (std::size_t a = 0; a < g.k; ++a) {
          const std::size_t sy = rows[y * g.k + a];
          for (std::size_t b = 0; b < g.k; ++b) acc += kern[a * g.k + b] * image(sy, cols[x * g.k + b], c);
        }
        out(y, x, c) = acc;
      }
    }
  }
  return out;
}

enum class Method { nearest, box, bicubic, lanczos3 };

inline Method parse_method(std::string_view name) {
  if (name == "nearest") return Method::nearest;
  if (name == "box") return Method::box;
  if (name == "bicubic") return Method::bicubic;
  if (name == "lanczos3" || name == "lanczos") return Method::lanczos3;
  throw ConfigError("unknown resampling method '" + std::string(name) + "' (nearest, box, bicubic, lanczos3)");
}

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::nearest: return "nearest";
    case Method::box: return "box";
    case Method::bicubic: return "bicubic";
    case Method::lanczos3: return "lanczos3";
  }
  return "?";
}

/// Keys cubic convolution kernel with a = -0.5.
inline double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

inline double lanczos3_weight(double x) {
  x = std::abs(x);
  if (x < 1e-12) return 1.0;
  if (x >= 3.0) return 0.0;
  const double px = std::numbers::pi * x;
  return 3.0 * std::sin(px) * std::sin(px / 3.0) / (px * px);
}

namespace detail {

// Sparse per-axis filter: output i reads taps [start[i], start[i+1]).
struct AxisFilter {
  std::size_t out = 0;
  std::vector<std::size_t> start;
  std::vector<std::size_t> src;
  std::vector<double> weight;
};

template <class WeightFn>
AxisFilter downscale_filter(std::size_t n, std::size_t s, double support, WeightFn f, bool normalize) {
  AxisFilter a;
  a.out = n / s;
  a.start.push_back(0);
  const double sd = static_cast<double>(s);
  for (std::size_t i = 0; i < a.out; ++i) {
    const double u = projected_coordinate(i, s);
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(u - support * sd));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(u + support * sd));
    const std::size_t first = a.src.size();
    double total = 0.0;
    for (std::ptrdiff_t t = lo; t <= hi; ++t) {
      const double wgt = f((static_cast<double>(t) - u) / sd);
      if (wgt == 0.0) continue;
      a.src.push_back(static_cast<std::size_t>(reflect_index(t, static_cast<std::ptrdiff_t>(n))));
      a.weight.push_back(wgt);
      total += wgt;
    }
    if (normalize) {
      for (std::size_t j = first; j < a.weight.size(); ++j) a.weight[j] /= total;
    }
    a.start.push_back(a.src.size());
  }
  return a;
}

inline AxisFilter nearest_filter(std::size_t n, std::size_t s) {
  AxisFilter a;
  a.out = n / s;
  a.start.push_back(0);
  for (std::size_t i = 0; i < a.out; ++i) {
    a.src.push_back(static_cast<std::size_t>(anchor_index(i, s)));
    a.weight.push_back(1.0);
    a.start.push_back(a.src.size());
  }
  return a;
}

inline AxisFilter cubic_upscale_filter(std::size_t n, std::size_t s) {
  AxisFilter a;
  a.out = n * s;
  a.start.push_back(0);
  for (std::size_t t = 0; t < a.out; ++t) {
    const double x = (static_cast<double>(t) + 0.5) / static_cast<double>(s) - 0.5;
    const auto base = static_cast<std::ptrdiff_t>(std::floor(x));
    for (std::ptrdiff_t j = base - 1; j <= base + 2; ++j) {
      const double wgt = cubic_weight(x - static_cast<double>(j));
      if (wgt == 0.0) continue;
      a.src.push_back(static_cast<std::size_t>(reflect_index(j, static_cast<std::ptrdiff_t>(n))));
      a.weight.push_back(wgt);
    }
    a.start.push_back(a.src.size());
  }
  return a;
}

template <class T>
Tensor<T> separable(const Tensor<T>& img, const AxisFilter& rows, const AxisFilter& cols) {
  const std::size_t h = img.extent(0), c = img.extent(2);
  Tensor<T> tmp(Shape{h, cols.out, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < cols.out; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t j = cols.start[x]; j < cols.start[x + 1]; ++j)
          acc += cols.weight[j] * static_cast<double>(img(y, cols.src[j], ch));
        tmp(y, x, ch) = static_cast<T>(acc);
      }
  Tensor<T> out(Shape{rows.out, cols.out, c});
  for (std::size_t y = 0; y < rows.out; ++y)
    for (std::size_t x = 0; x < cols.out; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t j = rows.start[y]; j < rows.start[y + 1]; ++j)
          acc += rows.weight[j] * static_cast<double>(tmp(rows.src[j], x, ch));
        out(y, x, ch) = static_cast<T>(acc);
      }
  return out;
}

inline AxisFilter classic_filter(std::size_t n, std::size_t s, Method m) {
  switch (m) {
    case Method::nearest: return nearest_filter(n, s);
    case Method::box:
      return downscale_filter(n, s, 0.5, [](double x) { return std::abs(x) < 0.5 ? 1.0 : 0.0; }, true);
    case Method::bicubic: return downscale_filter(n, s, 2.0, cubic_weight, true);
    case Method::lanczos3: return downscale_filter(n, s, 3.0, lanczos3_weight, true);
  }
  throw ConfigError("unknown resampling method");
}

}  // namespace detail

/// Classical separable downscaler on the same projected-centre grid as apply_kernels.
/// Filters are stretched by s (antialiased) and renormalized; borders reflect.
template <class T>
Tensor<T> classic_downscale(const Tensor<T>& image, std::size_t s, Method method) {
  require_rank(image, 3, "classic_downscale");
  if (s == 0 || image.extent(0) % s || image.extent(1) % s) {
    throw ShapeError("classic_downscale: scale " + std::to_string(s) + " does not divide " +
                     to_string(image.shape()));
  }
  return detail::separable(image, detail::classic_filter(image.extent(0), s, method),
                           detail::classic_filter(image.extent(1), s, method));
}

/// Separable Keys bicubic (a = -0.5) upscaling by s; HR pixel t samples LR coordinate (t + 0.5)/s - 0.5.
template <class T>
Tensor<T> bicubic_upscale(const Tensor<T>& image, std::size_t s) {
  require_rank(image, 3, "bicubic_upscale");
  if (s == 0) throw UsageError("bicubic_upscale: scale must be positive");
  return detail::separable(image, detail::cubic_upscale_filter(image.extent(0), s),
                           detail::cubic_upscale_filter(image.extent(1), s));
}

}  // namespace adk::resample

namespace adk::ad {

/// Differentiable counterpart of resample::apply_kernels (gradients flow to both operands).
template <class T>
Var<T> apply_kernels(const Var<T>& image, const Var<T>& kernels, std::size_t s) {
  namespace rd = adk::resample::detail;
  const auto g = rd::kernel_geometry(image.value(), kernels.value(), s);
  return image.tape().record(
      adk::resample::apply_kernels(image.value(), kernels.value(), s), {image, kernels},
      [image, kernels, s, g](Tape<T>& tape, const Tensor<T>& grad) {
        const auto rows = rd::window_sources(g.lr_h, g.hr_h, s, g.k);
        const auto cols = rd::window_sources(g.lr_w, g.hr_w, s, g.k);
        const std::size_t kk = g.k * g.k;
        const Tensor<T>& img = image.value();
        const Tensor<T>& ker = kernels.value();
        Tensor<T>* gk = tape.requires_grad(kernels) ? &tape.grad_buffer(kernels) : nullptr;
        Tensor<T>* gi = tape.requires_grad(image) ? &tape.grad_buffer(image) : nullptr;
        for (std::size_t y = 0; y < g.lr_h; ++y)
          for (std::size_t x = 0; x < g.lr_w; ++x)
            for (std::size_t c = 0; c < g.channels; ++c) {
              const T up = grad(y, x, c);
              const std::size_t base = ((y * g.lr_w + x) * g.channels + c) * kk;
              for (std::size_t a = 0; a < g.k; ++a) {
                const std::size_t sy = rows[y * g.k + a];
                for (std::size_t b = 0; b < g.k; ++b) {
                  const std::size_t sx = cols[x * g.k + b];
                  if (gk) (*gk)[base + a * g.k + b] += up * img(sy, sx, c);
                  if (gi) (*gi)(sy, sx, c) += up * ker[base + a * g.k + b];
                }
              }
            }
      },
      "apply_kernels");
}

}  // namespace adk::ad
