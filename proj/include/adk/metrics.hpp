#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "adk/error.hpp"
#include "adk/tensor.hpp"

namespace adk::metrics {

/// Returned by psnr() when the inputs are identical.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  if (peak <= 0.0) throw UsageError("psnr: peak must be positive");
  const double e = mse(a, b);
  if (e == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / e);
}

/// BT.601 luma: Y = 0.299 R + 0.587 G + 0.114 B.
template <class T>
Tensor<T> rgb_to_y(const Tensor<T>& t) {
  if (t.rank() != 3 || t.extent(2) != 3) throw ShapeError("rgb_to_y: expected H x W x 3, got " + to_string(t.shape()));
  Tensor<T> y(Shape{t.extent(0), t.extent(1), 1});
  for (std::size_t p = 0; p < y.size(); ++p) {
    y[p] = static_cast<T>(0.299 * static_cast<double>(t[3 * p]) + 0.587 * static_cast<double>(t[3 * p + 1]) +
                          0.114 * static_cast<double>(t[3 * p + 2]));
  }
  return y;
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

inline std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> w(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

namespace detail {

// Valid-mode separable filtering of one channel (plane is h x w, row-major).
inline std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                        const std::vector<double>& win) {
  const std::size_t n = win.size(), ho = h - n + 1, wo = w - n + 1;
  std::vector<double> tmp(h * wo), out(ho * wo);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += win[i] * plane[y * w + x + i];
      tmp[y * wo + x] = acc;
    }
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += win[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = acc;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over all fully-contained Gaussian windows, averaged across channels.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& prm = {}) {
  require_same_shape(a, b, "ssim");
  require_rank(a, 3, "ssim");
  const std::size_t h = a.extent(0), w = a.extent(1), nc = a.extent(2);
  if (h < prm.window || w < prm.window) {
    throw DimensionError("ssim: image " + to_string(a.shape()) + " smaller than the " + std::to_string(prm.window) +
                         "x" + std::to_string(prm.window) + " window");
  }
  const auto win = gaussian_window(prm.window, prm.sigma);
  const double c1 = (prm.k1 * prm.dynamic_range) * (prm.k1 * prm.dynamic_range);
  const double c2 = (prm.k2 * prm.dynamic_range) * (prm.k2 * prm.dynamic_range);
  double total = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    std::vector<double> x(h * w), y(h * w), xx(h * w), yy(h * w), xy(h * w);
    for (std::size_t p = 0; p < h * w; ++p) {
      x[p] = static_cast<double>(a[p * nc + c]);
      y[p] = static_cast<double>(b[p * nc + c]);
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = detail::filter_valid(x, h, w, win);
    const auto my = detail::filter_valid(y, h, w, win);
    const auto sxx = detail::filter_valid(xx, h, w, win);
    const auto syy = detail::filter_valid(yy, h, w, win);
    const auto sxy = detail::filter_valid(xy, h, w, win);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(nc);
}

struct MetricReport {
  double psnr_rgb = 0.0;
  double ssim_rgb = 0.0;
  double psnr_y = 0.0;
  double ssim_y = 0.0;
};

/// PSNR/SSIM on RGB and on luma; peak and dynamic range 1.0, no border crop.
template <class T>
MetricReport evaluate(const Tensor<T>& pred, const Tensor<T>& truth) {
  MetricReport r;
  r.psnr_rgb = psnr(pred, truth);
  r.ssim_rgb = ssim(pred, truth);
  const auto py = rgb_to_y(pred);
  const auto ty = rgb_to_y(truth);
  r.psnr_y = psnr(py, ty);
  r.ssim_y = ssim(py, ty);
  return r;
}

inline MetricReport mean(const std::vector<MetricReport>& rows) {
  MetricReport m;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.psnr_rgb += r.psnr_rgb;
    m.ssim_rgb += r.ssim_rgb;
    m.psnr_y += r.psnr_y;
    m.ssim_y += r.ssim_y;
  }
  const double n = static_cast<double>(rows.size());
  m.psnr_rgb /= n;
  m.ssim_rgb /= n;
  m.psnr_y /= n;
  m.ssim_y /= n;
  return m;
}

}  // namespace adk::metrics
