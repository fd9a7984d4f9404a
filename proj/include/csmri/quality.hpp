#pragma once

// PSNR and SSIM on magnitude images, normalized by the reference peak.

#include <cmath>
#include <limits>
#include <string>

#include "csmri/core.hpp"

namespace csmri {

struct MetricReport {
  std::string method;
  double psnr_db = 0.0;
  bool psnr_infinite = false;
  double ssim = 0.0;
  double reduction = 1.0;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

inline std::vector<double> magnitude(const ComplexImage& img) {
  std::vector<double> m(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) m[i] = std::abs(img[i]);
  return m;
}

/// Differences with RMS below this fraction of the peak are floating-point roundoff (an
/// unitary FFT round trip lands near 1e-16) and count as identical.
inline constexpr double kRoundoffRms = 64.0 * std::numeric_limits<double>::epsilon();

/// 10 log10(peak^2 / MSE) with peak = max |reference|; +inf when the magnitudes agree to roundoff.
inline double psnr(const ComplexImage& reference, const ComplexImage& test) {
  require_same_shape(reference, test, "psnr");
  const auto a = magnitude(reference), b = magnitude(test);
  double peak = 0.0, se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    peak = std::max(peak, a[i]);
    se += (a[i] - b[i]) * (a[i] - b[i]);
  }
  const double mse = se / double(a.size());
  if (mse <= (kRoundoffRms * peak) * (kRoundoffRms * peak)) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

/// Mean squared error of the complex values, for debugging phase errors that PSNR ignores.
inline double complex_mse(const ComplexImage& reference, const ComplexImage& test) {
  require_same_shape(reference, test, "complex_mse");
  return (reference - test).norm_squared() / double(reference.size());
}

struct SsimParams {
  int window = 11;
  double gaussian_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

namespace detail {

inline std::vector<double> gaussian_kernel_1d(int n, double sigma) {
  std::vector<double> g(n);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = i - (n - 1) / 2.0;
    g[i] = std::exp(-x * x / (2 * sigma * sigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Separable "valid" filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h,
                                        std::size_t w, const std::vector<double>& g) {
  const std::size_t n = g.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += g[k] * img[r * w + c + k];
      tmp[r * ow + c] = s;
    }
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += g[k] * tmp[(r + k) * ow + c];
      out[r * ow + c] = s;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over all fully contained windows, with an explicit dynamic range.
inline double ssim(const ComplexImage& reference, const ComplexImage& test, double dynamic_range,
                   const SsimParams& p = {}) {
  require_same_shape(reference, test, "ssim");
  const std::size_t h = reference.height(), w = reference.width();
  if (h < std::size_t(p.window) || w < std::size_t(p.window))
    throw DimensionError("ssim: image smaller than the window");
  const auto x = magnitude(reference), y = magnitude(test);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto g = detail::gaussian_kernel_1d(p.window, p.gaussian_sigma);
  const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
  const auto sxx = detail::filter_valid(xx, h, w, g), syy = detail::filter_valid(yy, h, w, g);
  const auto sxy = detail::filter_valid(xy, h, w, g);
  const double c1 = std::pow(p.k1 * dynamic_range, 2), c2 = std::pow(p.k2 * dynamic_range, 2);
  double acc = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
           ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return acc / double(mx.size());
}

/// SSIM with the dynamic range taken as the reference peak magnitude.
inline double ssim(const ComplexImage& reference, const ComplexImage& test, const SsimParams& p = {}) {
  return ssim(reference, test, reference.max_abs(), p);
}

}  // namespace csmri
