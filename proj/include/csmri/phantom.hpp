#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "csmri/core.hpp"

namespace csmri {

struct Ellipse {
  double intensity, semi_x, semi_y, center_x, center_y, angle_deg;
};

/// Modified (Toft) Shepp-Logan table: additive intensity, semi-axes, center, rotation.
inline constexpr std::array<Ellipse, 10> kSheppLogan{{
    {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},
    {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
    {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},
    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
    {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},
    {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
    {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},
    {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
    {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},
    {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
}};

/// Pixel (row, col) maps to x = (col - W/2) / (W/2), y = (H/2 - row) / (H/2), so the
/// grid center sits exactly at the origin. Values are clipped to [0, 1]; imaginary part is 0.
inline ComplexImage shepp_logan(std::size_t height, std::size_t width) {
  if (height < 32 || width < 32 || height % 2 || width % 2)
    throw InvalidParameter("phantom dimensions must be even and at least 32");
  ComplexImage img(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    const double y = (double(height / 2) - double(r)) / double(height / 2);
    for (std::size_t c = 0; c < width; ++c) {
      const double x = (double(c) - double(width / 2)) / double(width / 2);
      double v = 0.0;
      for (const auto& e : kSheppLogan) {
        const double t = e.angle_deg * std::numbers::pi / 180.0;
        const double dx = x - e.center_x, dy = y - e.center_y;
        const double u = (dx * std::cos(t) + dy * std::sin(t)) / e.semi_x;
        const double w = (-dx * std::sin(t) + dy * std::cos(t)) / e.semi_y;
        if (u * u + w * w <= 1.0) v += e.intensity;
      }
      img(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

}  // namespace csmri
