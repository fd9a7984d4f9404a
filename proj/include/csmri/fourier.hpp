#pragma once

// Centered, orthonormal 2D DFT and the masked operators of the single-coil Cartesian model.
// Storage convention: k-space is DC-centered, i.e. the DC coefficient lives at (H/2, W/2).

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

#include "csmri/core.hpp"

namespace csmri {

namespace detail {

// fftw_execute_dft is thread safe, plan creation is not. Plans are created once per
// (height, width, direction) under a lock and reused on arbitrary unaligned buffers.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan get(std::size_t h, std::size_t w, int sign) {
    std::lock_guard lock(mutex_);
    auto key = std::make_tuple(h, w, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    std::vector<cplx> in(h * w), out(h * w);
    fftw_plan p = fftw_plan_dft_2d(int(h), int(w), reinterpret_cast<fftw_complex*>(in.data()),
                                   reinterpret_cast<fftw_complex*>(out.data()), sign,
                                   FFTW_ESTIMATE | FFTW_UNALIGNED);
    plans_.emplace(key, p);
    return p;
  }

  ~FftPlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, int>, fftw_plan> plans_;
};

// Swap quadrants; for even dimensions fftshift and ifftshift coincide.
inline void shift_quadrants(const cplx* src, cplx* dst, std::size_t h, std::size_t w) {
  const std::size_t hh = h / 2, hw = w / 2;
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t rr = (r + hh) % h;
    for (std::size_t c = 0; c < w; ++c) dst[rr * w + (c + hw) % w] = src[r * w + c];
  }
}

template <class To, class From>
Grid<To> centered_transform(const Grid<From>& in, int sign) {
  const auto h = in.height(), w = in.width();
  if (h == 0 || w == 0 || h % 2 || w % 2)
    throw InvalidInput("centered FFT requires positive even dimensions, got " +
                       std::to_string(h) + "x" + std::to_string(w));
  if (!in.all_finite()) throw InvalidInput("centered FFT input contains non-finite values");

  std::vector<cplx> shifted(h * w), spectrum(h * w);
  shift_quadrants(in.data(), shifted.data(), h, w);
  fftw_plan plan = FftPlanCache::instance().get(h, w, sign);
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(shifted.data()),
                   reinterpret_cast<fftw_complex*>(spectrum.data()));
  Grid<To> out(h, w);
  shift_quadrants(spectrum.data(), out.data(), h, w);
  out *= 1.0 / std::sqrt(double(h * w));
  return out;
}

}  // namespace detail

/// Unitary centered 2D DFT.
inline KSpaceGrid fft2c(const ComplexImage& img) {
  return detail::centered_transform<FourierDomain>(img, FFTW_FORWARD);
}

/// Inverse (and adjoint) of fft2c.
inline ComplexImage ifft2c(const KSpaceGrid& k) {
  return detail::centered_transform<ImageDomain>(k, FFTW_BACKWARD);
}

/// Zero every coefficient outside the mask.
inline KSpaceGrid restrict_to(KSpaceGrid k, const SamplingMask& mask) {
  require_same_shape(k, mask, "restrict_to");
  for (std::size_t i = 0; i < k.size(); ++i)
    if (!mask[i]) k[i] = {};
  return k;
}

/// F_Omega x: fft2c with unsampled entries zeroed.
inline KSpaceGrid forward_masked(const ComplexImage& img, const SamplingMask& mask) {
  require_same_shape(img, mask, "forward_masked");
  return restrict_to(fft2c(img), mask);
}

/// F_Omega^H k; on measured data this is the zero-filled reconstruction.
inline ComplexImage adjoint_masked(const KSpaceGrid& k, const SamplingMask& mask) {
  require_same_shape(k, mask, "adjoint_masked");
  return ifft2c(restrict_to(k, mask));
}

/// Replace the k-space of x on the mask with y, keep fft2c(x) elsewhere.
inline ComplexImage data_consistency(const ComplexImage& x, const KSpaceGrid& y,
                                     const SamplingMask& mask) {
  require_same_shape(x, y, "data_consistency");
  require_same_shape(x, mask, "data_consistency");
  KSpaceGrid k = fft2c(x);
  for (std::size_t i = 0; i < k.size(); ++i)
    if (mask[i]) k[i] = y[i];
  return ifft2c(k);
}

/// Linear part of data_consistency, F^H P_{not mask} F. It is Hermitian, so it is also the
/// backward map for real-valued losses.
inline ComplexImage project_unsampled(const ComplexImage& x, const SamplingMask& mask) {
  require_same_shape(x, mask, "project_unsampled");
  KSpaceGrid k = fft2c(x);
  for (std::size_t i = 0; i < k.size(); ++i)
    if (mask[i]) k[i] = {};
  return ifft2c(k);
}

}  // namespace csmri
