#pragma once

// Gaussian denoisers acting on complex images (real and imaginary planes independently) and the
// Monte-Carlo divergence estimate used by the Onsager correction.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <numbers>
#include <random>

#include "csmri/core.hpp"

namespace csmri {

enum class DenoiserVariant { dct_hard_threshold, block_match_3d_ht };

struct DenoiserKind {
  DenoiserVariant variant = DenoiserVariant::block_match_3d_ht;
  int block_size = 8;
  int search_window = 24;
  int max_matched = 16;
  double threshold_multiplier = 2.7;
  /// Stride between reference blocks (block matching) or between sliding blocks (DCT).
  int reference_step = 3;

  void validate() const {
    if (block_size < 1 || search_window < block_size || max_matched < 1 || reference_step < 1 ||
        !(threshold_multiplier >= 0.0))
      throw InvalidParameter("invalid denoiser parameters");
  }
  void validate_for(std::size_t h, std::size_t w) const {
    validate();
    const auto side = std::min(h, w);
    if (std::size_t(block_size) > side)
      throw InvalidParameter("denoiser block size exceeds the image side");
  }
};

/// Any callable mapping (image, sigma) to a denoised image.
template <class F>
concept ImageDenoiser = std::invocable<const F&, const ComplexImage&, double> &&
    std::convertible_to<std::invoke_result_t<const F&, const ComplexImage&, double>, ComplexImage>;

namespace detail {

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  double& operator()(std::size_t r, std::size_t c) { return v[r * w + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * w + c]; }
};

/// Orthonormal DCT-II matrix, row k = basis function k.
inline std::vector<double> dct_matrix(int n) {
  std::vector<double> m(std::size_t(n) * n);
  for (int k = 0; k < n; ++k) {
    const double a = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (int i = 0; i < n; ++i)
      m[std::size_t(k) * n + i] = a * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * n));
  }
  return m;
}

// out = C * in * C^T (forward) or C^T * in * C (inverse), b x b blocks.
inline void dct2_block(const std::vector<double>& C, int b, const double* in, double* out,
                       bool inverse) {
  std::vector<double> tmp(std::size_t(b) * b, 0.0);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) {
      double s = 0.0;
      for (int k = 0; k < b; ++k)
        s += (inverse ? C[std::size_t(k) * b + i] : C[std::size_t(i) * b + k]) * in[k * b + j];
      tmp[std::size_t(i) * b + j] = s;
    }
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) {
      double s = 0.0;
      for (int k = 0; k < b; ++k)
        s += tmp[std::size_t(i) * b + k] * (inverse ? C[std::size_t(k) * b + j] : C[std::size_t(j) * b + k]);
      out[i * b + j] = s;
    }
}

inline std::vector<std::size_t> block_origins(std::size_t extent, int block, int step) {
  std::vector<std::size_t> pos;
  const std::size_t last = extent - std::size_t(block);
  for (std::size_t p = 0; p <= last; p += std::size_t(step)) pos.push_back(p);
  if (pos.back() != last) pos.push_back(last);
  return pos;
}

inline Plane dct_hard_threshold(const Plane& in, double sigma, const DenoiserKind& kind) {
  const int b = kind.block_size;
  const auto C = dct_matrix(b);
  const double thr = kind.threshold_multiplier * sigma;
  Plane num{in.h, in.w, std::vector<double>(in.v.size(), 0.0)};
  std::vector<double> den(in.v.size(), 0.0);
  std::vector<double> blk(std::size_t(b) * b), coef(blk.size());
  // Sliding blocks at stride 1 keep the output shift-invariant.
  for (std::size_t r : block_origins(in.h, b, 1))
    for (std::size_t c : block_origins(in.w, b, 1)) {
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) blk[std::size_t(i) * b + j] = in(r + i, c + j);
      dct2_block(C, b, blk.data(), coef.data(), false);
      for (std::size_t k = 1; k < coef.size(); ++k)
        if (std::abs(coef[k]) < thr) coef[k] = 0.0;
      dct2_block(C, b, coef.data(), blk.data(), true);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) {
          num(r + i, c + j) += blk[std::size_t(i) * b + j];
          den[(r + i) * in.w + c + j] += 1.0;
        }
    }
  for (std::size_t i = 0; i < num.v.size(); ++i) num.v[i] /= den[i];
  return num;
}

inline std::vector<double> kaiser_window(int b, double beta = 2.0) {
  std::vector<double> k1(b);
  for (int i = 0; i < b; ++i) {
    const double t = b == 1 ? 0.0 : 2.0 * i / (b - 1) - 1.0;
    k1[i] = std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - t * t)) / std::cyl_bessel_i(0.0, beta);
  }
  std::vector<double> k2(std::size_t(b) * b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) k2[std::size_t(i) * b + j] = k1[i] * k1[j];
  return k2;
}

/// Hard-thresholding stage of BM3D: block matching, 3D DCT shrinkage, weighted aggregation.
/// Returns the estimate and, optionally, the per-pixel aggregation weight sums.
inline Plane block_match_3d_ht(const Plane& in, double sigma, const DenoiserKind& kind,
                               std::vector<double>* weight_sums = nullptr) {
  const int b = kind.block_size;
  const std::size_t bb = std::size_t(b) * b;
  const auto C = dct_matrix(b);
  const double thr = kind.threshold_multiplier * sigma;
  const std::size_t nr = in.h - b + 1, nc = in.w - b + 1;

  // 2D DCT of every block; distances are computed in the transform domain (orthonormal).
  std::vector<double> spectra(nr * nc * bb);
  {
    std::vector<double> blk(bb);
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t c = 0; c < nc; ++c) {
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < b; ++j) blk[std::size_t(i) * b + j] = in(r + i, c + j);
        dct2_block(C, b, blk.data(), &spectra[(r * nc + c) * bb], false);
      }
  }

  std::vector<std::vector<double>> group_dct(std::size_t(kind.max_matched) + 1);
  for (int k = 1; k <= kind.max_matched; ++k) group_dct[k] = dct_matrix(k);
  const auto window = kaiser_window(b);

  const auto rows = block_origins(in.h, b, kind.reference_step);
  const auto cols = block_origins(in.w, b, kind.reference_step);
  const std::size_t n_refs = rows.size() * cols.size();

  struct GroupResult {
    std::vector<std::size_t> members;  // block index r * nc + c
    std::vector<double> blocks;        // members.size() * bb spatial estimates
    double weight = 0.0;
  };
  std::vector<GroupResult> results(n_refs);
  const int half = kind.search_window / 2;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
  for (std::ptrdiff_t ref = 0; ref < std::ptrdiff_t(n_refs); ++ref) {
    const std::size_t r = rows[std::size_t(ref) / cols.size()];
    const std::size_t c = cols[std::size_t(ref) % cols.size()];
    const double* ref_spec = &spectra[(r * nc + c) * bb];

    const std::size_t r_lo = r > std::size_t(half) ? r - half : 0;
    const std::size_t c_lo = c > std::size_t(half) ? c - half : 0;
    const std::size_t r_hi = std::min(nr - 1, r + half);
    const std::size_t c_hi = std::min(nc - 1, c + half);
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve((r_hi - r_lo + 1) * (c_hi - c_lo + 1));
    for (std::size_t rr = r_lo; rr <= r_hi; ++rr)
      for (std::size_t cc = c_lo; cc <= c_hi; ++cc) {
        const std::size_t idx = rr * nc + cc;
        const double* s = &spectra[idx * bb];
        double d = 0.0;
        for (std::size_t k = 0; k < bb; ++k) {
          const double e = s[k] - ref_spec[k];
          d += e * e;
        }
        // The reference block always leads its own group.
        cand.emplace_back(idx == r * nc + c ? -1.0 : d, idx);
      }
    const std::size_t K = std::min<std::size_t>(std::size_t(kind.max_matched), cand.size());
    std::partial_sort(cand.begin(), cand.begin() + std::ptrdiff_t(K), cand.end());

    const auto& G = group_dct[K];
    GroupResult& out = results[std::size_t(ref)];
    out.members.resize(K);
    std::vector<double> group(K * bb), coef(K * bb, 0.0);
    for (std::size_t m = 0; m < K; ++m) {
      out.members[m] = cand[m].second;
      std::copy_n(&spectra[cand[m].second * bb], bb, &group[m * bb]);
    }
    // 1D DCT across the group.
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t m = 0; m < K; ++m) {
        const double g = G[k * K + m];
        for (std::size_t p = 0; p < bb; ++p) coef[k * bb + p] += g * group[m * bb + p];
      }
    std::size_t retained = 0;
    for (std::size_t i = 0; i < coef.size(); ++i) {
      if (i != 0 && std::abs(coef[i]) < thr)
        coef[i] = 0.0;
      else if (coef[i] != 0.0)
        ++retained;
    }
    std::fill(group.begin(), group.end(), 0.0);
    for (std::size_t m = 0; m < K; ++m)
      for (std::size_t k = 0; k < K; ++k) {
        const double g = G[k * K + m];
        for (std::size_t p = 0; p < bb; ++p) group[m * bb + p] += g * coef[k * bb + p];
      }
    out.blocks.resize(K * bb);
    for (std::size_t m = 0; m < K; ++m)
      dct2_block(C, b, &group[m * bb], &out.blocks[m * bb], true);
    out.weight = 1.0 / double(std::max<std::size_t>(retained, 1));
  }

  // Serial aggregation in reference order keeps the result independent of the thread count.
  Plane num{in.h, in.w, std::vector<double>(in.v.size(), 0.0)};
  std::vector<double> den(in.v.size(), 0.0);
  for (const auto& g : results)
    for (std::size_t m = 0; m < g.members.size(); ++m) {
      const std::size_t r = g.members[m] / nc, c = g.members[m] % nc;
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) {
          const double wgt = g.weight * window[std::size_t(i) * b + j];
          num(r + i, c + j) += wgt * g.blocks[m * bb + std::size_t(i) * b + j];
          den[(r + i) * in.w + c + j] += wgt;
        }
    }
  for (std::size_t i = 0; i < num.v.size(); ++i) num.v[i] /= den[i];
  if (weight_sums) *weight_sums = std::move(den);
  return num;
}

inline Plane denoise_plane(const Plane& p, double sigma, const DenoiserKind& kind) {
  switch (kind.variant) {
    case DenoiserVariant::dct_hard_threshold:
      return dct_hard_threshold(p, sigma, kind);
    case DenoiserVariant::block_match_3d_ht:
      return block_match_3d_ht(p, sigma, kind);
  }
  throw InvalidParameter("unknown denoiser variant");
}

}  // namespace detail

/// Denoise real and imaginary planes independently. sigma is the standard deviation of
/// circular complex noise (E|n|^2 = sigma^2), so each plane sees sigma / sqrt(2).
inline ComplexImage denoise(const ComplexImage& img, double sigma, const DenoiserKind& kind) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw InvalidParameter("denoiser sigma must be a finite nonnegative value");
  if (sigma == 0.0) return img;
  kind.validate_for(img.height(), img.width());

  detail::Plane re{img.height(), img.width(), std::vector<double>(img.size())};
  detail::Plane im = re;
  for (std::size_t i = 0; i < img.size(); ++i) {
    re.v[i] = img[i].real();
    im.v[i] = img[i].imag();
  }
  const double plane_sigma = sigma / std::numbers::sqrt2;
  const auto dre = detail::denoise_plane(re, plane_sigma, kind);
  const auto dim = detail::denoise_plane(im, plane_sigma, kind);
  ComplexImage out(img.height(), img.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {dre.v[i], dim.v[i]};
  return out;
}

/// Bind a DenoiserKind into a callable usable by the solvers.
inline auto make_denoiser(DenoiserKind kind) {
  return [kind](const ComplexImage& img, double sigma) { return denoise(img, sigma, kind); };
}

/// Draw one probe for mc_divergence: a standard circular complex Gaussian vector rescaled to
/// squared norm N, so that E[b b^H] = I.
inline ComplexImage divergence_probe(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  ComplexImage b(h, w);
  for (auto& v : b.values()) v = {normal(rng), normal(rng)};
  const double n2 = b.norm_squared();
  if (n2 > 0.0) b *= std::sqrt(double(b.size()) / n2);
  return b;
}

/// (1/P) sum_i Re<b_i, D(r + eps b_i) - D(r)> / eps.
template <ImageDenoiser D>
double mc_divergence(const D& denoiser, const ComplexImage& r, double sigma, double epsilon,
                     int probes, std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw InvalidParameter("divergence epsilon must be positive");
  if (probes < 1) throw InvalidParameter("divergence needs at least one probe");
  std::mt19937_64 rng(seed);
  const ComplexImage base = denoiser(r, sigma);
  double acc = 0.0;
  for (int p = 0; p < probes; ++p) {
    const ComplexImage b = divergence_probe(r.height(), r.width(), rng);
    ComplexImage shifted = r + b * epsilon;
    const ComplexImage diff = ComplexImage(denoiser(shifted, sigma)) - base;
    acc += inner(b, diff).real() / epsilon;
  }
  return acc / probes;
}

inline double mc_divergence(const DenoiserKind& kind, const ComplexImage& r, double sigma,
                            double epsilon, int probes, std::uint64_t seed) {
  return mc_divergence(make_denoiser(kind), r, sigma, epsilon, probes, seed);
}

/// Probe step used inside the solvers: max(|r|_inf, 1) * 1e-3.
inline double default_divergence_epsilon(const ComplexImage& r) {
  return std::max(r.max_abs(), 1.0) * 1e-3;
}

}  // namespace csmri
