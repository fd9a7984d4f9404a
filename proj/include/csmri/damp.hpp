#pragma once

// Denoiser-driven compressed-sensing solvers: ISTA and D-AMP with Onsager correction.

#include <functional>
#include <limits>
#include <optional>

#include "csmri/denoisers.hpp"
#include "csmri/fourier.hpp"

namespace csmri {

struct DampRecord {
  double sigma_hat = 0.0;
  double residual_norm = 0.0;
  double psnr = std::numeric_limits<double>::quiet_NaN();
  double onsager_scale = 0.0;  ///< div / m actually applied (after clamping)
  bool clamped = false;
};

struct DampTrace {
  std::vector<DampRecord> records;
  std::size_t clamp_events() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.clamped;
    return n;
  }
};

class SolverDiverged : public Error {
 public:
  SolverDiverged(const std::string& what, DampTrace trace)
      : Error(what), trace_(std::move(trace)) {}
  const char* kind() const noexcept override { return "solver-diverged"; }
  const DampTrace& trace() const noexcept { return trace_; }

 private:
  DampTrace trace_;
};

struct Reconstruction {
  ComplexImage image;
  DampTrace trace;
};

using DenoiserFn = std::function<ComplexImage(const ComplexImage&, double)>;
/// Optional per-iteration quality callback, e.g. PSNR against a known reference.
using QualityFn = std::function<double(const ComplexImage&)>;

inline void require_measured(const KSpaceGrid& y, const SamplingMask& mask, const char* what) {
  require_same_shape(y, mask, what);
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!mask[i] && y[i] != cplx{})
      throw PreconditionError(std::string(what) + ": measurements are nonzero outside the mask");
}

/// x_{t+1} = D(x_t + F^H(y - F x_t), sigma_t), starting from the zero-filled image.
/// A schedule of length 1 is broadcast to every iteration.
inline Reconstruction ista_reconstruct(const KSpaceGrid& y, const SamplingMask& mask,
                                       const DenoiserFn& denoiser,
                                       const std::vector<double>& sigma_schedule, int iters,
                                       const QualityFn& quality = {}) {
  require_measured(y, mask, "ista_reconstruct");
  if (iters < 0) throw ConfigurationError("ista iteration count must be nonnegative");
  if (iters > 0 && sigma_schedule.size() != 1 && sigma_schedule.size() < std::size_t(iters))
    throw ConfigurationError("sigma schedule shorter than the iteration count");

  Reconstruction out{adjoint_masked(y, mask), {}};
  for (int t = 0; t < iters; ++t) {
    const KSpaceGrid residual = y - forward_masked(out.image, mask);
    const ComplexImage r = out.image + adjoint_masked(residual, mask);
    const double sigma = sigma_schedule.size() == 1 ? sigma_schedule[0] : sigma_schedule[std::size_t(t)];
    out.image = denoiser(r, sigma);
    DampRecord rec;
    rec.sigma_hat = sigma;
    rec.residual_norm = residual.norm();
    if (quality) rec.psnr = quality(out.image);
    out.trace.records.push_back(rec);
    if (!out.image.all_finite()) throw SolverDiverged("ista produced non-finite iterate", out.trace);
  }
  return out;
}

/// sigma_0 * ratio^t, a geometric schedule for ISTA.
inline std::vector<double> geometric_schedule(double sigma0, double sigma_end, int iters) {
  std::vector<double> s(std::size_t(std::max(iters, 1)));
  const double ratio = iters > 1 ? std::pow(sigma_end / sigma0, 1.0 / (iters - 1)) : 1.0;
  for (std::size_t t = 0; t < s.size(); ++t) s[t] = sigma0 * std::pow(ratio, double(t));
  return s;
}

struct DampOptions {
  int iters = 30;
  std::optional<ComplexImage> warm_start;
  std::uint64_t seed = 0;
  int probes = 1;
  /// Lower bound on sigma_hat. A data-consistent starting point has an identically zero
  /// residual; the floor lets the first denoising step act on it.
  double sigma_floor = 0.0;
  /// Start from x = 0 (z_0 = y) when no warm start is given, rather than from the ZF image.
  bool cold_start_from_zero = true;
};

/// D-AMP for the single-coil Cartesian model:
///   z_t = y - F_O x_t + z_{t-1} div_{t-1} / m
///   r_t = x_t + F_O^H z_t,  sigma_t = |z_t| / sqrt(m),  x_{t+1} = D(r_t, sigma_t).
/// The Onsager scale div/m is clamped to [-1, 1].
inline Reconstruction damp_reconstruct(const KSpaceGrid& y, const SamplingMask& mask,
                                       const DenoiserFn& denoiser, const DampOptions& opt,
                                       const QualityFn& quality = {}) {
  require_measured(y, mask, "damp_reconstruct");
  if (opt.iters < 1) throw ConfigurationError("damp needs at least one iteration");
  if (mask.count() == 0) throw PreconditionError("damp_reconstruct: empty sampling mask");
  const double m = double(mask.count());

  ComplexImage x;
  if (opt.warm_start) {
    require_same_shape(*opt.warm_start, mask, "damp_reconstruct warm start");
    x = *opt.warm_start;
  } else if (opt.cold_start_from_zero) {
    x = ComplexImage(y.height(), y.width());
  } else {
    x = adjoint_masked(y, mask);
  }

  DampTrace trace;
  KSpaceGrid z_prev;
  double scale_prev = 0.0;
  for (int t = 0; t < opt.iters; ++t) {
    KSpaceGrid z = y - forward_masked(x, mask);
    if (t > 0) z += z_prev * scale_prev;
    const ComplexImage r = x + adjoint_masked(z, mask);
    const double sigma = std::max(z.norm() / std::sqrt(m), opt.sigma_floor);

    ComplexImage next = denoiser(r, sigma);
    double div = 0.0;
    if (t + 1 < opt.iters)
      div = mc_divergence(denoiser, r, sigma, default_divergence_epsilon(r), opt.probes,
                          mix_seed(opt.seed, std::uint64_t(t)));

    DampRecord rec;
    rec.sigma_hat = sigma;
    rec.residual_norm = z.norm();
    double scale = div / m;
    if (!std::isfinite(scale)) {
      trace.records.push_back(rec);
      throw SolverDiverged("damp divergence estimate is not finite at iteration " + std::to_string(t),
                           trace);
    }
    if (std::abs(scale) > 1.0) {
      scale = std::clamp(scale, -1.0, 1.0);
      rec.clamped = true;
    }
    rec.onsager_scale = scale;
    if (quality) rec.psnr = quality(next);
    trace.records.push_back(rec);
    if (!next.all_finite() || !std::isfinite(sigma))
      throw SolverDiverged("damp produced a non-finite iterate at iteration " + std::to_string(t),
                           trace);

    x = std::move(next);
    z_prev = std::move(z);
    scale_prev = scale;
  }
  return {std::move(x), std::move(trace)};
}

inline Reconstruction damp_reconstruct(const KSpaceGrid& y, const SamplingMask& mask,
                                       const DenoiserKind& kind, const DampOptions& opt,
                                       const QualityFn& quality = {}) {
  return damp_reconstruct(y, mask, DenoiserFn(make_denoiser(kind)), opt, quality);
}

}  // namespace csmri
