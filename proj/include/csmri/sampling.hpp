#pragma once

// Cartesian 1D variable-density masks and per-epoch subset splitting.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "csmri/core.hpp"

namespace csmri {

struct MaskSpec {
  std::size_t height = 256;
  std::size_t width = 256;
  double reduction = 4.0;
  std::size_t acs_size = 20;
  /// c in p(k) ~ 1 / (1 + c |k| / k_max). Zero gives a uniform draw over the outer lines.
  double density_decay = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (height == 0 || width == 0) throw ConfigurationError("mask dimensions must be positive");
    if (!(reduction >= 1.0) || !std::isfinite(reduction))
      throw ConfigurationError("reduction factor must be >= 1");
    if (acs_size > std::min(height, width))
      throw ConfigurationError("acs_size exceeds the mask dimensions");
    if (!(density_decay >= 0.0)) throw ConfigurationError("density_decay must be nonnegative");
  }
};

/// Number of phase-encode lines a spec asks for: round(width / R).
inline std::size_t target_line_count(const MaskSpec& spec) {
  return static_cast<std::size_t>(std::llround(double(spec.width) / spec.reduction));
}

/// Full read-out columns are selected along the horizontal (phase-encode) axis. A centered band
/// of acs_size columns is always taken, the rest are drawn without replacement with weight
/// 1 / (1 + c |k| / k_max) until round(W / R) columns are sampled.
inline SamplingMask generate_cartesian_mask(const MaskSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  const std::size_t target = std::min(target_line_count(spec), w);
  if (target < spec.acs_size)
    throw ConfigurationError("reduction " + std::to_string(spec.reduction) + " leaves " +
                             std::to_string(target) + " lines, fewer than the " +
                             std::to_string(spec.acs_size) + " ACS lines");

  std::vector<std::uint8_t> line(w, 0);
  const std::size_t c0 = w / 2 - spec.acs_size / 2;
  for (std::size_t c = c0; c < c0 + spec.acs_size; ++c) line[c] = 1;

  std::vector<std::size_t> candidates;
  std::vector<double> weights;
  const double k_max = double(w / 2);
  for (std::size_t c = 0; c < w; ++c) {
    if (line[c]) continue;
    const double k = std::abs(double(c) - double(w / 2));
    candidates.push_back(c);
    weights.push_back(1.0 / (1.0 + spec.density_decay * k / k_max));
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t drawn = spec.acs_size; drawn < target; ++drawn) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    double u = unit(rng) * total;
    std::size_t pick = 0;
    for (; pick + 1 < weights.size(); ++pick) {
      u -= weights[pick];
      if (u < 0.0) break;
    }
    line[candidates[pick]] = 1;
    candidates.erase(candidates.begin() + std::ptrdiff_t(pick));
    weights.erase(weights.begin() + std::ptrdiff_t(pick));
  }

  std::vector<std::uint8_t> sampled(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) sampled[r * w + c] = line[c];
  const std::size_t acs_rows = std::min(spec.acs_size, h);
  return SamplingMask(h, w, std::move(sampled), AcsRegion{acs_rows, spec.acs_size});
}

struct SubsetPair {
  SamplingMask lambda;   ///< network input subset
  SamplingMask upsilon;  ///< held-out loss subset
};

enum class SplitMode { point, line };

/// Partition the non-ACS samples of omega at random: `fraction` of them join lambda and the rest
/// join upsilon. The central acs_size x acs_size square belongs to both.
inline SubsetPair split_subsets(const SamplingMask& omega, double fraction, std::size_t acs_size,
                                std::uint64_t seed, SplitMode mode = SplitMode::point) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw InvalidParameter("split fraction must lie in (0, 1)");
  const AcsRegion acs{acs_size, acs_size};
  if (!omega.covers(acs)) throw PreconditionError("sampling mask does not contain the ACS square");

  const std::size_t h = omega.height(), w = omega.width();
  std::vector<std::uint8_t> lam(h * w, 0), ups(h * w, 0);
  std::vector<std::size_t> free_points;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      if (!omega[i]) continue;
      if (acs.contains(r, c, h, w))
        lam[i] = ups[i] = 1;
      else
        free_points.push_back(i);
    }

  std::mt19937_64 rng(seed);
  if (mode == SplitMode::point) {
    std::shuffle(free_points.begin(), free_points.end(), rng);
    const auto n_lambda = static_cast<std::size_t>(std::llround(fraction * double(free_points.size())));
    for (std::size_t j = 0; j < free_points.size(); ++j)
      (j < n_lambda ? lam : ups)[free_points[j]] = 1;
  } else {
    std::vector<std::size_t> columns;
    for (auto i : free_points)
      if (std::find(columns.begin(), columns.end(), i % w) == columns.end()) columns.push_back(i % w);
    std::sort(columns.begin(), columns.end());
    std::shuffle(columns.begin(), columns.end(), rng);
    const auto n_lambda = static_cast<std::size_t>(std::llround(fraction * double(columns.size())));
    std::vector<std::uint8_t> to_lambda(w, 0);
    for (std::size_t j = 0; j < n_lambda; ++j) to_lambda[columns[j]] = 1;
    for (auto i : free_points) (to_lambda[i % w] ? lam : ups)[i] = 1;
  }
  return {SamplingMask(h, w, std::move(lam), acs), SamplingMask(h, w, std::move(ups), acs)};
}

}  // namespace csmri
