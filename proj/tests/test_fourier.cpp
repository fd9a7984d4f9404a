#include <gtest/gtest.h>

#include <numbers>

#include "csmri/fourier.hpp"
#include "test_util.hpp"

using namespace csmri;
using csmri::test::random_image;
using csmri::test::random_kspace;
using csmri::test::random_mask;

namespace {

// Direct O(N^2) centered DFT with coordinates measured from (H/2, W/2).
KSpaceGrid naive_dft(const ComplexImage& x) {
  const auto h = x.height(), w = x.width();
  KSpaceGrid k(h, w);
  const double s = 1.0 / std::sqrt(double(h * w));
  for (std::size_t kr = 0; kr < h; ++kr)
    for (std::size_t kc = 0; kc < w; ++kc) {
      cplx acc{};
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const double ph = -2.0 * std::numbers::pi *
                            ((double(kr) - h / 2.0) * (double(r) - h / 2.0) / double(h) +
                             (double(kc) - w / 2.0) * (double(c) - w / 2.0) / double(w));
          acc += x(r, c) * std::polar(1.0, ph);
        }
      k(kr, kc) = acc * s;
    }
  return k;
}

}  // namespace

TEST(Fourier, MatchesDirectCenteredDft) {
  std::mt19937_64 rng(1);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 6}, {4, 10}, {12, 12}}) {
    const auto x = random_image(h, w, rng);
    EXPECT_LT(max_abs_diff(fft2c(x), naive_dft(x)), 1e-12);
  }
}

TEST(Fourier, CenteredImpulseGivesConstant) {
  ComplexImage x(16, 16);
  x(8, 8) = 1.0;
  const auto k = fft2c(x);
  for (const auto& v : k.values()) EXPECT_NEAR(std::abs(v - cplx(1.0 / 16.0)), 0.0, 1e-15);
}

TEST(Fourier, ConstantImageConcentratesAtDc) {
  const double c = 0.7;
  const ComplexImage x(8, 12, c);
  const auto k = fft2c(x);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t q = 0; q < 12; ++q) {
      const cplx expected = (r == 4 && q == 6) ? cplx(c * std::sqrt(96.0)) : cplx{};
      EXPECT_LT(std::abs(k(r, q) - expected), 1e-13);
    }
}

TEST(Fourier, DcCoefficientGivesOnesImage) {
  KSpaceGrid k(16, 8);
  k(8, 4) = std::sqrt(128.0);
  const auto x = ifft2c(k);
  for (const auto& v : x.values()) EXPECT_LT(std::abs(v - cplx(1.0)), 1e-13);
}

TEST(Fourier, RoundTrip) {
  std::mt19937_64 rng(2);
  const auto x = random_image(32, 32, rng);
  EXPECT_LT(max_abs_diff(ifft2c(fft2c(x)), x), 1e-12);
}

TEST(Fourier, UnitarityAcrossSizes) {
  std::mt19937_64 rng(3);
  for (std::size_t n : {16, 24, 64, 100, 256, 512}) {
    const auto x = random_image(n, n + (n < 512 ? 2 : 0), rng);
    const double a = x.norm(), b = fft2c(x).norm();
    EXPECT_LT(std::abs(a - b) / a, 1e-12) << n;
  }
}

TEST(Fourier, RejectsOddDimensionsAndNonFinite) {
  EXPECT_THROW(fft2c(ComplexImage(7, 8)), InvalidInput);
  ComplexImage x(8, 8);
  x(1, 1) = cplx(std::nan(""), 0.0);
  EXPECT_THROW(fft2c(x), InvalidInput);
  KSpaceGrid k(8, 8);
  k(0, 0) = cplx(0.0, INFINITY);
  EXPECT_THROW(ifft2c(k), InvalidInput);
}

TEST(ForwardMasked, FullMaskIsFft) {
  std::mt19937_64 rng(4);
  const auto x = random_image(16, 16, rng);
  EXPECT_EQ(forward_masked(x, SamplingMask::full(16, 16)), fft2c(x));
}

TEST(ForwardMasked, EmptyMaskIsZero) {
  std::mt19937_64 rng(5);
  const auto x = random_image(16, 16, rng);
  EXPECT_EQ(forward_masked(x, SamplingMask::empty(16, 16)).norm(), 0.0);
}

TEST(ForwardMasked, AgreesOnOmegaZeroElsewhere) {
  std::mt19937_64 rng(6);
  const auto x = random_image(32, 32, rng);
  const auto m = random_mask(32, 32, 0.5, rng);
  const auto full = fft2c(x), part = forward_masked(x, m);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(part[i], m[i] ? full[i] : cplx{});
}

TEST(ForwardMasked, ShapeMismatchThrows) {
  EXPECT_THROW(forward_masked(ComplexImage(8, 8), SamplingMask::full(8, 10)), DimensionError);
  EXPECT_THROW(adjoint_masked(KSpaceGrid(8, 8), SamplingMask::full(10, 8)), DimensionError);
  EXPECT_THROW(data_consistency(ComplexImage(8, 8), KSpaceGrid(8, 8), SamplingMask::full(8, 10)),
               DimensionError);
}

TEST(AdjointMasked, FullMaskInvertsFft) {
  std::mt19937_64 rng(7);
  const auto x = random_image(16, 16, rng);
  EXPECT_LT(max_abs_diff(adjoint_masked(fft2c(x), SamplingMask::full(16, 16)), x), 1e-12);
}

TEST(AdjointMasked, ZeroInZeroOut) {
  EXPECT_EQ(adjoint_masked(KSpaceGrid(8, 8), SamplingMask::full(8, 8)).norm(), 0.0);
}

TEST(AdjointMasked, ZeroesEntriesOutsideMask) {
  std::mt19937_64 rng(8);
  const auto k = random_kspace(16, 16, rng);
  const auto m = random_mask(16, 16, 0.3, rng);
  EXPECT_LT(max_abs_diff(adjoint_masked(k, m), ifft2c(restrict_to(k, m))), 1e-15);
}

TEST(AdjointMasked, InnerProductIdentity) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_image(16, 16, rng);
    const auto y = random_kspace(16, 16, rng);
    const auto m = random_mask(16, 16, 0.4, rng);
    const cplx lhs = inner(forward_masked(x, m), y);
    const cplx rhs = inner(x, adjoint_masked(y, m));
    EXPECT_LT(std::abs(lhs - rhs) / (x.norm() * y.norm()), 1e-10);
  }
}

TEST(DataConsistency, FullMaskReturnsMeasurementImage) {
  std::mt19937_64 rng(10);
  const auto x = random_image(16, 16, rng);
  const auto y = random_kspace(16, 16, rng);
  EXPECT_LT(max_abs_diff(data_consistency(x, y, SamplingMask::full(16, 16)), ifft2c(y)), 1e-13);
}

TEST(DataConsistency, EmptyMaskLeavesInput) {
  std::mt19937_64 rng(11);
  const auto x = random_image(16, 16, rng);
  EXPECT_LT(max_abs_diff(data_consistency(x, KSpaceGrid(16, 16), SamplingMask::empty(16, 16)), x),
            1e-13);
}

TEST(DataConsistency, FixesMeasurementsAndKeepsRest) {
  std::mt19937_64 rng(12);
  const auto x = random_image(32, 32, rng);
  const auto m = random_mask(32, 32, 0.5, rng);
  const auto y = restrict_to(random_kspace(32, 32, rng), m);
  const auto out = fft2c(data_consistency(x, y, m));
  const auto kx = fft2c(x);
  for (std::size_t i = 0; i < m.size(); ++i)
    EXPECT_LT(std::abs(out[i] - (m[i] ? y[i] : kx[i])), 1e-12);
}

TEST(DataConsistency, Idempotent) {
  std::mt19937_64 rng(13);
  const auto x = random_image(32, 32, rng);
  const auto m = random_mask(32, 32, 0.3, rng);
  const auto y = restrict_to(random_kspace(32, 32, rng), m);
  const auto once = data_consistency(x, y, m);
  EXPECT_LT(max_abs_diff(data_consistency(once, y, m), once), 1e-12);
}

TEST(DataConsistency, LinearPartMatchesFiniteDifferences) {
  // x -> dc(x, y, m) is affine with linear part F^H P_unsampled F.
  std::mt19937_64 rng(14);
  const auto x = random_image(8, 8, rng);
  const auto m = random_mask(8, 8, 0.5, rng);
  const auto y = restrict_to(random_kspace(8, 8, rng), m);
  const auto v = random_image(8, 8, rng);
  const double h = 1e-6;
  const auto fd = (data_consistency(x + v * h, y, m) - data_consistency(x - v * h, y, m)) * (0.5 / h);
  const auto jv = project_unsampled(v, m);
  EXPECT_LT(max_abs_diff(fd, jv) / jv.norm(), 1e-6);
}
