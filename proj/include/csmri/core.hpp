#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csmri {

using cplx = std::complex<double>;

//-------------------------------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

#define CSMRI_DEFINE_ERROR(Name, Label)                           \
  class Name : public Error {                                     \
   public:                                                        \
    using Error::Error;                                           \
    const char* kind() const noexcept override { return Label; }  \
  };

CSMRI_DEFINE_ERROR(InvalidInput, "invalid-input")
CSMRI_DEFINE_ERROR(InvalidParameter, "invalid-parameter")
CSMRI_DEFINE_ERROR(DimensionError, "dimension")
CSMRI_DEFINE_ERROR(ConfigurationError, "configuration")
CSMRI_DEFINE_ERROR(PreconditionError, "precondition")
CSMRI_DEFINE_ERROR(DegenerateConfiguration, "degenerate-configuration")

#undef CSMRI_DEFINE_ERROR

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  const char* kind() const noexcept override { return "format"; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  const char* kind() const noexcept override { return "training-diverged"; }
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

//-------------------------------------------------------------------------------------------------
// Dense complex grids. The domain tag keeps image-space and k-space values apart at compile time.

struct ImageDomain {};
struct FourierDomain {};

template <class Domain>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t height, std::size_t width, cplx fill = {})
      : height_(height), width_(width), data_(height * width, fill) {}
  Grid(std::size_t height, std::size_t width, std::vector<cplx> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_)
      throw DimensionError("grid data length " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(height_) + "x" +
                           std::to_string(width_));
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  cplx& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
  const cplx& operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
  cplx& operator[](std::size_t i) { return data_[i]; }
  const cplx& operator[](std::size_t i) const { return data_[i]; }

  std::span<cplx> values() noexcept { return data_; }
  std::span<const cplx> values() const noexcept { return data_; }
  cplx* data() noexcept { return data_.data(); }
  const cplx* data() const noexcept { return data_.data(); }

  bool same_shape(std::size_t h, std::size_t w) const noexcept { return h == height_ && w == width_; }
  template <class Other>
  bool same_shape(const Other& o) const noexcept {
    return o.height() == height_ && o.width() == width_;
  }

  bool all_finite() const noexcept {
    for (const auto& v : data_)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
  }

  double norm() const noexcept {
    double s = 0.0;
    for (const auto& v : data_) s += std::norm(v);
    return std::sqrt(s);
  }
  double norm_squared() const noexcept {
    double s = 0.0;
    for (const auto& v : data_) s += std::norm(v);
    return s;
  }
  double max_abs() const noexcept {
    double m = 0.0;
    for (const auto& v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  Grid& operator+=(const Grid& o) {
    check_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Grid& operator-=(const Grid& o) {
    check_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Grid& operator*=(double s) noexcept {
    for (auto& v : data_) v *= s;
    return *this;
  }
  Grid& operator*=(cplx s) noexcept {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Grid operator+(Grid a, const Grid& b) { return a += b; }
  friend Grid operator-(Grid a, const Grid& b) { return a -= b; }
  friend Grid operator*(Grid a, double s) { return a *= s; }
  friend Grid operator*(double s, Grid a) { return a *= s; }
  friend Grid operator*(Grid a, cplx s) { return a *= s; }

  friend bool operator==(const Grid&, const Grid&) = default;

  void check_shape(const Grid& o) const {
    if (!same_shape(o))
      throw DimensionError("shape mismatch: " + std::to_string(height_) + "x" +
                           std::to_string(width_) + " vs " + std::to_string(o.height_) + "x" +
                           std::to_string(o.width_));
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<cplx> data_;
};

using ComplexImage = Grid<ImageDomain>;
using KSpaceGrid = Grid<FourierDomain>;

/// Inner product <a, b> = sum conj(a_i) b_i.
template <class D>
cplx inner(const Grid<D>& a, const Grid<D>& b) {
  a.check_shape(b);
  cplx s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

template <class D>
double max_abs_diff(const Grid<D>& a, const Grid<D>& b) {
  a.check_shape(b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

//-------------------------------------------------------------------------------------------------
// Sampling masks

/// Center-anchored rectangle of k-space that is always fully sampled.
struct AcsRegion {
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t row0(std::size_t grid_height) const noexcept { return grid_height / 2 - height / 2; }
  std::size_t col0(std::size_t grid_width) const noexcept { return grid_width / 2 - width / 2; }
  bool contains(std::size_t row, std::size_t col, std::size_t gh, std::size_t gw) const noexcept {
    const auto r0 = row0(gh), c0 = col0(gw);
    return row >= r0 && row < r0 + height && col >= c0 && col < c0 + width;
  }
  friend bool operator==(const AcsRegion&, const AcsRegion&) = default;
};

class SamplingMask {
 public:
  SamplingMask() = default;
  SamplingMask(std::size_t height, std::size_t width, bool fill = false, AcsRegion acs = {})
      : height_(height), width_(width), sampled_(height * width, fill ? 1 : 0), acs_(acs) {
    recount();
    validate_acs();
  }
  SamplingMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> sampled,
               AcsRegion acs = {})
      : height_(height), width_(width), sampled_(std::move(sampled)), acs_(acs) {
    if (sampled_.size() != height_ * width_)
      throw DimensionError("mask data length does not match its shape");
    for (auto& s : sampled_) s = s ? 1 : 0;
    recount();
    validate_acs();
  }

  static SamplingMask full(std::size_t h, std::size_t w) { return SamplingMask(h, w, true); }
  static SamplingMask empty(std::size_t h, std::size_t w) { return SamplingMask(h, w, false); }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return sampled_.size(); }
  std::size_t count() const noexcept { return count_; }
  const AcsRegion& acs() const noexcept { return acs_; }

  bool operator()(std::size_t row, std::size_t col) const { return sampled_[row * width_ + col] != 0; }
  bool operator[](std::size_t i) const { return sampled_[i] != 0; }
  std::span<const std::uint8_t> bytes() const noexcept { return sampled_; }

  void set(std::size_t row, std::size_t col, bool value) {
    auto& s = sampled_[row * width_ + col];
    if (s && !value) --count_;
    if (!s && value) ++count_;
    s = value ? 1 : 0;
  }

  /// Replace the ACS descriptor; throws if the new region is not fully sampled.
  void set_acs(AcsRegion acs) {
    acs_ = acs;
    validate_acs();
  }

  bool covers(const AcsRegion& region) const noexcept {
    if (region.height > height_ || region.width > width_) return false;
    const auto r0 = region.row0(height_), c0 = region.col0(width_);
    for (std::size_t r = r0; r < r0 + region.height; ++r)
      for (std::size_t c = c0; c < c0 + region.width; ++c)
        if (!(*this)(r, c)) return false;
    return true;
  }

  double sampled_fraction() const noexcept {
    return sampled_.empty() ? 0.0 : double(count_) / double(sampled_.size());
  }

  template <class Other>
  bool same_shape(const Other& o) const noexcept {
    return o.height() == height_ && o.width() == width_;
  }

  friend bool operator==(const SamplingMask&, const SamplingMask&) = default;

 private:
  void recount() noexcept {
    count_ = 0;
    for (auto s : sampled_) count_ += s;
  }
  void validate_acs() const {
    if (!covers(acs_)) throw PreconditionError("mask does not fully sample its ACS region");
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> sampled_;
  std::size_t count_ = 0;
  AcsRegion acs_{};
};

template <class A, class B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width())
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.height()) +
                         "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                         "x" + std::to_string(b.width()));
}

/// Deterministic 64-bit mixing used to derive per-epoch and per-job seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  std::uint64_t z = seed ^ (salt + 0x9E3779B97F4A7C15ull + (seed << 6) + (seed >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace csmri
