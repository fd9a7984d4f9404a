#pragma once

// Cascaded CNN with data-consistency layers, its self-supervised losses, reverse-mode gradients
// and an Adam optimizer. Templated on the scalar type used by the convolutions: float for
// training, double for gradient checking. FFTs and data consistency always run in double.

#include <Eigen/Dense>

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>

#include "csmri/fourier.hpp"

namespace csmri {

struct NetworkArch {
  int cascades = 7;
  int conv_layers = 5;
  int channels = 64;
  int kernel = 3;
  bool residual = true;

  void validate() const {
    if (cascades < 1 || conv_layers < 1 || channels < 1 || kernel < 1 || kernel % 2 == 0)
      throw ConfigurationError("invalid network architecture");
  }

  /// (input channels, output channels) of each convolution in a block.
  std::vector<std::pair<int, int>> layer_io() const {
    std::vector<std::pair<int, int>> io;
    for (int l = 0; l < conv_layers; ++l)
      io.emplace_back(l == 0 ? 2 : channels, l + 1 == conv_layers ? 2 : channels);
    return io;
  }

  friend bool operator==(const NetworkArch&, const NetworkArch&) = default;
};

template <class T>
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<T> values;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Per-cascade weights and biases, ordered (cascade, layer, weight then bias).
/// Weights are laid out [out][in][ky][kx].
template <class T>
struct NetworkParams {
  NetworkArch arch;
  std::vector<Tensor<T>> tensors;

  std::size_t index(int cascade, int layer) const {
    return 2 * (std::size_t(cascade) * std::size_t(arch.conv_layers) + std::size_t(layer));
  }
  Tensor<T>& weight(int t, int l) { return tensors[index(t, l)]; }
  const Tensor<T>& weight(int t, int l) const { return tensors[index(t, l)]; }
  Tensor<T>& bias(int t, int l) { return tensors[index(t, l) + 1]; }
  const Tensor<T>& bias(int t, int l) const { return tensors[index(t, l) + 1]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.values.size();
    return n;
  }
  bool all_finite() const {
    for (const auto& t : tensors)
      for (auto v : t.values)
        if (!std::isfinite(v)) return false;
    return true;
  }
  /// Zero-valued tensors of the same shapes, used for gradients and optimizer moments.
  std::vector<Tensor<T>> zeros_like() const {
    std::vector<Tensor<T>> z;
    for (const auto& t : tensors) z.push_back({t.dims, std::vector<T>(t.values.size(), T(0))});
    return z;
  }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// He-normal hidden layers, zero final layer: with residual blocks every block starts as identity.
template <class T = float>
NetworkParams<T> init_params(const NetworkArch& arch, std::uint64_t seed) {
  arch.validate();
  NetworkParams<T> p{arch, {}};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto io = arch.layer_io();
  const auto k = std::uint32_t(arch.kernel);
  for (int t = 0; t < arch.cascades; ++t)
    for (int l = 0; l < arch.conv_layers; ++l) {
      const auto [cin, cout] = io[std::size_t(l)];
      Tensor<T> w{{std::uint32_t(cout), std::uint32_t(cin), k, k}, {}};
      w.values.resize(std::size_t(cout) * cin * k * k, T(0));
      if (l + 1 < arch.conv_layers) {
        const double scale = std::sqrt(2.0 / double(cin * arch.kernel * arch.kernel));
        for (auto& v : w.values) v = T(normal(rng) * scale);
      }
      p.tensors.push_back(std::move(w));
      p.tensors.push_back({{std::uint32_t(cout)}, std::vector<T>(std::size_t(cout), T(0))});
    }
  return p;
}

namespace detail {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;  // rows = pixels, cols = channels

template <class T>
Mat<T> to_channels(const ComplexImage& img) {
  Mat<T> m(Eigen::Index(img.size()), 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    m(Eigen::Index(i), 0) = T(img[i].real());
    m(Eigen::Index(i), 1) = T(img[i].imag());
  }
  return m;
}

template <class T>
ComplexImage from_channels(const Mat<T>& m, std::size_t h, std::size_t w) {
  ComplexImage img(h, w);
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = {double(m(Eigen::Index(i), 0)), double(m(Eigen::Index(i), 1))};
  return img;
}

// Convolutions are evaluated tap by tap. Pixels are stored row-major along the matrix rows, so a
// spatial shift (oy, ox) is a contiguous row offset d = oy * w + ox. Each tap is one GEMM on a
// row block; the few pixels whose shifted column wraps into the neighbouring image row are
// subtracted back out afterwards.
struct Tap {
  Eigen::Index offset = 0;                  // d
  Eigen::Index first = 0, count = 0;        // output rows [first, first + count) have p + d in range
  std::vector<Eigen::Index> wrapped;        // output rows in that range whose column wraps
  std::vector<Eigen::Index> wrapped_source; // wrapped + d
};

inline std::vector<Tap> make_taps(std::size_t h, std::size_t w, int k) {
  const int pad = k / 2;
  const auto n = Eigen::Index(h * w);
  std::vector<Tap> taps;
  for (int dy = 0; dy < k; ++dy)
    for (int dx = 0; dx < k; ++dx) {
      Tap t;
      const long oy = dy - pad, ox = dx - pad;
      t.offset = Eigen::Index(oy * long(w) + ox);
      t.first = std::max<Eigen::Index>(0, -t.offset);
      t.count = std::min<Eigen::Index>(n, n - t.offset) - t.first;
      for (Eigen::Index p = t.first; p < t.first + t.count; ++p) {
        const long j = long(p % Eigen::Index(w)) + ox;
        if (j < 0 || j >= long(w)) {
          t.wrapped.push_back(p);
          t.wrapped_source.push_back(p + t.offset);
        }
      }
      taps.push_back(std::move(t));
    }
  return taps;
}

// Tap (dy, dx) of a weight [out][in][ky][kx] as an in x out matrix.
template <class T>
std::vector<Mat<T>> tap_matrices(const Tensor<T>& weight) {
  const auto cout = Eigen::Index(weight.dims[0]), cin = Eigen::Index(weight.dims[1]);
  const auto kk = Eigen::Index(weight.dims[2]) * Eigen::Index(weight.dims[3]);
  std::vector<Mat<T>> m(std::size_t(kk), Mat<T>(cin, cout));
  for (Eigen::Index o = 0; o < cout; ++o)
    for (Eigen::Index c = 0; c < cin; ++c)
      for (Eigen::Index t = 0; t < kk; ++t) m[std::size_t(t)](c, o) = weight.values[std::size_t((o * cin + c) * kk + t)];
  return m;
}

template <class T>
Mat<T> conv_forward(const Mat<T>& in, const Tensor<T>& weight, const std::vector<T>& bias,
                    const std::vector<Tap>& taps) {
  const auto wt = tap_matrices(weight);
  Mat<T> out(in.rows(), Eigen::Index(weight.dims[0]));
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c).setConstant(bias[std::size_t(c)]);
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const auto& tap = taps[t];
    out.middleRows(tap.first, tap.count).noalias() += in.middleRows(tap.first + tap.offset, tap.count) * wt[t];
    if (!tap.wrapped.empty())
      out(tap.wrapped, Eigen::all) -= in(tap.wrapped_source, Eigen::all) * wt[t];
  }
  return out;
}

// Adds the weight gradient (same layout as the weight) and returns dL/d(in).
template <class T>
Mat<T> conv_backward(const Mat<T>& in, const Tensor<T>& weight, const Mat<T>& g,
                     const std::vector<Tap>& taps, std::vector<T>& grad_weight) {
  const auto wt = tap_matrices(weight);
  const auto cout = Eigen::Index(weight.dims[0]), cin = Eigen::Index(weight.dims[1]);
  const auto kk = Eigen::Index(taps.size());
  Mat<T> gin = Mat<T>::Zero(in.rows(), in.cols());
  Mat<T> gw(cin, cout);
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const auto& tap = taps[t];
    const auto src = in.middleRows(tap.first + tap.offset, tap.count);
    const auto gsl = g.middleRows(tap.first, tap.count);
    gw.noalias() = src.transpose() * gsl;
    gin.middleRows(tap.first + tap.offset, tap.count).noalias() += gsl * wt[t].transpose();
    if (!tap.wrapped.empty()) {
      const Mat<T> gw_edge = g(tap.wrapped, Eigen::all);
      gw.noalias() -= in(tap.wrapped_source, Eigen::all).transpose() * gw_edge;
      gin(tap.wrapped_source, Eigen::all) -= gw_edge * wt[t].transpose();
    }
    for (Eigen::Index o = 0; o < cout; ++o)
      for (Eigen::Index c = 0; c < cin; ++c)
        grad_weight[std::size_t((o * cin + c) * kk + Eigen::Index(t))] += gw(c, o);
  }
  return gin;
}

/// Inputs of every convolution of one block; layer l > 0 inputs are post-ReLU.
template <class T>
struct BlockTape {
  std::vector<Mat<T>> inputs;
};

template <class T>
Mat<T> block_forward(const NetworkParams<T>& p, int t, const Mat<T>& x0, const std::vector<Tap>& taps,
                     BlockTape<T>* tape) {
  const int L = p.arch.conv_layers;
  Mat<T> act = x0;
  for (int l = 0; l < L; ++l) {
    Mat<T> out = conv_forward(act, p.weight(t, l), p.bias(t, l).values, taps);
    if (l + 1 < L) out = out.cwiseMax(T(0));
    if (tape) tape->inputs.push_back(std::move(act));
    act = std::move(out);
  }
  if (p.arch.residual) act += x0;
  return act;
}

// Accumulates parameter gradients into `grads`, returns the gradient w.r.t. the block input.
template <class T>
Mat<T> block_backward(const NetworkParams<T>& p, int t, const BlockTape<T>& tape,
                      const Mat<T>& grad_out, const std::vector<Tap>& taps,
                      std::vector<Tensor<T>>& grads) {
  const int L = p.arch.conv_layers;
  Mat<T> g = grad_out;
  for (int l = L - 1; l >= 0; --l) {
    const Mat<T>& in = tape.inputs[std::size_t(l)];
    auto& gb = grads[p.index(t, l) + 1].values;
    for (Eigen::Index c = 0; c < g.cols(); ++c) gb[std::size_t(c)] += g.col(c).sum();
    Mat<T> gin = conv_backward(in, p.weight(t, l), g, taps, grads[p.index(t, l)].values);
    if (l > 0) gin = (in.array() > T(0)).select(gin, T(0));
    g = std::move(gin);
  }
  if (p.arch.residual) g += grad_out;
  return g;
}

}  // namespace detail

/// Intermediate values of a cascade evaluation, kept for the backward pass.
template <class T>
struct CascadeTape {
  std::vector<detail::BlockTape<T>> blocks;
};

/// x_1 = zf; x_{t+1} = DC(block_t(x_t), y, mask). Returns x_{n+1}.
template <class T>
ComplexImage cascade_forward(const ComplexImage& zf, const KSpaceGrid& y_sub,
                             const SamplingMask& mask_sub, const NetworkParams<T>& params,
                             CascadeTape<T>* tape = nullptr) {
  require_same_shape(zf, y_sub, "cascade_forward");
  require_same_shape(zf, mask_sub, "cascade_forward");
  const auto h = zf.height(), w = zf.width();
  const auto taps = detail::make_taps(h, w, params.arch.kernel);
  ComplexImage x = zf;
  if (tape) tape->blocks.assign(std::size_t(params.arch.cascades), {});
  for (int t = 0; t < params.arch.cascades; ++t) {
    const auto x0 = detail::to_channels<T>(x);
    const auto out = detail::block_forward(params, t, x0, taps,
                                           tape ? &tape->blocks[std::size_t(t)] : nullptr);
    x = data_consistency(detail::from_channels(out, h, w), y_sub, mask_sub);
  }
  return x;
}

/// Backpropagate dL/d(output) (packed as dL/dRe + i dL/dIm) through a taped cascade.
template <class T>
std::vector<Tensor<T>> cascade_backward(const NetworkParams<T>& params, const CascadeTape<T>& tape,
                                        const SamplingMask& mask_sub, ComplexImage grad_out) {
  const auto h = grad_out.height(), w = grad_out.width();
  auto grads = params.zeros_like();
  const auto taps = detail::make_taps(h, w, params.arch.kernel);
  for (int t = params.arch.cascades - 1; t >= 0; --t) {
    const auto g_block = detail::to_channels<T>(project_unsampled(grad_out, mask_sub));
    const auto g_in = detail::block_backward(params, t, tape.blocks[std::size_t(t)], g_block, taps, grads);
    grad_out = detail::from_channels(g_in, h, w);
  }
  return grads;
}

/// ||y_U - F_U x||^2.
inline double ss_loss(const ComplexImage& x_lambda, const KSpaceGrid& y_upsilon,
                      const SamplingMask& upsilon) {
  require_same_shape(x_lambda, y_upsilon, "ss_loss");
  const KSpaceGrid k = forward_masked(x_lambda, upsilon);
  double s = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i)
    if (upsilon[i]) s += std::norm(y_upsilon[i] - k[i]);
  return s;
}

/// 1/2 ||y_U - F_U x||^2 + mu/2 ||x_k - x - q_k||^2.
inline double combined_loss(const ComplexImage& x_lambda, const KSpaceGrid& y_upsilon,
                            const SamplingMask& upsilon, const ComplexImage& x_k,
                            const ComplexImage& q_k, double mu) {
  if (!(mu >= 0.0)) throw InvalidParameter("mu must be nonnegative");
  return 0.5 * ss_loss(x_lambda, y_upsilon, upsilon) + 0.5 * mu * (x_k - x_lambda - q_k).norm_squared();
}

/// The fixed denoiser target (x_k, q_k) and weight mu of the augmented term.
struct RedCoupling {
  const ComplexImage* x_k = nullptr;
  const ComplexImage* q_k = nullptr;
  double mu = 0.0;
};

/// Everything one self-supervised gradient evaluation needs.
struct LossInputs {
  const ComplexImage* zf = nullptr;       ///< network input F_L^H y_L
  const KSpaceGrid* y_dc = nullptr;       ///< measurements used by the DC layers
  const SamplingMask* dc_mask = nullptr;  ///< mask of the DC layers
  const KSpaceGrid* y_loss = nullptr;     ///< held-out measurements y_U
  const SamplingMask* loss_mask = nullptr;
  RedCoupling red{};
};

template <class T>
struct LossEvaluation {
  double total = 0.0;
  double kdc = 0.0;  ///< ||y_U - F_U x||^2
  double cs = 0.0;   ///< mu/2 ||x_k - x - q_k||^2
  ComplexImage output;
  std::vector<Tensor<T>> grads;
};

template <class T>
LossEvaluation<T> loss_and_gradient(const NetworkParams<T>& params, const LossInputs& in) {
  CascadeTape<T> tape;
  LossEvaluation<T> ev;
  ev.output = cascade_forward(*in.zf, *in.y_dc, *in.dc_mask, params, &tape);

  KSpaceGrid resid = fft2c(ev.output);
  for (std::size_t i = 0; i < resid.size(); ++i)
    resid[i] = (*in.loss_mask)[i] ? resid[i] - (*in.y_loss)[i] : cplx{};
  ev.kdc = resid.norm_squared();
  ComplexImage grad = ifft2c(resid);
  if (in.red.x_k) {
    const ComplexImage dev = ev.output - *in.red.x_k + *in.red.q_k;
    ev.cs = 0.5 * in.red.mu * dev.norm_squared();
    grad += dev * in.red.mu;
  }
  ev.total = 0.5 * ev.kdc + ev.cs;
  ev.grads = cascade_backward(params, tape, *in.dc_mask, std::move(grad));
  return ev;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  long step = 0;

  static AdamState like(const NetworkParams<T>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam step. Rejects non-finite gradients with the epoch for context.
template <class T>
void adam_update(NetworkParams<T>& params, AdamState<T>& state, const std::vector<Tensor<T>>& grads,
                 const AdamConfig& cfg, int epoch = -1) {
  for (const auto& g : grads)
    for (auto v : g.values)
      if (!std::isfinite(v)) throw TrainingDiverged("non-finite gradient", epoch);
  if (state.m.empty()) state = AdamState<T>::like(params);
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& p = params.tensors[t].values;
    auto& m = state.m[t].values;
    auto& v = state.v[t].values;
    const auto& g = grads[t].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = double(g[i]);
      m[i] = T(cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi);
      v[i] = T(cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi);
      const double mhat = double(m[i]) / c1, vhat = double(v[i]) / c2;
      p[i] = T(double(p[i]) - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
  if (!params.all_finite()) throw TrainingDiverged("non-finite parameters after update", epoch);
}

/// Gradient of the loss through the whole cascade followed by one Adam update.
template <class T>
LossEvaluation<T> train_step(NetworkParams<T>& params, AdamState<T>& state, const LossInputs& in,
                             const AdamConfig& cfg, int epoch = -1) {
  auto ev = loss_and_gradient(params, in);
  adam_update(params, state, ev.grads, cfg, epoch);
  return ev;
}

//-------------------------------------------------------------------------------------------------
// Checkpoints: "CSNN-V1\0", u32 cascades, then per tensor u32 rank, u32 dims..., f32 payload.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, std::uint64_t& offset) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated file", offset);
  offset += 4;
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& is, std::uint64_t& offset) {
  return std::bit_cast<float>(get_u32(is, offset));
}

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'N', 'N', '-', 'V', '1', '\0'};

template <class T>
void save_checkpoint(const std::string& path, const NetworkParams<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 8);
  detail::put_u32(os, std::uint32_t(params.arch.cascades));
  for (const auto& t : params.tensors) {
    detail::put_u32(os, std::uint32_t(t.dims.size()));
    for (auto d : t.dims) detail::put_u32(os, d);
    for (auto v : t.values) detail::put_f32(os, float(v));
  }
  if (!os) throw Error("failed writing " + path);
}

/// Architecture is recovered from tensor shapes; residual blocks are assumed.
template <class T = float>
NetworkParams<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::uint64_t offset = 0;
  char magic[8];
  if (!is.read(magic, 8)) throw FormatError("truncated header", 0);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError("bad magic, expected \"CSNN-V1\\0\"", 0);
  offset = 8;
  const auto cascades = detail::get_u32(is, offset);
  NetworkParams<T> p;
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::uint64_t start = offset;
    const auto rank = detail::get_u32(is, offset);
    if (rank == 0 || rank > 4) throw FormatError("unsupported tensor rank " + std::to_string(rank), start);
    Tensor<T> t;
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(detail::get_u32(is, offset));
      n *= t.dims.back();
    }
    t.values.resize(n);
    for (auto& v : t.values) v = T(detail::get_f32(is, offset));
    p.tensors.push_back(std::move(t));
  }
  if (cascades == 0 || p.tensors.size() % (2 * cascades) != 0 || p.tensors.empty())
    throw FormatError("tensor count does not match the cascade count", offset);
  p.arch.cascades = int(cascades);
  p.arch.conv_layers = int(p.tensors.size() / (2 * cascades));
  p.arch.kernel = int(p.tensors[0].dims.back());
  p.arch.channels = p.arch.conv_layers > 1 ? int(p.tensors[0].dims[0]) : 2;
  p.arch.residual = true;
  const auto io = p.arch.layer_io();
  for (int t = 0; t < p.arch.cascades; ++t)
    for (int l = 0; l < p.arch.conv_layers; ++l) {
      const auto& w = p.weight(t, l);
      const auto [cin, cout] = io[std::size_t(l)];
      if (w.dims.size() != 4 || int(w.dims[0]) != cout || int(w.dims[1]) != cin ||
          p.bias(t, l).values.size() != std::size_t(cout))
        throw FormatError("tensor shapes inconsistent with a cascade architecture", offset);
    }
  return p;
}

}  // namespace csmri
