#pragma once

// Single-image self-supervised training of the cascade (SS) and its ADMM coupling with a
// denoiser or D-AMP through a RED penalty (SS-RED).

#include <chrono>
#include <future>
#include <iostream>
#include <limits>
#include <optional>
#include <ostream>
#include <variant>

#include "csmri/damp.hpp"
#include "csmri/dccnn.hpp"
#include "csmri/quality.hpp"
#include "csmri/sampling.hpp"

namespace csmri {

/// g(.) of the RED term: either a plain denoiser applied cs_iters times at sigma_fixed, or
/// D-AMP warm-started from the network estimate.
struct DampDenoiser {
  DenoiserKind kind{};
};
using RedDenoiser = std::variant<DenoiserKind, DampDenoiser>;

struct ReconConfig {
  double lambda = 0.0;
  double mu = 0.0;
  double eta = 0.0;
  int cs_iters = 25;
  int cs_interval = 1000;
  int ss_epochs = 4000;
  double learning_rate = 1e-3;
  int denoiser_launch_epoch = 1100;
  RedDenoiser denoiser = DampDenoiser{};
  std::optional<double> sigma_fixed;
  /// Seeds the first D-AMP step when its warm start is already data consistent.
  double damp_sigma_floor = 0.01;
  std::uint64_t seed = 0;

  double split_fraction = 0.5;
  std::size_t acs_size = 20;
  SplitMode split_mode = SplitMode::point;
  /// DC layers during training use (y_Lambda, Lambda); false switches to (y_Omega, Omega).
  bool dc_on_subset = true;
  /// Run the D-AMP job on a worker thread; otherwise it runs inline at its launch epoch.
  bool concurrent = false;
  /// Evaluate the full-data output every this many epochs (0 = never) for the history.
  int eval_every = 1;

  void validate() const {
    if (!(lambda >= 0.0 && mu >= 0.0 && eta >= 0.0 && learning_rate > 0.0))
      throw ConfigurationError("lambda, mu, eta must be nonnegative and the learning rate positive");
    if (cs_interval < 1) throw ConfigurationError("cs_interval must be >= 1");
    if (cs_iters < 1 || ss_epochs < 0 || denoiser_launch_epoch < 0)
      throw ConfigurationError("invalid iteration counts");
    if (std::holds_alternative<DenoiserKind>(denoiser) && lambda > 0.0 && !sigma_fixed)
      throw ConfigurationError("a plain RED denoiser requires sigma_fixed");
  }
};

struct EpochRecord {
  int epoch = 0;
  double l_kdc = 0.0;
  double l_cs = 0.0;
  double sigma_hat = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();
  /// L_kdc of a fixed held-out split, recorded when no reference image is available.
  double shadow_kdc = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
  bool incorporated = false;
};

struct TrainResult {
  ComplexImage image;
  std::vector<EpochRecord> history;
  NetworkParams<float> params;
  std::vector<int> incorporation_epochs;
  std::vector<std::string> warnings;
};

/// x_{k+1} = (lambda g + mu (x + q)) / (lambda + mu).
inline ComplexImage red_update(const ComplexImage& x_hat_omega, const ComplexImage& g_out,
                               const ComplexImage& q_k, double lambda, double mu) {
  require_same_shape(x_hat_omega, g_out, "red_update");
  require_same_shape(x_hat_omega, q_k, "red_update");
  if (!(lambda >= 0.0 && mu >= 0.0)) throw InvalidParameter("lambda and mu must be nonnegative");
  if (lambda + mu == 0.0) throw DegenerateConfiguration("red_update requires lambda + mu > 0");
  const double s = 1.0 / (lambda + mu);
  ComplexImage out(x_hat_omega.height(), x_hat_omega.width());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = s * (lambda * g_out[i] + mu * (x_hat_omega[i] + q_k[i]));
  return out;
}

/// q_{k+1} = q_k + eta (x_hat - x).
inline ComplexImage multiplier_update(const ComplexImage& q_k, const ComplexImage& x_hat_omega,
                                      const ComplexImage& x_k, double eta) {
  require_same_shape(q_k, x_hat_omega, "multiplier_update");
  require_same_shape(q_k, x_k, "multiplier_update");
  ComplexImage out = q_k;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += eta * (x_hat_omega[i] - x_k[i]);
  return out;
}

namespace detail {

/// Measurements rescaled so the zero-filled magnitude peaks at 1.
struct NormalizedProblem {
  KSpaceGrid y;
  SamplingMask omega;
  double scale = 1.0;
  std::optional<ComplexImage> reference;  // scaled identically
};

inline NormalizedProblem normalize(const KSpaceGrid& y, const SamplingMask& omega,
                                   const ComplexImage* reference) {
  require_measured(y, omega, "self-supervised training");
  const double peak = adjoint_masked(y, omega).max_abs();
  NormalizedProblem p{y, omega, peak > 0.0 ? 1.0 / peak : 1.0, std::nullopt};
  p.y *= p.scale;
  if (reference) {
    require_same_shape(*reference, y, "reference");
    p.reference = *reference * p.scale;
  }
  return p;
}

/// Result of one g(.) evaluation.
struct DenoiserJobResult {
  ComplexImage g_out;
  double sigma_hat = std::numeric_limits<double>::quiet_NaN();
};

class Trainer {
 public:
  Trainer(const KSpaceGrid& y, const SamplingMask& omega, const NetworkArch& arch,
          const ReconConfig& cfg, const ComplexImage* reference)
      : cfg_(cfg), prob_(normalize(y, omega, reference)),
        params_(init_params<float>(arch, mix_seed(cfg.seed, 0xC0FFEEull))),
        adam_(AdamState<float>::like(params_)),
        zf_omega_(adjoint_masked(prob_.y, prob_.omega)) {
    cfg.validate();
    if (!prob_.reference && cfg.eval_every > 0) {
      // Fixed held-out split for monitoring; its seed is disjoint from the training splits.
      auto s = split_subsets(prob_.omega, cfg.split_fraction, cfg.acs_size,
                             mix_seed(cfg.seed, 0x5AD0u), cfg.split_mode);
      shadow_ = std::move(s);
    }
  }

  ComplexImage estimate() const { return cascade_forward(zf_omega_, prob_.y, prob_.omega, params_); }

  /// One Step-1 update on a fresh random split. `red` couples the loss to (x_k, q_k).
  EpochRecord train_epoch(int epoch, const RedCoupling& red) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto split = split_subsets(prob_.omega, cfg_.split_fraction, cfg_.acs_size,
                                     mix_seed(cfg_.seed, std::uint64_t(epoch)), cfg_.split_mode);
    const KSpaceGrid y_lambda = restrict_to(prob_.y, split.lambda);
    const KSpaceGrid y_upsilon = restrict_to(prob_.y, split.upsilon);
    const ComplexImage zf = adjoint_masked(y_lambda, split.lambda);
    LossInputs in{&zf,
                  cfg_.dc_on_subset ? &y_lambda : &prob_.y,
                  cfg_.dc_on_subset ? &split.lambda : &prob_.omega,
                  &y_upsilon,
                  &split.upsilon,
                  red};
    const auto ev = train_step(params_, adam_, in, AdamConfig{cfg_.learning_rate}, epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_kdc = ev.kdc;
    rec.l_cs = ev.cs;
    if (cfg_.eval_every > 0 && (epoch % cfg_.eval_every == 0 || epoch + 1 == cfg_.ss_epochs)) {
      if (prob_.reference) {
        rec.psnr = psnr(*prob_.reference, estimate());
      } else if (shadow_) {
        const KSpaceGrid yl = restrict_to(prob_.y, shadow_->lambda);
        const ComplexImage out = cascade_forward(adjoint_masked(yl, shadow_->lambda),
                                                 cfg_.dc_on_subset ? yl : prob_.y,
                                                 cfg_.dc_on_subset ? shadow_->lambda : prob_.omega,
                                                 params_);
        rec.shadow_kdc = ss_loss(out, restrict_to(prob_.y, shadow_->upsilon), shadow_->upsilon);
      }
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

  TrainResult finish(std::vector<EpochRecord> history) {
    TrainResult r;
    r.image = estimate() * (1.0 / prob_.scale);
    r.history = std::move(history);
    r.params = params_;
    return r;
  }

  const ReconConfig& cfg() const { return cfg_; }
  const NormalizedProblem& problem() const { return prob_; }

 private:
  ReconConfig cfg_;
  NormalizedProblem prob_;
  NetworkParams<float> params_;
  AdamState<float> adam_;
  ComplexImage zf_omega_;
  std::optional<SubsetPair> shadow_;
};

/// Evaluate g on an immutable snapshot of the network estimate.
inline DenoiserJobResult run_denoiser_job(const ReconConfig& cfg, const KSpaceGrid& y,
                                          const SamplingMask& omega, const ComplexImage& snapshot,
                                          std::uint64_t seed) {
  if (const auto* d = std::get_if<DampDenoiser>(&cfg.denoiser)) {
    DampOptions opt;
    opt.iters = cfg.cs_iters;
    opt.warm_start = snapshot;
    opt.seed = seed;
    opt.sigma_floor = cfg.damp_sigma_floor;
    auto rec = damp_reconstruct(y, omega, d->kind, opt);
    return {std::move(rec.image), rec.trace.records.back().sigma_hat};
  }
  const auto& kind = std::get<DenoiserKind>(cfg.denoiser);
  ComplexImage g = snapshot;
  for (int i = 0; i < cfg.cs_iters; ++i) g = denoise(g, *cfg.sigma_fixed, kind);
  return {std::move(g), *cfg.sigma_fixed};
}

}  // namespace detail

/// Plain self-supervised training: a fresh (Lambda, Upsilon) split every epoch and the loss
/// 1/2 ||y_U - F_U f(F_L^H y_L)||^2. An optional reference enables per-epoch PSNR.
inline TrainResult train_ss(const KSpaceGrid& y, const SamplingMask& omega, const NetworkArch& arch,
                            const ReconConfig& cfg, const ComplexImage* reference = nullptr) {
  detail::Trainer trainer(y, omega, arch, cfg, reference);
  std::vector<EpochRecord> history;
  for (int epoch = 0; epoch < cfg.ss_epochs; ++epoch) history.push_back(trainer.train_epoch(epoch, {}));
  return trainer.finish(std::move(history));
}

/// SS coupled to g(.) through RED/ADMM. Pure SS until the launch epoch; the g job then runs on
/// a snapshot of the network estimate and is incorporated cs_interval epochs later (Step 2),
/// after which every epoch trains on the augmented loss and a new job is launched.
/// Plain denoisers are evaluated synchronously and incorporated at once.
inline TrainResult train_ss_red(const KSpaceGrid& y, const SamplingMask& omega,
                                const NetworkArch& arch, const ReconConfig& cfg,
                                const ComplexImage* reference = nullptr,
                                std::ostream* log = nullptr) {
  detail::Trainer trainer(y, omega, arch, cfg, reference);
  const auto& prob = trainer.problem();
  const bool use_red = cfg.lambda > 0.0;
  const bool is_damp = std::holds_alternative<DampDenoiser>(cfg.denoiser);

  std::optional<ComplexImage> x_k;
  ComplexImage q_k(omega.height(), omega.width());
  std::vector<EpochRecord> history;
  std::vector<int> incorporations;
  std::vector<std::string> warnings;

  struct PendingJob {
    std::future<detail::DenoiserJobResult> result;
    int consume_epoch = 0;
  };
  std::optional<PendingJob> pending;

  auto launch = [&](int epoch) {
    ComplexImage snapshot = trainer.estimate();
    const std::uint64_t job_seed = mix_seed(cfg.seed, 0xDA3Bull + std::uint64_t(epoch));
    const auto policy = cfg.concurrent ? std::launch::async : std::launch::deferred;
    PendingJob job{std::async(policy,
                              [cfg, y = prob.y, om = prob.omega, snap = std::move(snapshot), job_seed] {
                                return detail::run_denoiser_job(cfg, y, om, snap, job_seed);
                              }),
                   epoch + cfg.cs_interval};
    if (!cfg.concurrent) job.result.wait();  // sequential mode evaluates at the launch epoch
    pending = std::move(job);
  };

  auto incorporate = [&](int epoch, detail::DenoiserJobResult&& g, EpochRecord& rec) {
    const ComplexImage x_hat = trainer.estimate();
    ComplexImage x_next = red_update(x_hat, g.g_out, q_k, cfg.lambda, cfg.mu);
    q_k = multiplier_update(q_k, x_hat, x_next, cfg.eta);
    x_k = std::move(x_next);
    rec.sigma_hat = g.sigma_hat;
    rec.incorporated = true;
    incorporations.push_back(epoch);
    if (log) *log << "epoch " << epoch << ": denoiser estimate incorporated\n";
  };

  for (int epoch = 0; epoch < cfg.ss_epochs; ++epoch) {
    EpochRecord pre;
    bool incorporated_now = false;
    if (use_red) {
      if (is_damp) {
        if (pending && epoch == pending->consume_epoch) {
          try {
            incorporate(epoch, pending->result.get(), pre);
            incorporated_now = true;
          } catch (const Error& e) {
            warnings.push_back("epoch " + std::to_string(epoch) + ": denoiser job failed: " + e.what());
            if (log) *log << "warning: " << warnings.back() << "\n";
          }
          pending.reset();
          launch(epoch);
        } else if (!pending && epoch == cfg.denoiser_launch_epoch) {
          launch(epoch);
        }
      } else if (epoch >= cfg.denoiser_launch_epoch &&
                 (epoch - cfg.denoiser_launch_epoch) % cfg.cs_interval == 0) {
        try {
          incorporate(epoch,
                      detail::run_denoiser_job(cfg, prob.y, prob.omega, trainer.estimate(), 0), pre);
          incorporated_now = true;
        } catch (const Error& e) {
          warnings.push_back("epoch " + std::to_string(epoch) + ": denoiser failed: " + e.what());
        }
      }
    }

    const RedCoupling red = x_k ? RedCoupling{&*x_k, &q_k, cfg.mu} : RedCoupling{};
    EpochRecord rec = trainer.train_epoch(epoch, red);
    if (incorporated_now) {
      rec.sigma_hat = pre.sigma_hat;
      rec.incorporated = true;
    }
    history.push_back(rec);
  }
  if (pending && pending->result.valid()) pending->result.wait();

  auto result = trainer.finish(std::move(history));
  result.incorporation_epochs = std::move(incorporations);
  result.warnings = std::move(warnings);
  return result;
}

/// Per-epoch history as CSV: epoch, L_kdc, L_CS, sigma_hat, psnr, wall_ms, shadow_kdc.
/// Missing values are left empty.
inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  auto field = [&](double v) {
    if (std::isfinite(v)) os << v;
  };
  os.precision(17);
  os << "epoch,L_kdc,L_CS,sigma_hat,psnr,wall_ms,shadow_kdc\n";
  for (const auto& r : history) {
    os << r.epoch << ',';
    field(r.l_kdc);
    os << ',';
    field(r.l_cs);
    os << ',';
    field(r.sigma_hat);
    os << ',';
    field(r.psnr);
    os << ',';
    field(r.wall_ms);
    os << ',';
    field(r.shadow_kdc);
    os << '\n';
  }
}

}  // namespace csmri
