#include <gtest/gtest.h>

#include <sstream>

#include "csmri/phantom.hpp"
#include "csmri/selfsup.hpp"
#include "test_util.hpp"

using namespace csmri;
using csmri::test::random_image;

namespace {

const DenoiserKind kDct{DenoiserVariant::dct_hard_threshold};
const NetworkArch kSmall{2, 3, 6, 3, true};

struct Problem {
  ComplexImage truth = shepp_logan(32, 32);
  SamplingMask omega = generate_cartesian_mask({32, 32, 3.0, 8, 1.0, 5});
  KSpaceGrid y = forward_masked(truth, omega);
};

ReconConfig small_config(int epochs) {
  ReconConfig c;
  c.ss_epochs = epochs;
  c.acs_size = 8;
  c.seed = 3;
  c.eval_every = 0;
  c.cs_iters = 3;
  c.cs_interval = 5;
  c.denoiser_launch_epoch = 4;
  c.denoiser = DampDenoiser{kDct};
  return c;
}

void expect_same_training(const TrainResult& a, const TrainResult& b) {
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.image, b.image);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].l_kdc, b.history[i].l_kdc) << i;
}

}  // namespace

TEST(RedUpdate, Examples) {
  std::mt19937_64 rng(1);
  const auto x = random_image(8, 8, rng), g = random_image(8, 8, rng), q = random_image(8, 8, rng);
  EXPECT_EQ(red_update(x, g, q, 2.0, 0.0), g);
  EXPECT_LE(max_abs_diff(red_update(x, g, q, 0.0, 3.0), x + q), 1e-15);  // (1/3) * 3 rounds
  EXPECT_EQ(red_update(x, ComplexImage(8, 8), ComplexImage(8, 8), 1.0, 1.0), x * 0.5);
  EXPECT_THROW(red_update(x, g, q, 0.0, 0.0), DegenerateConfiguration);
  EXPECT_THROW(red_update(x, g, q, -1.0, 2.0), InvalidParameter);
}

TEST(RedUpdate, ZeroesTheObjectiveGradient) {
  std::mt19937_64 rng(2);
  for (auto [lambda, mu] : {std::pair{3.0, 1.0}, {1.5, 0.5}, {0.125, 0.25}, {0.5, 1.0}}) {
    const auto x = random_image(16, 16, rng), g = random_image(16, 16, rng), q = random_image(16, 16, rng);
    const auto xn = red_update(x, g, q, lambda, mu);
    const auto grad = (xn - g) * lambda + (xn - x - q) * mu;
    EXPECT_LT(grad.max_abs(), 1e-12);
  }
}

TEST(RedUpdate, NormBoundedByInputs) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int i = 0; i < 50; ++i) {
    const auto x = random_image(8, 8, rng), g = random_image(8, 8, rng, 2.0), q = random_image(8, 8, rng, 0.3);
    const double lambda = u(rng), mu = u(rng);
    const double bound = std::max(g.norm(), (x + q).norm());
    EXPECT_LE(red_update(x, g, q, lambda, mu).norm(), bound * (1 + 1e-12));
  }
}

TEST(MultiplierUpdate, Examples) {
  std::mt19937_64 rng(4);
  const auto q = random_image(8, 8, rng), x = random_image(8, 8, rng), xk = random_image(8, 8, rng);
  EXPECT_EQ(multiplier_update(q, x, xk, 0.0), q);
  const auto v = x - xk;
  EXPECT_LT(max_abs_diff(multiplier_update(ComplexImage(8, 8), x, xk, 0.001), v * 0.001), 1e-16);
}

TEST(ReconConfig, Validation) {
  ReconConfig c;
  EXPECT_NO_THROW(c.validate());
  c.cs_interval = 0;
  EXPECT_THROW(c.validate(), ConfigurationError);
  c = {};
  c.mu = -1;
  EXPECT_THROW(c.validate(), ConfigurationError);
  c = {};
  c.lambda = 0.5;
  c.denoiser = DenoiserKind{};
  EXPECT_THROW(c.validate(), ConfigurationError);  // plain denoiser without sigma_fixed
  c.sigma_fixed = 0.012;
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainSs, FullMaskOutputIsInverseFft) {
  const auto x = shepp_logan(32, 32);
  const auto full = SamplingMask::full(32, 32);
  const auto y = fft2c(x);
  const auto r = train_ss(y, full, kSmall, small_config(5));
  EXPECT_LT(max_abs_diff(r.image, ifft2c(y)), 1e-12);
}

TEST(TrainSs, DeterministicGivenSeed) {
  const Problem p;
  expect_same_training(train_ss(p.y, p.omega, kSmall, small_config(12)),
                       train_ss(p.y, p.omega, kSmall, small_config(12)));
  auto other = small_config(12);
  other.seed = 4;
  EXPECT_NE(train_ss(p.y, p.omega, kSmall, other).params, train_ss(p.y, p.omega, kSmall, small_config(12)).params);
}

TEST(TrainSs, RecordsPsnrWithReferenceAndShadowLossWithout) {
  const Problem p;
  auto cfg = small_config(4);
  cfg.eval_every = 2;
  const auto with_ref = train_ss(p.y, p.omega, kSmall, cfg, &p.truth);
  EXPECT_TRUE(std::isfinite(with_ref.history[0].psnr));
  EXPECT_TRUE(std::isnan(with_ref.history[1].psnr));
  EXPECT_TRUE(std::isfinite(with_ref.history[3].psnr));  // last epoch is always evaluated
  const auto without = train_ss(p.y, p.omega, kSmall, cfg);
  EXPECT_TRUE(std::isnan(without.history[0].psnr));
  EXPECT_TRUE(std::isfinite(without.history[0].shadow_kdc));
}

TEST(TrainSs, OutputScalesWithMeasurements) {
  const Problem p;
  const auto a = train_ss(p.y, p.omega, kSmall, small_config(6));
  const auto b = train_ss(p.y * 10.0, p.omega, kSmall, small_config(6));
  EXPECT_LT((b.image - a.image * 10.0).norm() / (10.0 * a.image.norm()), 1e-4);
}

TEST(TrainSsRed, DegeneratesToSsWhenAllWeightsZero) {
  const Problem p;
  auto cfg = small_config(20);
  cfg.lambda = cfg.mu = cfg.eta = 0.0;
  expect_same_training(train_ss_red(p.y, p.omega, kSmall, cfg), train_ss(p.y, p.omega, kSmall, cfg));
}

TEST(TrainSsRed, ZeroMuLeavesTrainingUnchanged) {
  const Problem p;
  auto cfg = small_config(20);
  cfg.lambda = 3.0;
  cfg.mu = 0.0;
  cfg.eta = 0.001;
  const auto red = train_ss_red(p.y, p.omega, kSmall, cfg);
  EXPECT_EQ(red.incorporation_epochs, (std::vector<int>{9, 14, 19}));
  EXPECT_EQ(red.params, train_ss(p.y, p.omega, kSmall, cfg).params);
}

TEST(TrainSsRed, SequentialAndConcurrentAgree) {
  const Problem p;
  auto cfg = small_config(20);
  cfg.lambda = 3.0;
  cfg.mu = 1.0;
  cfg.eta = 0.001;
  const auto seq = train_ss_red(p.y, p.omega, kSmall, cfg);
  cfg.concurrent = true;
  const auto par = train_ss_red(p.y, p.omega, kSmall, cfg);
  expect_same_training(seq, par);
  EXPECT_EQ(seq.incorporation_epochs, par.incorporation_epochs);
  EXPECT_GT(seq.history[10].l_cs, 0.0);
  EXPECT_TRUE(std::isfinite(seq.history[9].sigma_hat));
  EXPECT_TRUE(seq.history[9].incorporated);
}

TEST(TrainSsRed, ReportedScheduleIncorporatesAt2100) {
  // Reported brain SS-D-AMP settings on a small problem and network.
  const Problem p;
  ReconConfig cfg;
  cfg.lambda = 3.0;
  cfg.mu = 1.0;
  cfg.eta = 0.001;
  cfg.cs_iters = 25;
  cfg.cs_interval = 1000;
  cfg.ss_epochs = 4000;
  cfg.learning_rate = 1e-3;
  cfg.denoiser_launch_epoch = 1100;
  cfg.denoiser = DampDenoiser{kDct};
  cfg.acs_size = 8;
  cfg.eval_every = 0;
  const auto r = train_ss_red(p.y, p.omega, {1, 2, 2, 3, true}, cfg);
  EXPECT_EQ(r.incorporation_epochs, (std::vector<int>{2100, 3100}));
  for (const auto& h : r.history) EXPECT_EQ(h.l_cs > 0.0, h.epoch >= 2100) << h.epoch;
}

TEST(TrainSsRed, PlainDenoiserIncorporatesEveryInterval) {
  const Problem p;
  auto cfg = small_config(20);
  cfg.lambda = 0.125;
  cfg.mu = 0.25;
  cfg.eta = 0.001;
  cfg.cs_iters = 1;
  cfg.denoiser_launch_epoch = 0;
  cfg.denoiser = kDct;
  cfg.sigma_fixed = 0.012;
  const auto r = train_ss_red(p.y, p.omega, kSmall, cfg);
  EXPECT_EQ(r.incorporation_epochs, (std::vector<int>{0, 5, 10, 15}));
}

TEST(TrainSsRed, FailedJobDegradesToSs) {
  const Problem p;
  auto cfg = small_config(20);
  cfg.lambda = 3.0;
  cfg.mu = 1.0;
  DenoiserKind broken = kDct;
  broken.block_size = 64;  // larger than the image: the job throws
  broken.search_window = 64;
  cfg.denoiser = DampDenoiser{broken};
  const auto r = train_ss_red(p.y, p.omega, kSmall, cfg);
  EXPECT_TRUE(r.incorporation_epochs.empty());
  EXPECT_EQ(r.warnings.size(), 3u);
  EXPECT_EQ(r.params, train_ss(p.y, p.omega, kSmall, cfg).params);
}

TEST(History, CsvColumns) {
  std::vector<EpochRecord> h(2);
  h[0].epoch = 0;
  h[0].l_kdc = 1.5;
  h[1].epoch = 1;
  h[1].psnr = 30.0;
  std::ostringstream os;
  write_history_csv(os, h);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "epoch,L_kdc,L_CS,sigma_hat,psnr,wall_ms,shadow_kdc");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 6), "0,1.5,");
}
