#pragma once

// Experiment orchestration: configuration, method dispatch, artifact writing and the
// aggregation of metric files into a results table.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <set>

#include "csmri/io.hpp"
#include "csmri/phantom.hpp"
#include "csmri/selfsup.hpp"
#include "json.hpp"

namespace csmri {

enum class Method { zf, ista, damp, ss, ss_bm3d, ss_damp };

inline const std::map<std::string, Method>& method_names() {
  static const std::map<std::string, Method> names{{"zf", Method::zf},       {"ista", Method::ista},
                                                   {"damp", Method::damp},   {"ss", Method::ss},
                                                   {"ss-bm3d", Method::ss_bm3d},
                                                   {"ss-damp", Method::ss_damp}};
  return names;
}

inline std::string to_string(Method m) {
  for (const auto& [name, value] : method_names())
    if (value == m) return name;
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  const auto& names = method_names();
  if (auto it = names.find(s); it != names.end()) return it->second;
  throw ConfigurationError("unknown method '" + s + "'");
}

inline DenoiserVariant parse_denoiser(const std::string& s) {
  if (s == "bm3d" || s == "block_match_3d_ht") return DenoiserVariant::block_match_3d_ht;
  if (s == "dct" || s == "dct_hard_threshold") return DenoiserVariant::dct_hard_threshold;
  throw ConfigurationError("unknown denoiser '" + s + "'");
}

struct ExperimentSpec {
  // Data: exactly one of phantom_size / kspace_path.
  std::optional<std::size_t> phantom_size;
  std::optional<std::string> kspace_path;
  std::optional<std::string> reference_path;
  /// Standard deviation of complex Gaussian noise added to phantom k-space (E|n|^2 = sigma^2).
  double noise_sigma = 0.0;

  std::optional<std::string> mask_path;
  MaskSpec mask{};

  Method method = Method::zf;
  ReconConfig recon{};
  NetworkArch arch{};
  DenoiserKind cs_denoiser{};
  int damp_iters = 30;
  int ista_iters = 25;
  double ista_sigma_start = 0.1;
  double ista_sigma_end = 0.01;

  std::string output_dir = "out";
  bool write_png = true;

  void validate() const {
    if (phantom_size.has_value() == kspace_path.has_value())
      throw ConfigurationError("exactly one of a phantom size or a k-space input is required");
    if (method == Method::ss_bm3d && !recon.sigma_fixed)
      throw ConfigurationError("ss-bm3d requires sigma_fixed");
    if (method == Method::ss_bm3d || method == Method::ss_damp) {
      if (!(recon.lambda > 0.0)) throw ConfigurationError(to_string(method) + " requires lambda > 0");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigurationError("noise_sigma must be nonnegative");
  }
};

enum class Anatomy { brains, knees };

/// Hyperparameters reported for the brain and knee experiments.
inline void apply_reported_preset(ExperimentSpec& spec, Anatomy anatomy) {
  auto& r = spec.recon;
  spec.arch.cascades = 7;
  r.learning_rate = 1e-3;
  r.ss_epochs = anatomy == Anatomy::brains ? 4000 : 3000;
  switch (spec.method) {
    case Method::ss_bm3d:
      r.lambda = anatomy == Anatomy::brains ? 0.125 : 0.5;
      r.mu = anatomy == Anatomy::brains ? 0.25 : 1.0;
      r.eta = anatomy == Anatomy::brains ? 0.001 : 1.0;
      r.cs_iters = 1;
      r.cs_interval = 30;
      r.denoiser_launch_epoch = 0;
      r.sigma_fixed = 0.012;
      r.denoiser = DenoiserKind{};
      break;
    case Method::ss_damp:
      r.lambda = anatomy == Anatomy::brains ? 3.0 : 1.5;
      r.mu = anatomy == Anatomy::brains ? 1.0 : 0.5;
      r.eta = 0.001;
      r.cs_iters = 25;
      r.cs_interval = 1000;
      r.denoiser_launch_epoch = 1100;
      r.denoiser = DampDenoiser{};
      break;
    default:
      break;
  }
}

namespace detail {

// Like ptree::get_optional, but a present key that fails to convert is an error, not "absent".
template <class V>
std::optional<V> lookup(const boost::property_tree::ptree& pt, const char* key) {
  const auto child = pt.get_child_optional(key);
  if (!child) return std::nullopt;
  return child->get_value<V>();
}

}  // namespace detail

/// INI sections [data], [mask], [train], [red], [cs]; keys absent from the file keep their values.
inline void apply_config(ExperimentSpec& spec, const boost::property_tree::ptree& pt) {
  auto get = [&](const char* key, auto& target) {
    using V = std::decay_t<decltype(target)>;
    if (auto v = detail::lookup<V>(pt, key)) target = *v;
  };
  try {
    if (auto p = detail::lookup<std::string>(pt, "data.preset")) {
      if (auto m = detail::lookup<std::string>(pt, "data.method")) spec.method = parse_method(*m);
      apply_reported_preset(spec, *p == "knees" ? Anatomy::knees : Anatomy::brains);
    }
    if (auto m = detail::lookup<std::string>(pt, "data.method")) spec.method = parse_method(*m);
    if (auto v = detail::lookup<std::size_t>(pt, "data.phantom")) spec.phantom_size = *v;
    if (auto v = detail::lookup<std::string>(pt, "data.kspace")) spec.kspace_path = *v;
    if (auto v = detail::lookup<std::string>(pt, "data.reference")) spec.reference_path = *v;
    get("data.noise_sigma", spec.noise_sigma);
    if (auto v = detail::lookup<std::string>(pt, "data.output")) spec.output_dir = *v;

    if (auto v = detail::lookup<std::string>(pt, "mask.path")) spec.mask_path = *v;
    get("mask.reduction", spec.mask.reduction);
    get("mask.acs_size", spec.mask.acs_size);
    get("mask.density_decay", spec.mask.density_decay);
    get("mask.seed", spec.mask.seed);

    auto& r = spec.recon;
    get("train.cnn_cascades", spec.arch.cascades);
    get("train.conv_layers", spec.arch.conv_layers);
    get("train.channels", spec.arch.channels);
    get("train.kernel", spec.arch.kernel);
    get("train.ss_epochs", r.ss_epochs);
    get("train.lr", r.learning_rate);
    get("train.seed", r.seed);
    get("train.split_fraction", r.split_fraction);
    get("train.acs_size", r.acs_size);
    get("train.dc_on_subset", r.dc_on_subset);
    get("train.eval_every", r.eval_every);
    if (auto v = detail::lookup<std::string>(pt, "train.split_mode"))
      r.split_mode = *v == "line" ? SplitMode::line : SplitMode::point;

    get("red.lambda", r.lambda);
    get("red.mu", r.mu);
    get("red.eta", r.eta);
    get("red.cs_iters", r.cs_iters);
    get("red.cs_interval", r.cs_interval);
    get("red.launch_epoch", r.denoiser_launch_epoch);
    get("red.concurrent", r.concurrent);
    get("red.damp_sigma_floor", r.damp_sigma_floor);
    if (auto v = detail::lookup<double>(pt, "red.sigma_fixed")) r.sigma_fixed = *v;

    get("cs.damp_iters", spec.damp_iters);
    get("cs.ista_iters", spec.ista_iters);
    get("cs.ista_sigma_start", spec.ista_sigma_start);
    get("cs.ista_sigma_end", spec.ista_sigma_end);
    if (auto v = detail::lookup<std::string>(pt, "cs.denoiser")) spec.cs_denoiser.variant = parse_denoiser(*v);
    get("cs.block_size", spec.cs_denoiser.block_size);
    get("cs.search_window", spec.cs_denoiser.search_window);
    get("cs.max_matched", spec.cs_denoiser.max_matched);
    get("cs.threshold_multiplier", spec.cs_denoiser.threshold_multiplier);
  } catch (const boost::property_tree::ptree_error& e) {
    throw ConfigurationError(std::string("config: ") + e.what());
  }
}

inline void load_config(ExperimentSpec& spec, const std::string& path) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini(path, pt);
  } catch (const boost::property_tree::ptree_error& e) {
    throw ConfigurationError(std::string("config: ") + e.what());
  }
  apply_config(spec, pt);
}

/// Metrics as JSON. Keys are sorted; "wall_seconds" is the only timing field.
inline nlohmann::json to_json(const MetricReport& m, bool has_reference) {
  nlohmann::json j;
  j["method"] = m.method;
  j["reduction"] = m.reduction;
  j["seed"] = m.seed;
  j["wall_seconds"] = m.wall_seconds;
  if (has_reference) {
    j["psnr_infinite"] = m.psnr_infinite;
    j["psnr_db"] = m.psnr_infinite ? nlohmann::json(nullptr) : nlohmann::json(m.psnr_db);
    j["ssim"] = m.ssim;
  } else {
    j["psnr_infinite"] = false;
    j["psnr_db"] = nullptr;
    j["ssim"] = nullptr;
  }
  return j;
}

struct ExperimentResult {
  MetricReport report;
  ComplexImage image;
  std::optional<ComplexImage> reference;
  SamplingMask mask;
  std::vector<EpochRecord> history;
};

namespace detail {

inline std::vector<EpochRecord> trace_history(const DampTrace& trace) {
  std::vector<EpochRecord> h;
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    EpochRecord r;
    r.epoch = int(i);
    r.l_kdc = std::pow(trace.records[i].residual_norm, 2);
    r.sigma_hat = trace.records[i].sigma_hat;
    r.psnr = trace.records[i].psnr;
    h.push_back(r);
  }
  return h;
}

inline void add_complex_noise(KSpaceGrid& k, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma / std::numbers::sqrt2);
  for (auto& v : k.values()) v += cplx(n(rng), n(rng));
}

}  // namespace detail

/// Run one reconstruction and write recon.bin, recon.png, error.png (with a reference),
/// history.csv and metrics.json into spec.output_dir.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, std::ostream* log = nullptr) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();

  KSpaceGrid full;
  std::optional<ComplexImage> reference;
  if (spec.phantom_size) {
    reference = shepp_logan(*spec.phantom_size, *spec.phantom_size);
    full = fft2c(*reference);
    if (spec.noise_sigma > 0.0) detail::add_complex_noise(full, spec.noise_sigma, mix_seed(spec.mask.seed, 0x40153ull));
  } else {
    full = load_kspace(*spec.kspace_path);
    if (spec.reference_path) reference = load_image(*spec.reference_path);
  }
  if (reference) require_same_shape(*reference, full, "reference image");

  SamplingMask mask;
  if (spec.mask_path) {
    mask = load_mask(*spec.mask_path);
    require_same_shape(mask, full, "mask");
    const AcsRegion acs{spec.mask.acs_size, spec.mask.acs_size};
    if (mask.covers(acs)) mask.set_acs(acs);
  } else {
    MaskSpec ms = spec.mask;
    ms.height = full.height();
    ms.width = full.width();
    mask = generate_cartesian_mask(ms);
  }
  const KSpaceGrid y = restrict_to(full, mask);
  const double reduction = double(mask.size()) / double(std::max<std::size_t>(mask.count(), 1));

  QualityFn quality;
  if (reference) quality = [&](const ComplexImage& x) { return psnr(*reference, x); };

  ExperimentResult res;
  switch (spec.method) {
    case Method::zf:
      res.image = adjoint_masked(y, mask);
      break;
    case Method::ista: {
      // Sigma values are on the scale of a unit-peak zero-filled image.
      const double peak = adjoint_masked(y, mask).max_abs();
      auto sched = geometric_schedule(spec.ista_sigma_start * peak, spec.ista_sigma_end * peak, spec.ista_iters);
      auto rec = ista_reconstruct(y, mask, make_denoiser(spec.cs_denoiser), sched, spec.ista_iters, quality);
      res.image = std::move(rec.image);
      res.history = detail::trace_history(rec.trace);
      break;
    }
    case Method::damp: {
      DampOptions opt;
      opt.iters = spec.damp_iters;
      opt.seed = spec.recon.seed;
      auto rec = damp_reconstruct(y, mask, spec.cs_denoiser, opt, quality);
      res.image = std::move(rec.image);
      res.history = detail::trace_history(rec.trace);
      break;
    }
    case Method::ss: {
      auto tr = train_ss(y, mask, spec.arch, spec.recon, reference ? &*reference : nullptr);
      res.image = std::move(tr.image);
      res.history = std::move(tr.history);
      break;
    }
    case Method::ss_bm3d:
    case Method::ss_damp: {
      ReconConfig cfg = spec.recon;
      if (spec.method == Method::ss_damp)
        cfg.denoiser = DampDenoiser{spec.cs_denoiser};
      else
        cfg.denoiser = spec.cs_denoiser;
      auto tr = train_ss_red(y, mask, spec.arch, cfg, reference ? &*reference : nullptr, log);
      res.image = std::move(tr.image);
      res.history = std::move(tr.history);
      break;
    }
  }

  res.report.method = to_string(spec.method);
  res.report.reduction = reduction;
  res.report.seed = spec.recon.seed;
  if (reference) {
    res.report.psnr_db = psnr(*reference, res.image);
    res.report.psnr_infinite = std::isinf(res.report.psnr_db);
    res.report.ssim = ssim(*reference, res.image);
  }
  res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  namespace fs = std::filesystem;
  const fs::path dir(spec.output_dir);
  fs::create_directories(dir);
  save_complex((dir / "recon.bin").string(), res.image);
  {
    std::ofstream os(dir / "history.csv");
    write_history_csv(os, res.history);
  }
  {
    std::ofstream os(dir / "metrics.json");
    os << to_json(res.report, reference.has_value()).dump(2) << '\n';
  }
  if (spec.write_png) {
    const double peak = reference ? reference->max_abs() : res.image.max_abs();
    write_png((dir / "recon.png").string(), res.image, peak);
    if (reference) write_png((dir / "error.png").string(), *reference - res.image, 0.2 * peak);
  }
  res.reference = std::move(reference);
  res.mask = std::move(mask);
  return res;
}

/// Average metrics files into one row per method with PSNR/SSIM columns per reduction factor
/// and mean seconds per image.
inline std::string aggregate_report(const std::vector<nlohmann::json>& metrics) {
  struct Acc {
    double psnr = 0, ssim = 0;
    int n_psnr = 0, n_ssim = 0;
  };
  std::map<std::string, std::map<long, Acc>> table;
  std::map<std::string, std::pair<double, int>> seconds;
  std::set<long> reductions;
  std::vector<std::string> order;
  for (const auto& j : metrics) {
    const std::string method = j.at("method").get<std::string>();
    if (!table.count(method)) order.push_back(method);
    const long r = std::lround(j.at("reduction").get<double>());
    reductions.insert(r);
    auto& a = table[method][r];
    if (j.contains("psnr_db") && j["psnr_db"].is_number()) {
      a.psnr += j["psnr_db"].get<double>();
      ++a.n_psnr;
    }
    if (j.contains("ssim") && j["ssim"].is_number()) {
      a.ssim += j["ssim"].get<double>();
      ++a.n_ssim;
    }
    auto& s = seconds[method];
    s.first += j.value("wall_seconds", 0.0);
    ++s.second;
  }
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os << "method";
  for (long r : reductions) os << ",R" << r << "_psnr,R" << r << "_ssim";
  os << ",s_per_img\n";
  for (const auto& method : order) {
    os << method;
    for (long r : reductions) {
      const auto it = table[method].find(r);
      os << ',';
      if (it != table[method].end() && it->second.n_psnr) os << std::setprecision(2) << it->second.psnr / it->second.n_psnr;
      os << ',';
      if (it != table[method].end() && it->second.n_ssim) os << std::setprecision(3) << it->second.ssim / it->second.n_ssim;
    }
    os << ',' << std::setprecision(1) << seconds[method].first / seconds[method].second << '\n';
  }
  return os.str();
}

}  // namespace csmri
