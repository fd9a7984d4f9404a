// Command-line front end. Exit codes: 0 success, 1 runtime/module error, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "csmri/experiment.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace csmri;

void apply_thread_cap() {
  const char* env = std::getenv("CSMRI_THREADS");
  if (!env) return;
  const int n = std::atoi(env);
  if (n < 1) throw ConfigurationError("CSMRI_THREADS must be a positive integer");
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
  Eigen::setNbThreads(n);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what(), 0);
  }
}

struct ReconFlags {
  std::string config;
  std::string method;
  std::optional<std::size_t> phantom;
  std::string kspace, reference, mask, out;
  std::optional<double> reduction, decay, noise;
  std::optional<std::size_t> acs;
  std::optional<std::uint64_t> mask_seed, seed;
  std::optional<int> epochs, cascades, layers, channels, cs_iters, cs_interval, launch, damp_iters, ista_iters,
      eval_every;
  std::optional<double> lambda, mu, eta, lr, sigma_fixed;
  std::string denoiser, preset, split_mode;
  bool concurrent = false, no_png = false;
};

ExperimentSpec build_spec(const ReconFlags& f) {
  ExperimentSpec s;
  if (!f.config.empty()) load_config(s, f.config);
  if (!f.method.empty()) s.method = parse_method(f.method);
  if (!f.preset.empty()) apply_reported_preset(s, f.preset == "knees" ? Anatomy::knees : Anatomy::brains);
  if (f.phantom) {
    s.phantom_size = *f.phantom;
    s.kspace_path.reset();
  }
  if (!f.kspace.empty()) {
    s.kspace_path = f.kspace;
    s.phantom_size.reset();
  }
  if (!f.reference.empty()) s.reference_path = f.reference;
  if (!f.mask.empty()) s.mask_path = f.mask;
  if (!f.out.empty()) s.output_dir = f.out;
  auto set = [](auto& target, const auto& opt) {
    if (opt) target = *opt;
  };
  set(s.noise_sigma, f.noise);
  set(s.mask.reduction, f.reduction);
  set(s.mask.density_decay, f.decay);
  set(s.mask.acs_size, f.acs);
  set(s.recon.acs_size, f.acs);
  set(s.mask.seed, f.mask_seed);
  set(s.recon.seed, f.seed);
  set(s.recon.ss_epochs, f.epochs);
  set(s.arch.cascades, f.cascades);
  set(s.arch.conv_layers, f.layers);
  set(s.arch.channels, f.channels);
  set(s.recon.cs_iters, f.cs_iters);
  set(s.recon.cs_interval, f.cs_interval);
  set(s.recon.denoiser_launch_epoch, f.launch);
  set(s.recon.eval_every, f.eval_every);
  set(s.damp_iters, f.damp_iters);
  set(s.ista_iters, f.ista_iters);
  set(s.recon.lambda, f.lambda);
  set(s.recon.mu, f.mu);
  set(s.recon.eta, f.eta);
  set(s.recon.learning_rate, f.lr);
  if (f.sigma_fixed) s.recon.sigma_fixed = *f.sigma_fixed;
  if (!f.denoiser.empty()) s.cs_denoiser.variant = parse_denoiser(f.denoiser);
  if (!f.split_mode.empty()) s.recon.split_mode = f.split_mode == "line" ? SplitMode::line : SplitMode::point;
  if (f.concurrent) s.recon.concurrent = true;
  if (f.no_png) s.write_png = false;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressed-sensing and self-supervised MRI reconstruction"};
  app.require_subcommand(1);

  // mask gen
  auto* mask_cmd = app.add_subcommand("mask", "Sampling mask utilities");
  mask_cmd->require_subcommand(1);
  auto* gen = mask_cmd->add_subcommand("gen", "Generate a variable-density Cartesian mask");
  MaskSpec ms;
  std::string mask_out, mask_png;
  gen->add_option("--height", ms.height)->default_val(256);
  gen->add_option("--width", ms.width)->default_val(256);
  gen->add_option("-R,--reduction", ms.reduction)->default_val(4.0);
  gen->add_option("--acs", ms.acs_size)->default_val(20);
  gen->add_option("--decay", ms.density_decay)->default_val(1.0);
  gen->add_option("--seed", ms.seed)->default_val(0);
  gen->add_option("-o,--output", mask_out)->required();
  gen->add_option("--png", mask_png, "Also write a PNG view");

  // phantom
  auto* ph = app.add_subcommand("phantom", "Write a Shepp-Logan phantom and its k-space");
  std::size_t ph_h = 128, ph_w = 0;
  std::string ph_img, ph_k, ph_png;
  double ph_noise = 0.0;
  std::uint64_t ph_seed = 0;
  ph->add_option("--size", ph_h, "Height (and width unless --width)")->default_val(128);
  ph->add_option("--width", ph_w);
  ph->add_option("-o,--output", ph_img, "Image (CSIM) output")->required();
  ph->add_option("--kspace", ph_k, "Fully sampled k-space (CSKS) output");
  ph->add_option("--noise", ph_noise, "Complex Gaussian k-space noise sigma")->check(CLI::NonNegativeNumber);
  ph->add_option("--seed", ph_seed);
  ph->add_option("--png", ph_png);

  // recon
  auto* rc = app.add_subcommand("recon", "Run one reconstruction experiment");
  ReconFlags f;
  std::vector<std::string> method_choices;
  for (const auto& [name, _] : method_names()) method_choices.push_back(name);
  rc->add_option("-c,--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
  rc->add_option("-m,--method", f.method)->check(CLI::IsMember(method_choices));
  rc->add_option("--preset", f.preset, "Reported hyperparameters")->check(CLI::IsMember({"brains", "knees"}));
  rc->add_option("--phantom", f.phantom, "Shepp-Logan phantom of this size as input");
  rc->add_option("--kspace", f.kspace, "Fully sampled k-space (CSKS)");
  rc->add_option("--reference", f.reference, "Reference image (CSIM)");
  rc->add_option("--mask", f.mask, "Mask file (CSMK); otherwise one is generated");
  rc->add_option("-o,--out", f.out, "Output directory");
  rc->add_option("--noise", f.noise);
  rc->add_option("-R,--reduction", f.reduction);
  rc->add_option("--decay", f.decay);
  rc->add_option("--acs", f.acs, "ACS side for both the mask and the training split");
  rc->add_option("--mask-seed", f.mask_seed);
  rc->add_option("--seed", f.seed);
  rc->add_option("--epochs,--ss_epochs", f.epochs);
  rc->add_option("--cascades,--cnn_cascades", f.cascades);
  rc->add_option("--layers", f.layers);
  rc->add_option("--channels", f.channels);
  rc->add_option("--cs-iters,--cs_iters", f.cs_iters);
  rc->add_option("--cs-interval,--cs_interval", f.cs_interval);
  rc->add_option("--launch", f.launch, "Epoch of the first denoiser launch");
  rc->add_option("--eval-every", f.eval_every);
  rc->add_option("--damp-iters", f.damp_iters);
  rc->add_option("--ista-iters", f.ista_iters);
  rc->add_option("--lambda", f.lambda);
  rc->add_option("--mu", f.mu);
  rc->add_option("--eta", f.eta);
  rc->add_option("--lr", f.lr);
  rc->add_option("--sigma-fixed,--sigma_fixed", f.sigma_fixed);
  rc->add_option("--denoiser", f.denoiser)->check(CLI::IsMember({"bm3d", "dct"}));
  rc->add_option("--split", f.split_mode)->check(CLI::IsMember({"point", "line"}));
  rc->add_flag("--concurrent", f.concurrent, "Run the denoiser job on a worker thread");
  rc->add_flag("--no-png", f.no_png);
  bool verbose = false;
  rc->add_flag("-v,--verbose", verbose);

  // metrics
  auto* mt = app.add_subcommand("metrics", "PSNR/SSIM of a reconstruction against a reference");
  std::string mt_ref, mt_test, mt_out;
  mt->add_option("--reference", mt_ref)->required()->check(CLI::ExistingFile);
  mt->add_option("--test", mt_test)->required()->check(CLI::ExistingFile);
  mt->add_option("-o,--output", mt_out);

  // report
  auto* rp = app.add_subcommand("report", "Aggregate metrics JSON files into a CSV table");
  std::vector<std::string> rp_inputs;
  std::string rp_out;
  rp->add_option("inputs", rp_inputs, "metrics.json files or directories searched recursively")->required();
  rp->add_option("-o,--output", rp_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    apply_thread_cap();
    if (*gen) {
      const auto mask = generate_cartesian_mask(ms);
      save_mask(mask_out, mask);
      if (!mask_png.empty()) write_mask_png(mask_png, mask);
      std::cout << "lines=" << mask.count() / ms.height << " sampled=" << mask.count()
                << " reduction=" << double(mask.size()) / double(mask.count()) << '\n';
    } else if (*ph) {
      const auto img = shepp_logan(ph_h, ph_w ? ph_w : ph_h);
      save_complex(ph_img, img);
      if (!ph_k.empty()) {
        auto k = fft2c(img);
        if (ph_noise > 0.0) detail::add_complex_noise(k, ph_noise, ph_seed);
        save_complex(ph_k, k);
      }
      if (!ph_png.empty()) write_png(ph_png, img, 1.0);
    } else if (*rc) {
      const auto spec = build_spec(f);
      const auto res = run_experiment(spec, verbose ? &std::cerr : nullptr);
      std::cout << to_json(res.report, res.reference.has_value()).dump() << '\n';
    } else if (*mt) {
      const auto ref = load_image(mt_ref);
      const auto test = load_image(mt_test);
      MetricReport m;
      m.method = std::filesystem::path(mt_test).stem().string();
      m.psnr_db = psnr(ref, test);
      m.psnr_infinite = std::isinf(m.psnr_db);
      m.ssim = ssim(ref, test);
      auto j = to_json(m, true);
      j.erase("reduction");
      j.erase("seed");
      j.erase("wall_seconds");
      if (!mt_out.empty()) std::ofstream(mt_out) << j.dump(2) << '\n';
      std::cout << j.dump() << '\n';
    } else if (*rp) {
      std::vector<std::string> files;
      for (const auto& in : rp_inputs) {
        if (std::filesystem::is_directory(in)) {
          for (const auto& e : std::filesystem::recursive_directory_iterator(in))
            if (e.is_regular_file() && e.path().filename() == "metrics.json") files.push_back(e.path().string());
        } else {
          files.push_back(in);
        }
      }
      std::sort(files.begin(), files.end());
      std::vector<nlohmann::json> metrics;
      for (const auto& p : files) metrics.push_back(read_json(p));
      const auto csv = aggregate_report(metrics);
      if (rp_out.empty())
        std::cout << csv;
      else
        std::ofstream(rp_out) << csv;
    }
  } catch (const csmri::ConfigurationError& e) {
    std::cerr << "error[" << e.kind() << "]: " << e.what() << '\n';
    return 2;
  } catch (const csmri::Error& e) {
    std::cerr << "error[" << e.kind() << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
