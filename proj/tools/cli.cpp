#include "cli.hpp"

#include "pertrender/config.hpp"
#include "pertrender/image.hpp"
#include "pertrender/losses.hpp"
#include "pertrender/noise.hpp"
#include "pertrender/optim.hpp"
#include "pertrender/renderer.hpp"
#include "pertrender/smoothing.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

namespace pertrender::cli {

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config_path.empty() ? ExperimentConfig{} : load_config(g.config_path);
  cfg = apply_overrides(cfg, g.overrides);
  if (g.seed) cfg.seed = *g.seed;
  if (g.out) cfg.output = *g.out;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  return out;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// ---------------------------------------------------------------- render

int cmd_render(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output;
  fs::create_directories(dir);
  const Mesh mesh = cfg.load_mesh();
  const Camera cam = cfg.resolved_camera();
  const Pose pose = cfg.pose();
  const ProjectedScene scene = project(mesh, cam, pose);
  const std::vector<Rgb> colors = shade(mesh, cfg.light, rotation_matrix(pose.rotation));

  const HardRender hard = render_hard(scene, colors, cam, cfg.render.background);
  write_png(hard.rgb, dir / "hard.png");
  write_npy(hard.rgb, dir / "hard.npy");
  write_npy(hard.silhouette, dir / "hard_silhouette.npy");

  auto csv = open_out(dir / "render_sweep.csv");
  csv << "sigma,gamma,edge_pixels,file\n";
  for (const auto& [sigma, gamma] : cfg.render_sweep) {
    SmoothingParams params = cfg.smoothing;
    params.sigma = sigma;
    params.gamma = gamma;
    const SoftRender soft = render_soft(scene, colors, cam, params, cfg.seed, cfg.render);
    const std::string stem = "soft_s" + fmt("%.4f", sigma) + "_g" + fmt("%.4f", gamma);
    write_png(soft.rgb, dir / (stem + ".png"));
    write_npy(soft.rgb, dir / (stem + ".npy"));
    write_npy(soft.silhouette, dir / (stem + "_silhouette.npy"));
    int edge = 0;
    for (double s : soft.silhouette.data) edge += (s > 0.01 && s < 0.99) ? 1 : 0;
    csv << sigma << ',' << gamma << ',' << edge << ',' << stem << ".png\n";
    std::cout << "render sigma=" << sigma << " gamma=" << gamma << " edge_pixels=" << edge << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- pose-opt

int cmd_pose_opt(const ExperimentConfig& cfg, bool threshold_sweep, bool trajectories) {
  const fs::path dir = cfg.output;
  fs::create_directories(dir);
  const nlohmann::json echo = nlohmann::json::parse(serialize_config(cfg));
  for (double perturbation : cfg.perturbation_deg) {
    const std::string tag = fmt("%g", perturbation) + "deg";
    const auto start = std::chrono::steady_clock::now();
    const TaskResult result = run_pose_task(cfg.pose_task(perturbation));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    auto csv = open_out(dir / ("pose_" + tag + ".csv"));
    csv << "seed,init_err_deg,final_err_deg,iterations,solved,failed\n";
    int failed = 0;
    for (const TrialResult& t : result.trials) {
      csv << t.seed << ',' << t.initial_error_deg << ',' << t.final_error_deg << ',' << t.iterations << ','
          << (t.solved ? 1 : 0) << ',' << (t.failed ? 1 : 0) << '\n';
      failed += t.failed ? 1 : 0;
    }

    nlohmann::json summary = {{"perturbation_deg", perturbation},
                              {"trials", result.trials.size()},
                              {"threshold_deg", cfg.threshold_deg},
                              {"mean_final_err_deg", result.mean_final_error},
                              {"std_final_err_deg", result.std_final_error},
                              {"solved_pct", 100.0 * result.solved_fraction},
                              {"failed", failed},
                              {"config", echo}};
    open_out(dir / ("pose_" + tag + ".json")) << summary.dump(2) << '\n';

    if (threshold_sweep) {
      auto table = open_out(dir / ("thresholds_" + tag + ".csv"));
      table << "threshold_deg,solved_fraction\n";
      for (double th : cfg.threshold_sweep) table << th << ',' << result.solved_fraction_at(th) << '\n';
    }
    if (trajectories) {
      auto traj = open_out(dir / ("trajectories_" + tag + ".csv"));
      traj << "trial,iteration,loss,sigma,gamma\n";
      for (std::size_t k = 0; k < result.trials.size(); ++k) {
        const TrialResult& t = result.trials[k];
        for (std::size_t i = 0; i < t.loss.size(); ++i) {
          traj << k << ',' << i << ',' << t.loss[i] << ',' << t.sigma[i] << ',' << t.gamma[i] << '\n';
        }
      }
    }
    std::cout << "pose-opt " << tag << ": solved " << 100.0 * result.solved_fraction << "% mean "
              << result.mean_final_error << " deg (" << seconds << " s)\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct Check {
  std::string name;
  double value;
  double tolerance;
  bool pass;
};

// |estimate - reference| measured in standard errors.
double z_score(double estimate, double reference, double se) {
  const double diff = std::abs(estimate - reference);
  if (se == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / se;
}

HardSolver heaviside_solver() {
  return [](const Eigen::VectorXd& v) { return Eigen::VectorXd::Constant(1, hard_heaviside(v[0])); };
}

void estimator_checks(const ExperimentConfig& cfg, double sign, std::vector<Check>& out) {
  const NoiseStream base{cfg.seed, 0, 0, 0, Stage::Generic};
  auto stream = [&base](std::uint32_t id) {
    NoiseStream s = base;
    s.pixel = id;
    return s;
  };
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  constexpr int kGrid = 21;
  constexpr int kMc = 20000;

  for (NoisePrior prior : {NoisePrior::Gaussian, NoisePrior::Logistic, NoisePrior::Cauchy, NoisePrior::Uniform}) {
    int ok = 0;
    for (int k = 0; k < kGrid; ++k) {
      const double x = -2.0 + 4.0 * k / (kGrid - 1);
      const double p = smooth_heaviside(x, 1.0, prior, ClosedForm{});
      const MonteCarlo mc{kMc, stream(static_cast<std::uint32_t>(k))};
      const double est = smooth_heaviside(x, 1.0, prior, mc);
      ok += z_score(est, p, std::sqrt(p * (1.0 - p) / kMc)) <= 3.0 ? 1 : 0;
    }
    const double frac = static_cast<double>(ok) / kGrid;
    out.push_back({"heaviside_mc_closed_" + std::string(to_string(prior)), frac, 0.95, frac >= 0.95});
  }

  constexpr int kJac = 100000;
  const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  auto jac_check = [&](const std::string& name, const PerturbedEstimate& e, double reference) {
    const double z = z_score(sign * e.jacobian(0, 0), reference, std::sqrt(e.variance(0, 0) / e.samples));
    out.push_back({name, z, 4.0, z <= 4.0});
  };
  jac_check("jacobian_vr_gaussian_se",
            jacobian_vr(heaviside_solver(), zero, 1.0, NoisePrior::Gaussian, kJac, stream(100)), phi0);
  jac_check("jacobian_plain_gaussian_se",
            jacobian_plain(heaviside_solver(), zero, 1.0, NoisePrior::Gaussian, kJac, stream(101)), phi0);
  jac_check("jacobian_vr_cauchy_se",
            jacobian_vr(heaviside_solver(), zero, 1.0, NoisePrior::Cauchy, kJac, stream(102)),
            1.0 / std::numbers::pi);

  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  const SensitivityEstimate s =
      sensitivity_vr(heaviside_solver(), one, 1.0, NoisePrior::Gaussian, kJac, stream(103));
  const double dsigma = -phi0 * std::exp(-0.5);
  const double zs = z_score(sign * s.derivative[0], dsigma, std::sqrt(s.variance[0] / s.samples));
  out.push_back({"sensitivity_gaussian_se", zs, 4.0, zs <= 4.0});

  // Paired-seed variance of the single-sample terms, VR over plain.
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 1.0);
  double previous = std::numeric_limits<double>::infinity();
  bool monotone = true;
  for (double eps : {1.0, 0.3, 0.1}) {
    const NoiseStream paired = stream(200);
    const auto vr = jacobian_vr(heaviside_solver(), x0, eps, NoisePrior::Gaussian, kMc, paired);
    const auto plain = jacobian_plain(heaviside_solver(), x0, eps, NoisePrior::Gaussian, kMc, paired);
    const double ratio = vr.variance(0, 0) / plain.variance(0, 0);
    out.push_back({"vr_variance_ratio_sigma_" + fmt("%g", eps), ratio, 1.0, ratio < 1.0});
    monotone = monotone && ratio < previous;
    previous = ratio;
  }
  out.push_back({"vr_variance_ratio_decreasing", monotone ? 1.0 : 0.0, 1.0, monotone});
}

void renderer_checks(const ExperimentConfig& cfg, double sign, std::vector<Check>& out) {
  const Mesh mesh = cfg.load_mesh();
  const Camera cam = cfg.resolved_camera();
  RenderSettings settings = cfg.render;
  settings.mode = EvalMode::Closed;
  SmoothingParams params = cfg.smoothing;
  params.raster_prior = NoisePrior::Logistic;
  params.agg_prior = NoisePrior::Gumbel;

  const Pose truth = cfg.pose();
  Pose pose = truth;
  pose.rotation += Vec3(0.1, 0.05, -0.08);
  const std::vector<Rgb> colors = shade(mesh, cfg.light, Mat3::Identity());
  const Image target = render_hard(project(mesh, cam, truth), colors, cam, settings.background).rgb;

  auto loss_at = [&](const Pose& p, const SmoothingParams& sp) {
    const SoftRender r = render_soft(project(mesh, cam, p), colors, cam, sp, cfg.seed, settings);
    return rgb_l2(target, r.rgb).value;
  };
  const ProjectedScene scene = project(mesh, cam, pose);
  const SoftRender render = render_soft(scene, colors, cam, params, cfg.seed, settings);
  const GradReport g = backward(render, scene, mesh, colors, cam, pose, rgb_l2(target, render.rgb).adjoint);

  std::array<double, 6> analytic{};
  std::array<double, 6> numeric{};
  constexpr double h = 1e-5;
  for (int i = 0; i < 6; ++i) {
    Pose a = pose;
    Pose b = pose;
    Vec3& ta = i < 3 ? a.rotation : a.translation;
    Vec3& tb = i < 3 ? b.rotation : b.translation;
    ta[i % 3] += h;
    tb[i % 3] -= h;
    numeric[i] = (loss_at(a, params) - loss_at(b, params)) / (2.0 * h);
    analytic[i] = sign * (i < 3 ? g.d_rotation[i] : g.d_translation[i - 3]);
  }
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  static constexpr const char* kNames[6] = {"rx", "ry", "rz", "tx", "ty", "tz"};
  for (int i = 0; i < 6; ++i) {
    const double rel = std::abs(analytic[i] - numeric[i]) / std::max({std::abs(numeric[i]), 1e-3 * scale, 1e-12});
    out.push_back({std::string("pose_fd_") + kNames[i], rel, 1e-3, rel <= 1e-3});
  }

  auto smoothing_fd = [&](const char* name, double SmoothingParams::*field, double analytic_value) {
    constexpr double hs = 1e-6;
    SmoothingParams up = params;
    SmoothingParams down = params;
    up.*field += hs;
    down.*field -= hs;
    const double fd = (loss_at(pose, up) - loss_at(pose, down)) / (2.0 * hs);
    const double rel = std::abs(sign * analytic_value - fd) / std::max(std::abs(fd), 1e-12);
    out.push_back({name, rel, 1e-3, rel <= 1e-3});
  };
  smoothing_fd("sigma_fd", &SmoothingParams::sigma, g.d_sigma);
  smoothing_fd("gamma_fd", &SmoothingParams::gamma, g.d_gamma);
}

int cmd_gradcheck(const ExperimentConfig& cfg, const std::string& fault) {
  if (fault != "none" && fault != "sign-flip") throw ConfigError("unknown fault '" + fault + "'");
  const double sign = fault == "sign-flip" ? -1.0 : 1.0;
  std::vector<Check> checks;
  estimator_checks(cfg, sign, checks);
  renderer_checks(cfg, sign, checks);

  const fs::path dir = cfg.output;
  fs::create_directories(dir);
  auto report = open_out(dir / "gradcheck.csv");
  report << "name,value,tolerance,pass\n";
  bool all = true;
  for (const Check& c : checks) {
    report << c.name << ',' << c.value << ',' << c.tolerance << ',' << (c.pass ? "true" : "false") << '\n';
    std::printf("%-36s %12.4g  tol %-8g %s\n", c.name.c_str(), c.value, c.tolerance, c.pass ? "PASS" : "FAIL");
    all = all && c.pass;
  }
  return all ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------- bench

struct Timing {
  double mean = 0.0;
  double std = 0.0;
};

Timing summarize(const std::vector<double>& ms) {
  Timing t;
  for (double v : ms) t.mean += v;
  t.mean /= static_cast<double>(ms.size());
  for (double v : ms) t.std += (v - t.mean) * (v - t.mean);
  t.std = std::sqrt(t.std / static_cast<double>(ms.size()));
  return t;
}

template <typename F>
double time_ms(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

int cmd_bench(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.output;
  fs::create_directories(dir);
  const Mesh mesh = cfg.load_mesh();
  const Camera cam = cfg.resolved_camera();
  const Pose truth = cfg.pose();
  Pose pose = truth;
  pose.rotation += Vec3(0.1, 0.05, -0.08);
  const std::vector<Rgb> colors = shade(mesh, cfg.light, Mat3::Identity());
  const Image target = render_hard(project(mesh, cam, truth), colors, cam, cfg.render.background).rgb;
  const ProjectedScene scene = project(mesh, cam, pose);

  auto csv = open_out(dir / "bench.csv");
  csv << "mode,M,forward_ms,forward_std,backward_ms,backward_std,mem_mb\n";
  std::printf("%-7s %4s %20s %20s %10s\n", "mode", "M", "forward_ms", "backward_ms", "mem_mb");
  auto emit = [&](const std::string& mode, int m, const Timing& f, const Timing& b, double mem_mb) {
    csv << mode << ',' << m << ',' << f.mean << ',' << f.std << ',' << b.mean << ',' << b.std << ',' << mem_mb << '\n';
    std::printf("%-7s %4d %11.3f ± %6.3f %11.3f ± %6.3f %10.3f\n", mode.c_str(), m, f.mean, f.std, b.mean, b.std,
                mem_mb);
  };

  {
    std::vector<double> fwd;
    HardRender hard;
    for (int r = 0; r < cfg.bench_warmup + cfg.bench_repeats; ++r) {
      const double ms = time_ms([&] { hard = render_hard(scene, colors, cam, cfg.render.background); });
      if (r >= cfg.bench_warmup) fwd.push_back(ms);
    }
    const double bytes = static_cast<double>((hard.rgb.size() + hard.silhouette.size()) * sizeof(double));
    emit("hard", 0, summarize(fwd), Timing{}, bytes / 1e6);
  }

  auto run = [&](const std::string& mode, const SmoothingParams& params, const RenderSettings& settings) {
    std::vector<double> fwd;
    std::vector<double> bwd;
    std::size_t bytes = 0;
    for (int r = 0; r < cfg.bench_warmup + cfg.bench_repeats; ++r) {
      SoftRender soft;
      const double f = time_ms([&] { soft = render_soft(scene, colors, cam, params, cfg.seed, settings); });
      const Image adjoint = rgb_l2(target, soft.rgb).adjoint;
      const double b = time_ms([&] { (void)backward(soft, scene, mesh, colors, cam, pose, adjoint); });
      bytes = soft.working_set_bytes();
      if (r >= cfg.bench_warmup) {
        fwd.push_back(f);
        bwd.push_back(b);
      }
    }
    emit(mode, settings.mode == EvalMode::Closed ? 0 : params.samples, summarize(fwd), summarize(bwd),
         static_cast<double>(bytes) / 1e6);
  };

  {
    SmoothingParams params = cfg.smoothing;
    params.raster_prior = NoisePrior::Logistic;
    params.agg_prior = NoisePrior::Gumbel;
    RenderSettings settings = cfg.render;
    settings.mode = EvalMode::Closed;
    run("closed", params, settings);
  }
  for (int m : cfg.bench_samples) {
    SmoothingParams params = cfg.smoothing;
    params.samples = m;
    RenderSettings settings = cfg.render;
    settings.mode = EvalMode::MonteCarlo;
    run("mc", params, settings);
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Perturbed differentiable mesh renderer"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "OpenMP threads (0: default)")->check(CLI::NonNegativeNumber);
  app.add_option("--set", g.overrides, "override a config key, e.g. --set smoothing.sigma=0.1")
      ->take_all()
      ->expected(1, -1);

  auto* render = app.add_subcommand("render", "hard and soft renders over the (sigma, gamma) sweep");
  auto* pose = app.add_subcommand("pose-opt", "pose optimization trials");
  bool threshold_sweep = false;
  bool trajectories = false;
  pose->add_flag("--threshold-sweep", threshold_sweep, "write solved fraction per threshold");
  pose->add_flag("--trajectories", trajectories, "write per-iteration loss, sigma and gamma");
  auto* gradcheck = app.add_subcommand("gradcheck", "estimator and finite-difference checks");
  std::string fault = "none";
  gradcheck->add_option("--inject-fault", fault, "test hook")->check(CLI::IsMember({"none", "sign-flip"}));
  auto* bench = app.add_subcommand("bench", "forward/backward timing and memory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const ExperimentConfig cfg = resolve(g);
    if (*render) return cmd_render(cfg);
    if (*pose) return cmd_pose_opt(cfg, threshold_sweep, trajectories);
    if (*gradcheck) return cmd_gradcheck(cfg, fault);
    if (*bench) return cmd_bench(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ObjParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace pertrender::cli
