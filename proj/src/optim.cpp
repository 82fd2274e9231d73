#include "pertrender/optim.hpp"

#include "pertrender/losses.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pertrender {

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: dimension mismatch");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw NonFiniteGradient("adam_step: non-finite gradient");
  }
  const AdamHyper& hp = state.hyper;
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grad[i];
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

void SmoothingController::validate() const {
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("adaptive: beta must be in [0,1)");
  if (!(decay > 0.0 && decay < 1.0)) throw std::invalid_argument("adaptive: decay must be in (0,1)");
  if (!(floor >= 0.0)) throw std::invalid_argument("adaptive: floor must be >= 0");
  if (!(additive_step >= 0.0)) throw std::invalid_argument("adaptive: additive_step must be >= 0");
}

bool smoothing_update(SmoothingController& ctrl, double d_loss_d_gamma, SmoothingParams& params) {
  ctrl.v_gamma = ctrl.beta * ctrl.v_gamma + (1.0 - ctrl.beta) * d_loss_d_gamma;
  if (!(ctrl.v_gamma > 0.0)) return false;
  auto lower = [&ctrl](double value) {
    const double next = ctrl.schedule == DecaySchedule::Multiplicative ? ctrl.decay * value
                                                                       : value - ctrl.additive_step;
    return std::min(value, std::max(next, ctrl.floor));
  };
  params.sigma = lower(params.sigma);
  params.gamma = lower(params.gamma);
  return true;
}

Vec3 random_rotation(CounterRng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return rotation_log(q.toRotationMatrix());
}

Pose random_pose_perturbation(const Pose& truth, double magnitude_deg, CounterRng& rng) {
  const double z = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Vec3 axis(r * std::cos(phi), r * std::sin(phi), z);
  const double angle = magnitude_deg * std::numbers::pi / 180.0;
  Pose out = truth;
  out.rotation = rotation_log(rotation_matrix(Vec3(angle * axis)) * rotation_matrix(truth.rotation));
  return out;
}

double angular_error(const Pose& a, const Pose& b) {
  const Mat3 rel = rotation_matrix(a.rotation).transpose() * rotation_matrix(b.rotation);
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

double TaskResult::solved_fraction_at(double threshold) const {
  if (trials.empty()) return 0.0;
  const auto solved = std::count_if(trials.begin(), trials.end(), [threshold](const TrialResult& t) {
    return !t.failed && t.final_error_deg < threshold;
  });
  return static_cast<double>(solved) / static_cast<double>(trials.size());
}

TrialResult run_pose_trial(const PoseTaskConfig& config, int trial) {
  TrialResult result;
  result.seed = mix_seed(config.seed, static_cast<std::uint64_t>(trial));
  CounterRng rng(result.seed);

  Pose truth;
  truth.translation = config.translation;
  truth.rotation = config.true_rotation ? *config.true_rotation : random_rotation(rng);
  result.true_rotation = truth.rotation;
  Pose pose = random_pose_perturbation(truth, config.perturbation_deg, rng);
  result.initial_error_deg = angular_error(pose, truth);

  try {
    const ProjectedScene target_scene = project(config.mesh, config.camera, truth);
    const std::vector<Rgb> target_colors = shade(config.mesh, config.light, rotation_matrix(truth.rotation));
    const Image target = render_hard(target_scene, target_colors, config.camera, config.render.background).rgb;

    SmoothingParams params = config.smoothing;
    SmoothingController ctrl = config.controller;
    AdamState adam(3, config.adam);
    std::array<double, 3> theta{pose.rotation.x(), pose.rotation.y(), pose.rotation.z()};
    result.loss.reserve(static_cast<std::size_t>(config.iterations));
    for (int it = 0; it < config.iterations; ++it) {
      pose.rotation = Vec3(theta[0], theta[1], theta[2]);
      const ProjectedScene scene = project(config.mesh, config.camera, pose);
      const std::vector<Rgb> colors = shade(config.mesh, config.light, rotation_matrix(pose.rotation));
      const std::uint64_t render_seed = mix_seed(result.seed, static_cast<std::uint64_t>(it) + 1);
      const SoftRender render = render_soft(scene, colors, config.camera, params, render_seed, config.render);
      const ImageLoss loss = rgb_l2(target, render.rgb);
      const GradReport grad =
          backward(render, scene, config.mesh, colors, config.camera, pose, loss.adjoint);
      result.loss.push_back(loss.value);
      result.sigma.push_back(params.sigma);
      result.gamma.push_back(params.gamma);
      const std::array<double, 3> g{grad.d_rotation.x(), grad.d_rotation.y(), grad.d_rotation.z()};
      adam_step(adam, theta, g);
      if (config.adaptive) smoothing_update(ctrl, grad.d_gamma, params);
      result.iterations = it + 1;
    }
    pose.rotation = Vec3(theta[0], theta[1], theta[2]);
  } catch (const std::exception& e) {
    result.failed = true;
    result.failure = e.what();
  }
  result.final_rotation = pose.rotation;
  result.final_error_deg = angular_error(pose, truth);
  result.solved = !result.failed && result.final_error_deg < config.threshold_deg;
  return result;
}

TaskResult run_pose_task(const PoseTaskConfig& config) {
  config.camera.validate();
  config.smoothing.validate();
  config.controller.validate();
  if (config.trials < 0 || config.iterations < 0) throw std::invalid_argument("pose task: negative budget");
  TaskResult out;
  out.threshold_deg = config.threshold_deg;
  out.perturbation_deg = config.perturbation_deg;
  out.trials.resize(static_cast<std::size_t>(config.trials));
#pragma omp parallel for schedule(dynamic, 1)
  for (int t = 0; t < config.trials; ++t) out.trials[static_cast<std::size_t>(t)] = run_pose_trial(config, t);

  if (!out.trials.empty()) {
    double sum = 0.0;
    for (const auto& t : out.trials) sum += t.final_error_deg;
    out.mean_final_error = sum / static_cast<double>(out.trials.size());
    double sq = 0.0;
    for (const auto& t : out.trials) sq += (t.final_error_deg - out.mean_final_error) * (t.final_error_deg - out.mean_final_error);
    out.std_final_error = std::sqrt(sq / static_cast<double>(out.trials.size()));
  }
  out.solved_fraction = out.solved_fraction_at(config.threshold_deg);
  return out;
}

}  // namespace pertrender
