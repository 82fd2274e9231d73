#pragma once

#include "pertrender/noise.hpp"
#include "pertrender/renderer.hpp"
#include "pertrender/scene.hpp"
#include "pertrender/smoothing.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pertrender {

struct AdamHyper {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamHyper&, const AdamHyper&) = default;
};

struct AdamState {
  AdamHyper hyper;
  long step = 0;
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamState(std::size_t dim, AdamHyper h = {}) : hyper(h), m(dim, 0.0), v(dim, 0.0) {}
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bias-corrected Adam update of `params` in place.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad);

enum class DecaySchedule { Multiplicative, Additive };

/// Decreases (sigma, gamma) whenever the running average of dL/dgamma is positive.
struct SmoothingController {
  double v_gamma = 0.0;
  double beta = 0.9;
  double decay = 0.95;  // multiplicative rate
  double floor = 1e-4;
  DecaySchedule schedule = DecaySchedule::Multiplicative;
  double additive_step = 1e-3;

  void validate() const;
};

/// Returns true when the smoothing was decreased.
bool smoothing_update(SmoothingController& ctrl, double d_loss_d_gamma, SmoothingParams& params);

/// Composes the true rotation with a rotation of exactly `magnitude_deg`
/// about a uniformly distributed axis.
Pose random_pose_perturbation(const Pose& truth, double magnitude_deg, CounterRng& rng);
/// Uniformly distributed rotation (axis-angle).
Vec3 random_rotation(CounterRng& rng);

/// Geodesic distance between the two rotations, in degrees.
double angular_error(const Pose& a, const Pose& b);

struct PoseTaskConfig {
  Mesh mesh = make_cube();
  Camera camera;
  DirectionalLight light;
  RenderSettings render;
  SmoothingParams smoothing;
  bool adaptive = true;
  SmoothingController controller;
  AdamHyper adam;
  int iterations = 200;
  int trials = 100;
  double perturbation_deg = 20.0;
  double threshold_deg = 10.0;
  std::uint64_t seed = 0;
  /// Fixed true rotation; random per trial when empty.
  std::optional<Vec3> true_rotation;
  Vec3 translation = Vec3::Zero();
};

struct TrialResult {
  std::uint64_t seed = 0;
  double initial_error_deg = 0.0;
  double final_error_deg = 180.0;
  int iterations = 0;
  bool solved = false;
  bool failed = false;
  std::string failure;
  Vec3 true_rotation = Vec3::Zero();
  Vec3 final_rotation = Vec3::Zero();
  std::vector<double> loss;
  std::vector<double> sigma;
  std::vector<double> gamma;
};

struct TaskResult {
  double threshold_deg = 10.0;
  double perturbation_deg = 0.0;
  std::vector<TrialResult> trials;
  double mean_final_error = 0.0;
  double std_final_error = 0.0;
  double solved_fraction = 0.0;

  /// Fraction of trials with final error below `threshold_deg`, recounted.
  double solved_fraction_at(double threshold_deg) const;
};

TrialResult run_pose_trial(const PoseTaskConfig& config, int trial);
/// Runs every trial (in parallel when OpenMP threads are available);
/// deterministic given `config.seed`.
TaskResult run_pose_task(const PoseTaskConfig& config);

}  // namespace pertrender
