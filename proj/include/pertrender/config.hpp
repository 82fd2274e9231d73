#pragma once

#include "pertrender/optim.hpp"
#include "pertrender/renderer.hpp"
#include "pertrender/scene.hpp"
#include "pertrender/smoothing.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pertrender {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // scene
  std::string mesh = "cube";  // "cube" or an OBJ path
  double cube_side = 1.0;
  bool fan_triangulate = false;
  Vec3 rotation{0.5, -0.6, 0.2};  // pose used by render and bench
  Vec3 translation = Vec3::Zero();

  double fov_deg = 60.0;
  Camera camera;  // fov is taken from fov_deg
  DirectionalLight light;
  RenderSettings render;
  SmoothingParams smoothing;

  bool adaptive = true;
  SmoothingController controller;

  AdamHyper adam;
  int iterations = 200;

  int trials = 100;
  std::vector<double> perturbation_deg{20.0};
  double threshold_deg = 10.0;
  std::vector<double> threshold_sweep{1, 2, 5, 10, 15, 20, 30, 45};
  std::optional<Vec3> true_rotation;

  /// (sigma, gamma) pairs rendered by the render command.
  std::vector<std::array<double, 2>> render_sweep{{0.0, 0.0}, {0.01, 0.005}, {0.03, 0.01}, {0.1, 0.03}, {0.3, 0.1}};

  std::vector<int> bench_samples{1, 2, 8, 32, 64};
  int bench_warmup = 1;
  int bench_repeats = 5;

  std::uint64_t seed = 0;
  std::string output = "out";
  int threads = 0;  // 0: OpenMP default

  /// Throws ConfigError on any violated numeric constraint.
  void validate() const;

  Camera resolved_camera() const;
  /// Builtin cube or the OBJ at `mesh`; load errors name the path.
  Mesh load_mesh() const;
  Pose pose() const { return Pose{rotation, translation}; }
  PoseTaskConfig pose_task(double perturbation) const;
};

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

/// Applies `key.path=value` overrides. The value is read as JSON when it
/// parses, otherwise as a string. Unknown keys are rejected.
ExperimentConfig apply_overrides(const ExperimentConfig& config, const std::vector<std::string>& assignments);

}  // namespace pertrender
