#pragma once

#include "pertrender/image.hpp"
#include "pertrender/scene.hpp"
#include "pertrender/smoothing.hpp"

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace pertrender {

enum class EvalMode {
  /// Closed forms where the prior admits one (cdf for rasterization, softmax
  /// for Gumbel aggregation), Monte-Carlo elsewhere.
  Closed,
  MonteCarlo,
};

enum class Estimator { VarianceReduced, Plain };

struct RenderSettings {
  Rgb background{0.5, 0.5, 0.5};
  EvalMode mode = EvalMode::MonteCarlo;
  Estimator estimator = Estimator::VarianceReduced;
  /// Pixel/face pairs with |d| > cull_sigmas * sigma use the closed-form
  /// occupancy instead of sampling; aggregation slots that cannot win except
  /// with probability < 1e-9 are not perturbed.
  bool cull = true;
  double cull_sigmas = 6.0;
  /// Compatibility: closed-form occupancy of sign(d) d^2 / sigma^2.
  bool squared_distance = false;
  double occupancy_floor = kOccupancyFloor;
  /// Upper bound on samples * faces * height * width in Monte-Carlo mode.
  std::uint64_t sample_budget = 1ull << 32;

  friend bool operator==(const RenderSettings&, const RenderSettings&) = default;
};

class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct HardRender {
  Image rgb;
  Image silhouette;
};

/// Z-buffer renderer: each pixel takes the color of the occupied visible face
/// with the largest inverse depth, else the background.
HardRender render_hard(const ProjectedScene& scene, std::span<const Rgb> colors, const Camera& camera,
                       const Rgb& background);

struct SoftRender {
  Image rgb;
  Image silhouette;
  /// Per pixel, per face occupancy, size h*w*m.
  std::vector<double> occupancy;
  /// Per pixel aggregation weights, size h*w*(m+1); the last slot is the background.
  std::vector<double> weights;
  /// Unperturbed argmax per pixel and, for Monte-Carlo aggregation, the
  /// argmax of every sample (h*w*M). Noise itself is regenerated from `seed`.
  std::vector<std::uint16_t> base_winner;
  std::vector<std::uint16_t> sample_winners;

  SmoothingParams params;
  RenderSettings settings;
  std::uint64_t seed = 0;
  std::size_t num_faces = 0;
  std::uint64_t scene_fingerprint = 0;

  int height() const { return rgb.height; }
  int width() const { return rgb.width; }
  double weight(int pixel, std::size_t slot) const { return weights[static_cast<std::size_t>(pixel) * (num_faces + 1) + slot]; }
  double occ(int pixel, std::size_t face) const { return occupancy[static_cast<std::size_t>(pixel) * num_faces + face]; }
  /// Bytes held by the buffers above.
  std::size_t working_set_bytes() const;
};

SoftRender render_soft(const ProjectedScene& scene, std::span<const Rgb> colors, const Camera& camera,
                       const SmoothingParams& params, std::uint64_t seed, const RenderSettings& settings);

/// Gradient with respect to the projected scene.
struct SceneGrad {
  std::vector<std::array<Vec2, 3>> d_face_ndc;
  std::vector<double> d_inverse_depth;
  double d_sigma = 0.0;
  double d_gamma = 0.0;
};

/// Adjoints of the rendered rgb image (h x w x 3) and optionally of the
/// silhouette (h x w x 1).
SceneGrad backward_scene(const SoftRender& render, const ProjectedScene& scene, std::span<const Rgb> colors,
                         const Camera& camera, const Image& d_rgb, const Image* d_silhouette = nullptr);

struct GradReport {
  Vec3 d_rotation = Vec3::Zero();
  Vec3 d_translation = Vec3::Zero();
  /// Object-space vertex gradients.
  std::vector<Vec3> d_vertices;
  double d_sigma = 0.0;
  double d_gamma = 0.0;

  bool all_finite() const;
};

/// Chains a SceneGrad through projection to the pose and mesh vertices.
GradReport backprop_to_pose(const SceneGrad& grad, const ProjectedScene& scene, const Mesh& mesh,
                            const Camera& camera, const Pose& pose);

GradReport backward(const SoftRender& render, const ProjectedScene& scene, const Mesh& mesh, std::span<const Rgb> colors,
                    const Camera& camera, const Pose& pose, const Image& d_rgb, const Image* d_silhouette = nullptr);

}  // namespace pertrender
