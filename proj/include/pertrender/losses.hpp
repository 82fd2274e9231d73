#pragma once

#include "pertrender/image.hpp"
#include "pertrender/scene.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace pertrender {

struct ImageLoss {
  double value = 0.0;
  Image adjoint;  // d value / d rendered
};

struct VertexLoss {
  double value = 0.0;
  std::vector<Vec3> adjoint;
};

/// 0.5 * ||rendered - target||^2.
ImageLoss rgb_l2(const Image& target, const Image& rendered);
/// ||rendered - target||_1; the adjoint is sign(rendered - target), 0 on ties.
ImageLoss rgb_l1(const Image& target, const Image& rendered);
/// 1 - sum(I * R) / sum(I + R - I * R). Two empty silhouettes give 0.
ImageLoss neg_iou(const Image& target, const Image& rendered);
/// sum_v |v - mean of neighbors(v)|^2 over `positions`, using the mesh adjacency.
VertexLoss laplacian_loss(const Mesh& mesh, const std::vector<Vec3>& positions);

struct LossWeights {
  double sil = 1.0;
  double rgb = 1.0;
  double lap = 3e-3;

  void validate() const;
};

struct LossParts {
  std::optional<ImageLoss> sil;
  std::optional<ImageLoss> rgb;
  std::optional<VertexLoss> lap;
};

struct CompositeLoss {
  double value = 0.0;
  std::optional<Image> d_silhouette;
  std::optional<Image> d_rgb;
  std::optional<std::vector<Vec3>> d_vertices;
};

/// Weighted sum; every part with a nonzero weight must be present.
CompositeLoss composite_loss(const LossWeights& weights, const LossParts& parts);

}  // namespace pertrender
