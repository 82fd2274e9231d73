#include "pertrender/losses.hpp"

#include <cmath>
#include <string>

namespace pertrender {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* name) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(name) + ": image shapes differ (" + std::to_string(a.height) + "x" +
                                std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                                std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                                std::to_string(b.channels) + ")");
  }
}

}  // namespace

ImageLoss rgb_l2(const Image& target, const Image& rendered) {
  require_same_shape(target, rendered, "rgb_l2");
  ImageLoss out{0.0, Image(rendered.height, rendered.width, rendered.channels)};
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double diff = rendered.data[i] - target.data[i];
    out.value += 0.5 * diff * diff;
    out.adjoint.data[i] = diff;
  }
  return out;
}

ImageLoss rgb_l1(const Image& target, const Image& rendered) {
  require_same_shape(target, rendered, "rgb_l1");
  ImageLoss out{0.0, Image(rendered.height, rendered.width, rendered.channels)};
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double diff = rendered.data[i] - target.data[i];
    out.value += std::abs(diff);
    out.adjoint.data[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  }
  return out;
}

ImageLoss neg_iou(const Image& target, const Image& rendered) {
  require_same_shape(target, rendered, "neg_iou");
  ImageLoss out{0.0, Image(rendered.height, rendered.width, rendered.channels)};
  double inter = 0.0;
  double uni = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double a = target.data[i];
    const double b = rendered.data[i];
    inter += a * b;
    uni += a + b - a * b;
  }
  if (uni == 0.0) return out;
  out.value = 1.0 - inter / uni;
  // d/db [-(inter/uni)] = -(a * uni - inter * (1 - a)) / uni^2
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double a = target.data[i];
    out.adjoint.data[i] = -(a * uni - inter * (1.0 - a)) / (uni * uni);
  }
  return out;
}

VertexLoss laplacian_loss(const Mesh& mesh, const std::vector<Vec3>& positions) {
  if (positions.size() != mesh.num_vertices()) {
    throw std::invalid_argument("laplacian_loss: position count does not match the mesh");
  }
  const std::size_t n = positions.size();
  VertexLoss out{0.0, std::vector<Vec3>(n, Vec3::Zero())};
  for (std::size_t v = 0; v < n; ++v) {
    const auto& nbrs = mesh.adjacency[v];
    if (nbrs.empty()) continue;
    Vec3 centroid = Vec3::Zero();
    for (int u : nbrs) centroid += positions[static_cast<std::size_t>(u)];
    centroid /= static_cast<double>(nbrs.size());
    const Vec3 delta = positions[v] - centroid;
    out.value += delta.squaredNorm();
    out.adjoint[v] += 2.0 * delta;
    const Vec3 share = -2.0 * delta / static_cast<double>(nbrs.size());
    for (int u : nbrs) out.adjoint[static_cast<std::size_t>(u)] += share;
  }
  return out;
}

void LossWeights::validate() const {
  if (!(sil >= 0.0) || !(rgb >= 0.0) || !(lap >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
}

CompositeLoss composite_loss(const LossWeights& weights, const LossParts& parts) {
  weights.validate();
  CompositeLoss out;
  auto scaled = [](const Image& img, double s) {
    Image r = img;
    for (double& v : r.data) v *= s;
    return r;
  };
  if (weights.sil != 0.0) {
    if (!parts.sil) throw std::invalid_argument("composite_loss: silhouette part missing");
    out.value += weights.sil * parts.sil->value;
    out.d_silhouette = scaled(parts.sil->adjoint, weights.sil);
  }
  if (weights.rgb != 0.0) {
    if (!parts.rgb) throw std::invalid_argument("composite_loss: rgb part missing");
    out.value += weights.rgb * parts.rgb->value;
    out.d_rgb = scaled(parts.rgb->adjoint, weights.rgb);
  }
  if (weights.lap != 0.0) {
    if (!parts.lap) throw std::invalid_argument("composite_loss: laplacian part missing");
    out.value += weights.lap * parts.lap->value;
    std::vector<Vec3> adj = parts.lap->adjoint;
    for (Vec3& v : adj) v *= weights.lap;
    out.d_vertices = std::move(adj);
  }
  return out;
}

}  // namespace pertrender
