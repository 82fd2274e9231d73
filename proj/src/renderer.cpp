#include "pertrender/renderer.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pertrender {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Faces that take part in rendering: visible and with nonzero projected area.
struct FaceTable {
  std::vector<unsigned char> active;
  std::vector<Triangle2> tris;
  std::vector<double> z;  // m + 1 entries, last is the background
};

FaceTable make_face_table(const ProjectedScene& scene) {
  FaceTable t;
  const std::size_t m = scene.num_faces();
  t.active.resize(m);
  t.tris.resize(m);
  t.z.resize(m + 1);
  for (std::size_t j = 0; j < m; ++j) {
    const ProjectedFace& f = scene.faces[j];
    t.active[j] = f.visible && !f.degenerate;
    t.tris[j] = f.ndc;
    t.z[j] = f.inverse_depth;
  }
  t.z[m] = scene.background_inverse_depth;
  return t;
}

void check_colors(const ProjectedScene& scene, std::span<const Rgb> colors) {
  if (colors.size() != scene.num_faces()) {
    throw std::invalid_argument("renderer: " + std::to_string(colors.size()) + " colors for " +
                                std::to_string(scene.num_faces()) + " faces");
  }
  if (scene.num_faces() + 1 > std::numeric_limits<std::uint16_t>::max()) {
    throw std::invalid_argument("renderer: too many faces");
  }
}

struct Stages {
  bool raster_closed;   // every pixel/face pair uses the cdf
  bool agg_closed;      // softmax
  bool agg_hard;        // gamma == 0
  bool cull_raster;
  double raster_cull;   // |d| threshold
  double agg_cull_gap;  // score gap beyond which a slot is not perturbed
};

Stages make_stages(const SmoothingParams& p, const RenderSettings& s) {
  Stages st{};
  st.raster_closed = s.mode == EvalMode::Closed || p.sigma == 0.0;
  st.agg_hard = p.gamma == 0.0;
  st.agg_closed = !st.agg_hard && s.mode == EvalMode::Closed && p.agg_prior == NoisePrior::Gumbel;
  st.cull_raster = s.cull;
  st.raster_cull = s.cull_sigmas * p.sigma;
  st.agg_cull_gap = s.cull ? 2.0 * p.gamma * tail_quantile(p.agg_prior) : std::numeric_limits<double>::infinity();
  return st;
}

struct ClosedRaster {
  double value;
  double d_dist;   // d value / d distance
  double d_sigma;  // d value / d sigma
};

ClosedRaster closed_raster(double d, double sigma, NoisePrior prior, bool squared) {
  if (squared) {
    const double x = std::copysign(d * d, d) / (sigma * sigma);
    const double dens = pdf(prior, x);
    return {cdf(prior, x), dens * 2.0 * std::abs(d) / (sigma * sigma), -2.0 * dens * x / sigma};
  }
  const double x = d / sigma;
  const double dens = pdf(prior, x);
  return {cdf(prior, x), dens / sigma, -dens * x / sigma};
}

inline NoiseStream raster_stream(std::uint64_t seed, std::uint32_t pixel, std::uint32_t face) {
  return NoiseStream{seed, 0, pixel, face, Stage::Raster};
}
inline NoiseStream agg_stream(std::uint64_t seed, std::uint32_t pixel, std::uint32_t slot) {
  return NoiseStream{seed, 0, pixel, slot, Stage::Aggregate};
}

// Aggregation slots that receive noise at one pixel.
void perturbed_slots(const std::vector<double>& scores, std::size_t leader, double gap, std::vector<std::uint32_t>& out) {
  out.clear();
  const double top = scores[leader];
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (std::isinf(scores[j])) continue;
    if (j == leader || top - scores[j] <= gap) out.push_back(static_cast<std::uint32_t>(j));
  }
}

void pixel_scores(const FaceTable& table, const double* occ, double alpha, double floor, std::vector<double>& scores) {
  const std::size_t m = table.active.size();
  for (std::size_t j = 0; j < m; ++j) {
    scores[j] = table.active[j] ? table.z[j] + std::log(std::max(occ[j], floor)) / alpha : kNegInf;
  }
  scores[m] = table.z[m];
}

}  // namespace

std::size_t SoftRender::working_set_bytes() const {
  return rgb.size() * sizeof(double) + silhouette.size() * sizeof(double) + occupancy.size() * sizeof(double) +
         weights.size() * sizeof(double) + base_winner.size() * sizeof(std::uint16_t) +
         sample_winners.size() * sizeof(std::uint16_t);
}

HardRender render_hard(const ProjectedScene& scene, std::span<const Rgb> colors, const Camera& camera,
                       const Rgb& background) {
  camera.validate();
  check_colors(scene, colors);
  const FaceTable table = make_face_table(scene);
  const std::size_t m = scene.num_faces();
  HardRender out{Image(camera.height, camera.width, 3), Image(camera.height, camera.width, 1)};
#pragma omp parallel for schedule(static)
  for (int row = 0; row < camera.height; ++row) {
    for (int col = 0; col < camera.width; ++col) {
      const Vec2 p = camera.pixel_center(row, col);
      std::size_t winner = m;
      double best = kNegInf;
      for (std::size_t j = 0; j < m; ++j) {
        if (!table.active[j]) continue;
        if (hard_heaviside(signed_distance(p, table.tris[j])) == 0.0) continue;
        if (table.z[j] > best) {
          best = table.z[j];
          winner = j;
        }
      }
      const Rgb& c = winner == m ? background : colors[winner];
      for (int ch = 0; ch < 3; ++ch) out.rgb.at(row, col, ch) = c[ch];
      out.silhouette.at(row, col) = winner == m ? 0.0 : 1.0;
    }
  }
  return out;
}

SoftRender render_soft(const ProjectedScene& scene, std::span<const Rgb> colors, const Camera& camera,
                       const SmoothingParams& params, std::uint64_t seed, const RenderSettings& settings) {
  camera.validate();
  params.validate();
  check_colors(scene, colors);
  const std::size_t m = scene.num_faces();
  const int h = camera.height;
  const int w = camera.width;
  const int samples = params.samples;
  if (settings.mode == EvalMode::MonteCarlo) {
    const double load = static_cast<double>(samples) * static_cast<double>(m) * h * w;
    if (load > static_cast<double>(settings.sample_budget)) {
      throw BudgetError("render_soft: samples*faces*pixels = " + std::to_string(static_cast<std::uint64_t>(load)) +
                        " exceeds the sample budget of " + std::to_string(settings.sample_budget));
    }
  }
  const FaceTable table = make_face_table(scene);
  const Stages st = make_stages(params, settings);
  const bool agg_mc = !st.agg_hard && !st.agg_closed;

  SoftRender out;
  out.rgb = Image(h, w, 3);
  out.silhouette = Image(h, w, 1);
  out.occupancy.assign(static_cast<std::size_t>(h) * w * m, 0.0);
  out.weights.assign(static_cast<std::size_t>(h) * w * (m + 1), 0.0);
  out.base_winner.assign(static_cast<std::size_t>(h) * w, 0);
  if (agg_mc) out.sample_winners.assign(static_cast<std::size_t>(h) * w * samples, 0);
  out.params = params;
  out.settings = settings;
  out.seed = seed;
  out.num_faces = m;
  out.scene_fingerprint = scene.fingerprint();

#pragma omp parallel
  {
    std::vector<double> scores(m + 1);
    std::vector<std::uint32_t> slots;
    std::vector<int> counts(m + 1);
#pragma omp for schedule(static)
    for (int row = 0; row < h; ++row) {
      for (int col = 0; col < w; ++col) {
        const int pixel = row * w + col;
        const auto upixel = static_cast<std::uint32_t>(pixel);
        const Vec2 p = camera.pixel_center(row, col);
        double* occ = out.occupancy.data() + static_cast<std::size_t>(pixel) * m;
        double* wts = out.weights.data() + static_cast<std::size_t>(pixel) * (m + 1);

        // Rasterization.
        for (std::size_t j = 0; j < m; ++j) {
          if (!table.active[j]) continue;
          const double d = signed_distance(p, table.tris[j]);
          if (params.sigma == 0.0) {
            occ[j] = hard_heaviside(d);
          } else if (st.raster_closed || (st.cull_raster && std::abs(d) > st.raster_cull)) {
            occ[j] = closed_raster(d, params.sigma, params.raster_prior,
                                   settings.squared_distance && settings.mode == EvalMode::Closed)
                         .value;
          } else {
            const NoiseStream base = raster_stream(seed, upixel, static_cast<std::uint32_t>(j));
            int hits = 0;
            for (int k = 0; k < samples; ++k) {
              hits += d + params.sigma * sample(params.raster_prior, base.with_sample(static_cast<std::uint32_t>(k))) > 0.0;
            }
            occ[j] = static_cast<double>(hits) / samples;
          }
        }

        // Aggregation.
        pixel_scores(table, occ, params.alpha, settings.occupancy_floor, scores);
        const std::size_t leader = hard_argmax_index(scores);
        out.base_winner[static_cast<std::size_t>(pixel)] = static_cast<std::uint16_t>(leader);
        if (st.agg_hard) {
          wts[leader] = 1.0;
        } else if (st.agg_closed) {
          const Eigen::VectorXd sm = softmax(scores, params.gamma);
          for (std::size_t j = 0; j <= m; ++j) wts[j] = sm[static_cast<Eigen::Index>(j)];
        } else {
          std::uint16_t* winners = out.sample_winners.data() + static_cast<std::size_t>(pixel) * samples;
          perturbed_slots(scores, leader, st.agg_cull_gap, slots);
          std::fill(counts.begin(), counts.end(), 0);
          if (slots.size() == 1) {
            std::fill(winners, winners + samples, static_cast<std::uint16_t>(leader));
            counts[leader] = samples;
          } else {
            for (int k = 0; k < samples; ++k) {
              double best = kNegInf;
              std::uint32_t arg = slots.front();
              for (std::uint32_t j : slots) {
                const double v = scores[j] + params.gamma * sample(params.agg_prior, agg_stream(seed, upixel, j).with_sample(static_cast<std::uint32_t>(k)));
                if (v > best) {
                  best = v;
                  arg = j;
                }
              }
              winners[k] = static_cast<std::uint16_t>(arg);
              ++counts[arg];
            }
          }
          for (std::size_t j = 0; j <= m; ++j) wts[j] = static_cast<double>(counts[j]) / samples;
        }

        Rgb color = Rgb::Zero();
        for (std::size_t j = 0; j < m; ++j) color += wts[j] * colors[j];
        color += wts[m] * settings.background;
        for (int ch = 0; ch < 3; ++ch) out.rgb.at(row, col, ch) = std::clamp(color[ch], 0.0, 1.0);
        out.silhouette.at(row, col) = 1.0 - wts[m];
      }
    }
  }
  return out;
}

SceneGrad backward_scene(const SoftRender& render, const ProjectedScene& scene, std::span<const Rgb> colors,
                         const Camera& camera, const Image& d_rgb, const Image* d_silhouette) {
  check_colors(scene, colors);
  if (render.num_faces != scene.num_faces() || render.scene_fingerprint != scene.fingerprint()) {
    throw MismatchError("backward: the projected scene differs from the one used in the forward pass");
  }
  if (render.height() != camera.height || render.width() != camera.width) {
    throw MismatchError("backward: camera resolution differs from the forward pass");
  }
  if (d_rgb.height != camera.height || d_rgb.width != camera.width || d_rgb.channels != 3) {
    throw std::invalid_argument("backward: rgb adjoint must be height x width x 3");
  }
  if (d_silhouette && (d_silhouette->height != camera.height || d_silhouette->width != camera.width ||
                       d_silhouette->channels != 1)) {
    throw std::invalid_argument("backward: silhouette adjoint must be height x width x 1");
  }

  const SmoothingParams& params = render.params;
  const RenderSettings& settings = render.settings;
  const std::size_t m = scene.num_faces();
  const int h = camera.height;
  const int w = camera.width;
  const int samples = params.samples;
  const FaceTable table = make_face_table(scene);
  const Stages st = make_stages(params, settings);
  const bool agg_mc = !st.agg_hard && !st.agg_closed;
  const bool raster_mc = !st.raster_closed;
  const bool vr = settings.estimator == Estimator::VarianceReduced;
  if (agg_mc && !supports_score_estimator(params.agg_prior)) {
    throw UnsupportedPrior("backward: Monte-Carlo aggregation gradients need grad nu, unavailable for the " +
                           std::string(to_string(params.agg_prior)) + " prior");
  }
  if (raster_mc && !supports_score_estimator(params.raster_prior)) {
    throw UnsupportedPrior("backward: Monte-Carlo rasterization gradients need grad nu, unavailable for the " +
                           std::string(to_string(params.raster_prior)) + " prior");
  }
  const bool squared = settings.squared_distance && settings.mode == EvalMode::Closed;

  // Per-row accumulators keep the reduction order independent of thread count.
  constexpr std::size_t kStride = 7;  // 3 x (dx, dy) + dz
  std::vector<double> row_faces(static_cast<std::size_t>(h) * m * kStride, 0.0);
  std::vector<double> row_sigma(static_cast<std::size_t>(h), 0.0);
  std::vector<double> row_gamma(static_cast<std::size_t>(h), 0.0);
  const std::uint64_t seed = render.seed;

#pragma omp parallel
  {
    std::vector<double> scores(m + 1);
    std::vector<double> gw(m + 1);
    std::vector<double> ds(m + 1);
    std::vector<std::uint32_t> slots;
    std::vector<double> z(m + 1);
#pragma omp for schedule(static)
    for (int row = 0; row < h; ++row) {
      double* acc = row_faces.data() + static_cast<std::size_t>(row) * m * kStride;
      double acc_sigma = 0.0;
      double acc_gamma = 0.0;
      for (int col = 0; col < w; ++col) {
        const int pixel = row * w + col;
        const auto upixel = static_cast<std::uint32_t>(pixel);
        const double* occ = render.occupancy.data() + static_cast<std::size_t>(pixel) * m;
        const double* wts = render.weights.data() + static_cast<std::size_t>(pixel) * (m + 1);

        // dL/dw
        bool any = false;
        const Vec3 g(d_rgb.at(row, col, 0), d_rgb.at(row, col, 1), d_rgb.at(row, col, 2));
        for (std::size_t j = 0; j < m; ++j) gw[j] = g.dot(colors[j]);
        gw[m] = g.dot(settings.background) - (d_silhouette ? d_silhouette->at(row, col) : 0.0);
        for (std::size_t j = 0; j <= m; ++j) any = any || gw[j] != 0.0;
        if (!any || st.agg_hard) continue;

        // Aggregation stage: dL/ds and dL/dgamma.
        pixel_scores(table, occ, params.alpha, settings.occupancy_floor, scores);
        std::fill(ds.begin(), ds.end(), 0.0);
        if (st.agg_closed) {
          double mean = 0.0;
          for (std::size_t j = 0; j <= m; ++j) mean += wts[j] * gw[j];
          for (std::size_t j = 0; j <= m; ++j) {
            ds[j] = wts[j] * (gw[j] - mean) / params.gamma;
            if (!std::isinf(scores[j])) acc_gamma -= scores[j] * ds[j] / params.gamma;
          }
        } else {
          const std::size_t leader = render.base_winner[static_cast<std::size_t>(pixel)];
          perturbed_slots(scores, leader, st.agg_cull_gap, slots);
          if (slots.size() > 1) {
            const std::uint16_t* winners = render.sample_winners.data() + static_cast<std::size_t>(pixel) * samples;
            const double n = static_cast<double>(slots.size());
            const double scale = 1.0 / (params.gamma * samples);
            for (int k = 0; k < samples; ++k) {
              const double diff = vr ? gw[winners[k]] - gw[leader] : gw[winners[k]];
              if (diff == 0.0) continue;
              double dot = 0.0;
              for (std::uint32_t j : slots) {
                const double zj = sample(params.agg_prior, agg_stream(seed, upixel, j).with_sample(static_cast<std::uint32_t>(k)));
                const double sc = nu_grad(params.agg_prior, zj);
                ds[j] += diff * sc * scale;
                dot += sc * zj;
              }
              acc_gamma += diff * (dot - n) * scale;
            }
          }
        }

        // Rasterization stage: through ln(I)/alpha into d, and directly into z.
        for (std::size_t j = 0; j < m; ++j) {
          if (!table.active[j] || ds[j] == 0.0) continue;
          acc[j * kStride + 6] += ds[j];
          if (params.sigma == 0.0 || !(occ[j] > settings.occupancy_floor)) continue;
          const double d_occ = ds[j] / (params.alpha * occ[j]);
          const Vec2 p = camera.pixel_center(row, col);
          const SignedDistanceGrad sd = signed_distance_grad(p, table.tris[j]);
          double occ_d = 0.0;
          double occ_sigma = 0.0;
          if (st.raster_closed || (st.cull_raster && std::abs(sd.value) > st.raster_cull)) {
            const ClosedRaster cr = closed_raster(sd.value, params.sigma, params.raster_prior, squared);
            occ_d = cr.d_dist;
            occ_sigma = cr.d_sigma;
          } else {
            const NoiseStream base = raster_stream(seed, upixel, static_cast<std::uint32_t>(j));
            const double h0 = vr ? hard_heaviside(sd.value) : 0.0;
            for (int k = 0; k < samples; ++k) {
              const double x = sample(params.raster_prior, base.with_sample(static_cast<std::uint32_t>(k)));
              const double diff = hard_heaviside(sd.value + params.sigma * x) - h0;
              if (diff == 0.0) continue;
              const double sc = nu_grad(params.raster_prior, x);
              occ_d += diff * sc;
              occ_sigma += diff * (sc * x - 1.0);
            }
            occ_d /= params.sigma * samples;
            occ_sigma /= params.sigma * samples;
          }
          acc_sigma += d_occ * occ_sigma;
          const double g_dist = d_occ * occ_d;
          for (int k = 0; k < 3; ++k) {
            acc[j * kStride + 2 * k] += g_dist * sd.d_vertices[k].x();
            acc[j * kStride + 2 * k + 1] += g_dist * sd.d_vertices[k].y();
          }
        }
      }
      row_sigma[static_cast<std::size_t>(row)] = acc_sigma;
      row_gamma[static_cast<std::size_t>(row)] = acc_gamma;
    }
  }

  SceneGrad grad;
  grad.d_face_ndc.assign(m, {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()});
  grad.d_inverse_depth.assign(m, 0.0);
  for (int row = 0; row < h; ++row) {
    const double* acc = row_faces.data() + static_cast<std::size_t>(row) * m * kStride;
    for (std::size_t j = 0; j < m; ++j) {
      for (int k = 0; k < 3; ++k) {
        grad.d_face_ndc[j][k] += Vec2(acc[j * kStride + 2 * k], acc[j * kStride + 2 * k + 1]);
      }
      grad.d_inverse_depth[j] += acc[j * kStride + 6];
    }
    grad.d_sigma += row_sigma[static_cast<std::size_t>(row)];
    grad.d_gamma += row_gamma[static_cast<std::size_t>(row)];
  }
  return grad;
}

bool GradReport::all_finite() const {
  if (!d_rotation.allFinite() || !d_translation.allFinite()) return false;
  if (!std::isfinite(d_sigma) || !std::isfinite(d_gamma)) return false;
  return std::all_of(d_vertices.begin(), d_vertices.end(), [](const Vec3& v) { return v.allFinite(); });
}

GradReport backprop_to_pose(const SceneGrad& grad, const ProjectedScene& scene, const Mesh& mesh,
                            const Camera& camera, const Pose& pose) {
  const std::size_t nv = mesh.num_vertices();
  // Per-vertex adjoint of (ndc_x, ndc_y, depth).
  std::vector<Vec3> g_vertex(nv, Vec3::Zero());
  for (std::size_t j = 0; j < scene.num_faces(); ++j) {
    const ProjectedFace& f = scene.faces[j];
    if (!f.visible) continue;
    const double dz = grad.d_inverse_depth[j];
    // z = 3 / (D0 + D1 + D2)
    const double d_depth = -dz * f.inverse_depth * f.inverse_depth / 3.0;
    for (int k = 0; k < 3; ++k) {
      g_vertex[static_cast<std::size_t>(scene.face_indices[j][k])] +=
          Vec3(grad.d_face_ndc[j][k].x(), grad.d_face_ndc[j][k].y(), d_depth);
    }
  }
  const Mat3 basis = camera.basis();
  const Mat3 rot = rotation_matrix(pose.rotation);
  const auto d_rot = rotation_derivatives(pose.rotation);
  GradReport report;
  report.d_sigma = grad.d_sigma;
  report.d_gamma = grad.d_gamma;
  report.d_vertices.assign(nv, Vec3::Zero());
  for (std::size_t v = 0; v < nv; ++v) {
    if (g_vertex[v].isZero(0.0)) continue;
    const Vec3 d_cam = ndc_depth_jacobian(scene.camera_vertices[v], camera).transpose() * g_vertex[v];
    const Vec3 d_world = basis.transpose() * d_cam;
    report.d_vertices[v] = rot.transpose() * d_world;
    report.d_translation += d_world;
    for (int i = 0; i < 3; ++i) report.d_rotation[i] += d_world.dot(d_rot[i] * mesh.vertices[v]);
  }
  return report;
}

GradReport backward(const SoftRender& render, const ProjectedScene& scene, const Mesh& mesh, std::span<const Rgb> colors,
                    const Camera& camera, const Pose& pose, const Image& d_rgb, const Image* d_silhouette) {
  const SceneGrad grad = backward_scene(render, scene, colors, camera, d_rgb, d_silhouette);
  return backprop_to_pose(grad, scene, mesh, camera, pose);
}

}  // namespace pertrender
