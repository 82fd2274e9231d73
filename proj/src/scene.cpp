#include "pertrender/scene.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace pertrender {

// ---------------------------------------------------------------------------
// Mesh

Mesh::Mesh(std::vector<Vec3> v, std::vector<Face> f, std::vector<Rgb> colors)
    : vertices(std::move(v)), faces(std::move(f)), face_colors(std::move(colors)) {
  validate();
  rebuild_adjacency();
}

void Mesh::validate() const {
  if (face_colors.size() != faces.size()) {
    throw std::invalid_argument("mesh: face color count does not match face count");
  }
  const int n = static_cast<int>(vertices.size());
  for (std::size_t i = 0; i < faces.size(); ++i) {
    const Face& f = faces[i];
    for (int idx : f) {
      if (idx < 0 || idx >= n) {
        throw std::invalid_argument("mesh: face " + std::to_string(i) + " references vertex " +
                                    std::to_string(idx) + " but there are " + std::to_string(n) + " vertices");
      }
    }
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      throw std::invalid_argument("mesh: face " + std::to_string(i) + " repeats a vertex index");
    }
    const Rgb& c = face_colors[i];
    if ((c.array() < 0.0).any() || (c.array() > 1.0).any()) {
      throw std::invalid_argument("mesh: face " + std::to_string(i) + " color outside [0,1]");
    }
  }
}

void Mesh::rebuild_adjacency() {
  std::vector<std::set<int>> sets(vertices.size());
  for (const Face& f : faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k];
      const int b = f[(k + 1) % 3];
      sets[a].insert(b);
      sets[b].insert(a);
    }
  }
  adjacency.assign(vertices.size(), {});
  for (std::size_t v = 0; v < sets.size(); ++v) adjacency[v].assign(sets[v].begin(), sets[v].end());
}

// ---------------------------------------------------------------------------
// OBJ

ObjParseError::ObjParseError(const std::string& path, int line, const std::string& message)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + message), line_(line) {}

namespace {

int parse_index(const std::string& token, int vertex_count, const std::string& path, int line) {
  const std::string head = token.substr(0, token.find('/'));
  std::size_t used = 0;
  long value = 0;
  try {
    value = std::stol(head, &used);
  } catch (const std::exception&) {
    throw ObjParseError(path, line, "malformed face index '" + token + "'");
  }
  if (used != head.size() || value == 0) throw ObjParseError(path, line, "malformed face index '" + token + "'");
  const long resolved = value > 0 ? value - 1 : vertex_count + value;
  if (resolved < 0 || resolved >= vertex_count) {
    throw ObjParseError(path, line,
                        "face index " + std::to_string(value) + " out of range (" + std::to_string(vertex_count) +
                            " vertices defined)");
  }
  return static_cast<int>(resolved);
}

}  // namespace

Mesh load_obj(const std::filesystem::path& path, const ObjOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh file '" + path.string() + "'");
  const std::string name = path.string();

  std::vector<Vec3> vertices;
  std::vector<Rgb> vertex_colors;
  bool has_vertex_colors = false;
  std::vector<Face> faces;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    std::istringstream ls(raw);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      std::vector<double> values;
      double x;
      while (ls >> x) values.push_back(x);
      if (!ls.eof()) throw ObjParseError(name, line_no, "malformed vertex record");
      if (values.size() != 3 && values.size() != 4 && values.size() != 6) {
        throw ObjParseError(name, line_no, "vertex record needs 3, 4 or 6 numbers");
      }
      vertices.emplace_back(values[0], values[1], values[2]);
      if (values.size() == 6) {
        has_vertex_colors = true;
        vertex_colors.emplace_back(values[3], values[4], values[5]);
      } else {
        vertex_colors.push_back(options.default_color);
      }
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string token;
      while (ls >> token) idx.push_back(parse_index(token, static_cast<int>(vertices.size()), name, line_no));
      if (idx.size() < 3) throw ObjParseError(name, line_no, "face with fewer than 3 vertices");
      if (idx.size() > 3 && !options.fan_triangulate) {
        throw ObjParseError(name, line_no,
                            "face with " + std::to_string(idx.size()) + " vertices (enable fan triangulation)");
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
        Face f{idx[0], idx[k], idx[k + 1]};
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
          throw ObjParseError(name, line_no, "face repeats a vertex index");
        }
        faces.push_back(f);
      }
    }
    // vn, vt, o, g, s, usemtl, mtllib are ignored.
  }

  std::vector<Rgb> colors;
  colors.reserve(faces.size());
  for (const Face& f : faces) {
    if (has_vertex_colors) {
      Rgb c = (vertex_colors[f[0]] + vertex_colors[f[1]] + vertex_colors[f[2]]) / 3.0;
      colors.push_back(c.cwiseMax(0.0).cwiseMin(1.0));
    } else {
      colors.push_back(options.default_color);
    }
  }
  return Mesh(std::move(vertices), std::move(faces), std::move(colors));
}

void write_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write mesh file '" + path.string() + "'");
  out << std::setprecision(17);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const Face& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw std::runtime_error("error while writing '" + path.string() + "'");
}

const std::array<Rgb, 6> kCubeSideColors = {
    Rgb(0.9, 0.1, 0.1),  // -z
    Rgb(0.1, 0.8, 0.1),  // +z
    Rgb(0.1, 0.2, 0.9),  // -x
    Rgb(0.95, 0.9, 0.1), // +x
    Rgb(0.9, 0.1, 0.9),  // -y
    Rgb(0.1, 0.9, 0.9),  // +y
};

Mesh make_cube(double side) {
  const double h = 0.5 * side;
  std::vector<Vec3> v = {{-h, -h, -h}, {h, -h, -h}, {h, h, -h}, {-h, h, -h},
                         {-h, -h, h},  {h, -h, h},  {h, h, h},  {-h, h, h}};
  std::vector<Face> f = {{0, 3, 2}, {0, 2, 1}, {4, 5, 6}, {4, 6, 7}, {0, 4, 7}, {0, 7, 3},
                         {1, 2, 6}, {1, 6, 5}, {0, 1, 5}, {0, 5, 4}, {3, 7, 6}, {3, 6, 2}};
  std::vector<Rgb> colors;
  for (const Rgb& c : kCubeSideColors) {
    colors.push_back(c);
    colors.push_back(c);
  }
  return Mesh(std::move(v), std::move(f), std::move(colors));
}

// ---------------------------------------------------------------------------
// Camera and pose

void Camera::validate() const {
  if (!(near > 0.0) || !(far > near)) throw std::invalid_argument("camera: need 0 < near < far");
  if (height < 1 || width < 1) throw std::invalid_argument("camera: image dimensions must be positive");
  if (!(fov > 0.0) || !(fov < M_PI)) throw std::invalid_argument("camera: fov must be in (0, pi)");
  if ((at - eye).norm() == 0.0) throw std::invalid_argument("camera: eye and at coincide");
  if ((at - eye).cross(up).norm() == 0.0) throw std::invalid_argument("camera: up is parallel to the view direction");
}

Mat3 Camera::basis() const {
  const Vec3 forward = (at - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 true_up = right.cross(forward);
  Mat3 b;
  b.row(0) = right;
  b.row(1) = true_up;
  b.row(2) = forward;
  return b;
}

Vec2 Camera::pixel_center(int row, int col) const {
  return {-1.0 + (2.0 * col + 1.0) / width, 1.0 - (2.0 * row + 1.0) / height};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Mat3 rotation_matrix(const Vec3& r) {
  const double angle = r.norm();
  const Mat3 k = skew(r);
  if (angle < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  const double s = std::sin(angle) / angle;
  const double c = (1.0 - std::cos(angle)) / (angle * angle);
  return Mat3::Identity() + s * k + c * k * k;
}

std::array<Mat3, 3> rotation_derivatives(const Vec3& r) {
  std::array<Mat3, 3> out;
  const double sq = r.squaredNorm();
  if (sq < 1e-10) {
    // Second-order expansion around the identity.
    const Mat3 k = skew(r);
    for (int i = 0; i < 3; ++i) {
      const Mat3 e = skew(Vec3::Unit(i));
      out[i] = e + 0.5 * (e * k + k * e);
    }
    return out;
  }
  // Gallego & Yezzi, "A compact formula for the derivative of a 3-D rotation".
  const Mat3 rot = rotation_matrix(r);
  const Mat3 k = skew(r);
  for (int i = 0; i < 3; ++i) {
    const Vec3 col = (Mat3::Identity() - rot) * Vec3::Unit(i);
    out[i] = (r[i] * k + skew(r.cross(col))) / sq * rot;
  }
  return out;
}

Vec3 rotation_log(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

// ---------------------------------------------------------------------------
// Projection

std::uint64_t ProjectedScene::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const ProjectedFace& f : faces) {
    for (const Vec2& v : f.ndc) mix(v.data(), 2 * sizeof(double));
    mix(&f.inverse_depth, sizeof(double));
    const unsigned char flags = static_cast<unsigned char>(f.visible) | (static_cast<unsigned char>(f.degenerate) << 1);
    mix(&flags, 1);
  }
  mix(&background_inverse_depth, sizeof(double));
  return h;
}

double triangle_area(const Triangle2& t) {
  const Vec2 e1 = t[1] - t[0];
  const Vec2 e2 = t[2] - t[0];
  return 0.5 * (e1.x() * e2.y() - e1.y() * e2.x());
}

namespace {

bool is_degenerate(const Triangle2& t) {
  const double scale = std::max({(t[1] - t[0]).squaredNorm(), (t[2] - t[1]).squaredNorm(), (t[0] - t[2]).squaredNorm()});
  return !(std::abs(triangle_area(t)) > 1e-14 * scale) || scale == 0.0;
}

}  // namespace

ProjectedScene project(const Mesh& mesh, const Camera& camera, const Pose& pose) {
  if (mesh.faces.empty()) throw std::invalid_argument("project: mesh has no faces");
  camera.validate();
  const Mat3 basis = camera.basis();
  const Mat3 rot = rotation_matrix(pose.rotation);
  const double ty = std::tan(0.5 * camera.fov);
  const double tx = ty * camera.aspect();

  ProjectedScene scene;
  scene.background_inverse_depth = 1.0 / camera.far;
  scene.face_indices = mesh.faces;
  scene.camera_vertices.reserve(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) {
    scene.camera_vertices.push_back(basis * (rot * v + pose.translation - camera.eye));
  }
  scene.faces.resize(mesh.faces.size());
  for (std::size_t j = 0; j < mesh.faces.size(); ++j) {
    ProjectedFace& out = scene.faces[j];
    double depth_sum = 0.0;
    bool in_front = true;
    for (int k = 0; k < 3; ++k) {
      const Vec3& pc = scene.camera_vertices[mesh.faces[j][k]];
      depth_sum += pc.z();
      in_front = in_front && pc.z() >= camera.near;
      if (pc.z() > 0.0) out.ndc[k] = Vec2(pc.x() / (pc.z() * tx), pc.y() / (pc.z() * ty));
      else out.ndc[k] = Vec2::Zero();
    }
    const double centroid_depth = depth_sum / 3.0;
    out.inverse_depth = centroid_depth > 0.0 ? 1.0 / centroid_depth : 0.0;
    out.visible = in_front && centroid_depth < camera.far;
    out.degenerate = out.visible && is_degenerate(out.ndc);
  }
  return scene;
}

Eigen::Matrix3d ndc_depth_jacobian(const Vec3& pc, const Camera& camera) {
  const double ty = std::tan(0.5 * camera.fov);
  const double tx = ty * camera.aspect();
  const double iz = 1.0 / pc.z();
  Eigen::Matrix3d j;
  j << iz / tx, 0.0, -pc.x() * iz * iz / tx,
       0.0, iz / ty, -pc.y() * iz * iz / ty,
       0.0, 0.0, 1.0;
  return j;
}

Eigen::Matrix<double, 3, 6> vertex_pose_jacobian(const Vec3& vertex, const Camera& camera, const Pose& pose) {
  const Mat3 basis = camera.basis();
  const Mat3 rot = rotation_matrix(pose.rotation);
  const Vec3 pc = basis * (rot * vertex + pose.translation - camera.eye);
  const auto dr = rotation_derivatives(pose.rotation);
  Eigen::Matrix<double, 3, 6> d_cam;
  for (int i = 0; i < 3; ++i) d_cam.col(i) = basis * (dr[i] * vertex);
  d_cam.rightCols<3>() = basis;
  return ndc_depth_jacobian(pc, camera) * d_cam;
}

// ---------------------------------------------------------------------------
// Signed distance

namespace {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

bool inside_triangle(const Vec2& p, const Triangle2& t) {
  const double e0 = cross2(t[1] - t[0], p - t[0]);
  const double e1 = cross2(t[2] - t[1], p - t[1]);
  const double e2 = cross2(t[0] - t[2], p - t[2]);
  return (e0 > 0 && e1 > 0 && e2 > 0) || (e0 < 0 && e1 < 0 && e2 < 0);
}

SignedDistanceGrad signed_distance_grad(const Vec2& p, const Triangle2& t) {
  SignedDistanceGrad out;
  if (is_degenerate(t)) return out;
  double best = std::numeric_limits<double>::infinity();
  int best_edge = 0;
  double best_t = 0.0;
  Vec2 best_q = t[0];
  for (int k = 0; k < 3; ++k) {
    const Vec2& u = t[k];
    const Vec2& v = t[(k + 1) % 3];
    const Vec2 e = v - u;
    const double s = std::clamp((p - u).dot(e) / e.squaredNorm(), 0.0, 1.0);
    const Vec2 q = u + s * e;
    const double dist = (p - q).squaredNorm();
    if (dist < best) {
      best = dist;
      best_edge = k;
      best_t = s;
      best_q = q;
    }
  }
  const double dist = std::sqrt(best);
  const double sign = inside_triangle(p, t) ? 1.0 : -1.0;
  out.value = sign * dist;
  if (dist > 0.0) {
    const Vec2 n = (p - best_q) / dist;
    out.d_vertices[best_edge] = -sign * (1.0 - best_t) * n;
    out.d_vertices[(best_edge + 1) % 3] = -sign * best_t * n;
  }
  return out;
}

double signed_distance(const Vec2& p, const Triangle2& t) { return signed_distance_grad(p, t).value; }

// ---------------------------------------------------------------------------
// Shading

std::vector<Rgb> shade(const Mesh& mesh, const DirectionalLight& light, const Mat3& rotation) {
  if (!light.enabled) return mesh.face_colors;
  std::vector<Rgb> out;
  out.reserve(mesh.faces.size());
  const Vec3 l = light.direction.normalized();
  for (std::size_t j = 0; j < mesh.faces.size(); ++j) {
    const Face& f = mesh.faces[j];
    const Vec3 n = (rotation * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]))
                       .normalized();
    const double factor = light.ambient + light.diffuse * std::max(0.0, n.dot(l));
    out.push_back((mesh.face_colors[j] * factor).cwiseMax(0.0).cwiseMin(1.0));
  }
  return out;
}

}  // namespace pertrender
