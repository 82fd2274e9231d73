#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace pertrender {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rgb = Eigen::Vector3d;
using Face = std::array<int, 3>;

/// Triangle mesh with one constant color per face.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Rgb> face_colors;
  /// Sorted, symmetric per-vertex neighbor lists.
  std::vector<std::vector<int>> adjacency;

  Mesh() = default;
  Mesh(std::vector<Vec3> vertices, std::vector<Face> faces, std::vector<Rgb> colors);

  std::size_t num_faces() const { return faces.size(); }
  std::size_t num_vertices() const { return vertices.size(); }

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;
  void rebuild_adjacency();
};

class ObjParseError : public std::runtime_error {
 public:
  ObjParseError(const std::string& path, int line, const std::string& message);
  int line() const { return line_; }

 private:
  int line_;
};

struct ObjOptions {
  bool fan_triangulate = false;
  Rgb default_color{0.8, 0.8, 0.8};
};

/// Reads `v` and `f` records (1-based or negative indices, `a/b/c` forms).
/// Optional per-vertex colors (`v x y z r g b`) are averaged onto faces.
Mesh load_obj(const std::filesystem::path& path, const ObjOptions& options = {});
void write_obj(const Mesh& mesh, const std::filesystem::path& path);

/// Unit cube centered at the origin, 12 triangles, one color per cube side.
Mesh make_cube(double side = 1.0);
extern const std::array<Rgb, 6> kCubeSideColors;

struct Camera {
  double fov = 1.0471975511965976;  // vertical, radians
  int height = 64;
  int width = 64;
  Vec3 eye{0.0, 0.0, 3.0};
  Vec3 at{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  double near = 0.1;
  double far = 100.0;

  void validate() const;
  /// Rows: right, up, forward (world to camera rotation).
  Mat3 basis() const;
  double aspect() const { return static_cast<double>(width) / height; }
  /// NDC center of pixel (row, col); row 0 is the top row.
  Vec2 pixel_center(int row, int col) const;
};

/// Object pose: axis-angle rotation and translation.
struct Pose {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
};

/// Rodrigues formula; the zero vector maps to the identity.
Mat3 rotation_matrix(const Vec3& axis_angle);
inline Mat3 rotation_matrix(const Pose& pose) { return rotation_matrix(pose.rotation); }
/// dR/dr_i for i = 0, 1, 2.
std::array<Mat3, 3> rotation_derivatives(const Vec3& axis_angle);
/// Inverse of rotation_matrix, angle in [0, pi].
Vec3 rotation_log(const Mat3& rotation);
Mat3 skew(const Vec3& v);

struct ProjectedFace {
  std::array<Vec2, 3> ndc;
  /// 1 / depth of the camera-space centroid.
  double inverse_depth = 0.0;
  bool visible = false;
  /// Zero projected area: never occupies a pixel and never wins aggregation.
  bool degenerate = false;
};

struct ProjectedScene {
  std::vector<ProjectedFace> faces;
  double background_inverse_depth = 0.0;
  std::vector<Vec3> camera_vertices;
  std::vector<Face> face_indices;

  std::size_t num_faces() const { return faces.size(); }
  /// Hash of geometry used to pair a backward pass with its forward pass.
  std::uint64_t fingerprint() const;
};

/// Perspective projection of the posed mesh. Faces with any vertex in front
/// of the near plane, or with centroid beyond the far plane, are invisible.
ProjectedScene project(const Mesh& mesh, const Camera& camera, const Pose& pose);

/// Jacobian of (ndc_x, ndc_y, depth) of one object-space vertex with respect
/// to (rotation, translation).
Eigen::Matrix<double, 3, 6> vertex_pose_jacobian(const Vec3& vertex, const Camera& camera, const Pose& pose);
/// Jacobian of (ndc_x, ndc_y, depth) with respect to camera-space position.
Eigen::Matrix3d ndc_depth_jacobian(const Vec3& camera_point, const Camera& camera);

using Triangle2 = std::array<Vec2, 3>;

inline constexpr double kDegenerateDistance = std::numeric_limits<double>::lowest();

double triangle_area(const Triangle2& tri);
bool inside_triangle(const Vec2& p, const Triangle2& tri);

/// Signed Euclidean distance from p to the triangle boundary: positive inside,
/// negative outside, zero on an edge. Zero-area triangles give kDegenerateDistance.
double signed_distance(const Vec2& p, const Triangle2& tri);

struct SignedDistanceGrad {
  double value = kDegenerateDistance;
  /// d value / d vertex k.
  std::array<Vec2, 3> d_vertices{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
};
SignedDistanceGrad signed_distance_grad(const Vec2& p, const Triangle2& tri);

struct DirectionalLight {
  bool enabled = false;
  /// Unit vector pointing toward the light.
  Vec3 direction{0.0, 0.0, 1.0};
  double ambient = 0.3;
  double diffuse = 0.7;
};

/// Flat Lambertian shading, base * (ambient + diffuse * max(0, n.l)), clamped
/// to [0, 1]. Normals are rotated by `rotation` first. A disabled light
/// returns the base colors.
std::vector<Rgb> shade(const Mesh& mesh, const DirectionalLight& light, const Mat3& rotation = Mat3::Identity());

}  // namespace pertrender
