#include "pertrender/scene.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

using namespace pertrender;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path dir = fs::temp_directory_path() / "pertrender_scene_tests";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p) << contents;
  return p;
}

const char* kCubeObj = R"(# cube
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
)";

// Brute-force nearest point on the triangle boundary.
double brute_boundary_distance(const Vec2& p, const Triangle2& t, int steps = 200000) {
  double best = std::numeric_limits<double>::infinity();
  for (int e = 0; e < 3; ++e) {
    const Vec2& a = t[e];
    const Vec2& b = t[(e + 1) % 3];
    for (int k = 0; k <= steps; ++k) {
      const double s = static_cast<double>(k) / steps;
      best = std::min(best, (p - (a + s * (b - a))).norm());
    }
  }
  return best;
}

// Barycentric inside test, written independently of the renderer's edge test.
bool barycentric_inside(const Vec2& p, const Triangle2& t) {
  const Vec2 v0 = t[1] - t[0];
  const Vec2 v1 = t[2] - t[0];
  const Vec2 v2 = p - t[0];
  const double den = v0.x() * v1.y() - v1.x() * v0.y();
  const double b = (v2.x() * v1.y() - v1.x() * v2.y()) / den;
  const double c = (v0.x() * v2.y() - v2.x() * v0.y()) / den;
  return b > 0.0 && c > 0.0 && b + c < 1.0;
}

Triangle2 random_triangle(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Triangle2 t;
  do {
    for (auto& v : t) v = Vec2(u(rng), u(rng));
  } while (std::abs(triangle_area(t)) < 1e-3);
  return t;
}

}  // namespace

// ---------------------------------------------------------------- mesh / OBJ

TEST(Obj, CubeCounts) {
  const Mesh m = load_obj(temp_file("cube.obj", kCubeObj));
  EXPECT_EQ(m.num_vertices(), 8u);
  EXPECT_EQ(m.num_faces(), 12u);
  EXPECT_NO_THROW(m.validate());
  for (const Rgb& c : m.face_colors) EXPECT_EQ(c, Rgb(0.8, 0.8, 0.8));
}

TEST(Obj, IndexOutOfRangeNamesTheLine) {
  const fs::path p = temp_file("bad_index.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nv 0 0 1\nv 1 0 1\nv 0 1 1\nv 1 1 1\nf 1 2 9\n");
  try {
    load_obj(p);
    FAIL() << "expected ObjParseError";
  } catch (const ObjParseError& e) {
    EXPECT_EQ(e.line(), 9);
    EXPECT_NE(std::string(e.what()).find(p.string()), std::string::npos);
  }
}

TEST(Obj, QuadsRejectedOrFanned) {
  const fs::path p = temp_file("quad.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n");
  EXPECT_THROW(load_obj(p), ObjParseError);
  ObjOptions fan;
  fan.fan_triangulate = true;
  const Mesh m = load_obj(p, fan);
  ASSERT_EQ(m.num_faces(), 2u);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(m.faces[1], (Face{0, 2, 3}));
}

TEST(Obj, SlashFormsNegativeIndicesAndVertexColors) {
  const fs::path p = temp_file("forms.obj",
                               "v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nvt 0 0\nvn 0 0 1\nf -3/1/1 -2//1 -1\n");
  const Mesh m = load_obj(p);
  ASSERT_EQ(m.num_faces(), 1u);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
  EXPECT_NEAR(m.face_colors[0].x(), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(m.face_colors[0].y(), 1.0 / 3.0, 1e-12);
}

TEST(Obj, MalformedRecordsAndMissingFile) {
  EXPECT_THROW(load_obj(temp_file("nan.obj", "v 0 zero 0\n")), ObjParseError);
  EXPECT_THROW(load_obj(temp_file("repeat.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n")), ObjParseError);
  EXPECT_THROW(load_obj("/nonexistent/mesh.obj"), std::runtime_error);
}

TEST(Obj, RoundTrip) {
  const Mesh a = load_obj(temp_file("rt_in.obj", kCubeObj));
  const fs::path out = fs::temp_directory_path() / "pertrender_scene_tests" / "rt_out.obj";
  write_obj(a, out);
  const Mesh b = load_obj(out);
  ASSERT_EQ(a.num_vertices(), b.num_vertices());
  for (std::size_t i = 0; i < a.num_vertices(); ++i) EXPECT_LT((a.vertices[i] - b.vertices[i]).norm(), 1e-6);
  EXPECT_EQ(a.faces, b.faces);
}

TEST(Mesh, AdjacencySymmetric) {
  const Mesh m = make_cube();
  for (std::size_t v = 0; v < m.num_vertices(); ++v) {
    for (int u : m.adjacency[v]) {
      const auto& back = m.adjacency[static_cast<std::size_t>(u)];
      EXPECT_TRUE(std::find(back.begin(), back.end(), static_cast<int>(v)) != back.end());
    }
  }
}

TEST(Mesh, ValidateRejectsBrokenInvariants) {
  const std::vector<Vec3> v{Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY()};
  EXPECT_THROW(Mesh(v, {{0, 1, 3}}, {Rgb(0.5, 0.5, 0.5)}).validate(), std::invalid_argument);
  EXPECT_THROW(Mesh(v, {{0, 1, 1}}, {Rgb(0.5, 0.5, 0.5)}).validate(), std::invalid_argument);
  EXPECT_THROW(Mesh(v, {{0, 1, 2}}, {Rgb(1.5, 0.5, 0.5)}).validate(), std::invalid_argument);
}

TEST(Mesh, CubeFacesPointOutward) {
  const Mesh m = make_cube();
  ASSERT_EQ(m.num_faces(), 12u);
  for (const Face& f : m.faces) {
    const Vec3 a = m.vertices[f[0]], b = m.vertices[f[1]], c = m.vertices[f[2]];
    const Vec3 n = (b - a).cross(c - a);
    EXPECT_GT(n.dot((a + b + c) / 3.0), 0.0);
  }
}

// ---------------------------------------------------------------- rotations

TEST(Rotation, ZeroIsIdentity) { EXPECT_EQ(rotation_matrix(Vec3::Zero()), Mat3::Identity()); }

TEST(Rotation, QuarterTurnAboutZ) {
  const Vec3 r = rotation_matrix(Vec3(0, 0, std::numbers::pi / 2)) * Vec3::UnitX();
  EXPECT_LT((r - Vec3::UnitY()).norm(), 1e-12);
}

TEST(Rotation, RandomAreOrthonormal) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 R = rotation_matrix(testing_support::random_axis_angle(rng));
    EXPECT_LT((R.transpose() * R - Mat3::Identity()).norm(), 1e-9);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-9);
  }
}

TEST(Rotation, AgreesWithEigenAngleAxis) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vec3 r = testing_support::random_axis_angle(rng);
    const Mat3 ref = Eigen::AngleAxisd(r.norm(), r.normalized()).toRotationMatrix();
    EXPECT_LT((rotation_matrix(r) - ref).norm(), 1e-12);
  }
}

TEST(Rotation, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::vector<Vec3> points{Vec3(1e-9, -2e-9, 0.5e-9), Vec3(1e-4, 0, 0)};
  for (int i = 0; i < 20; ++i) points.push_back(testing_support::random_axis_angle(rng, 3.0));
  for (const Vec3& r : points) {
    const auto d = rotation_derivatives(r);
    for (int k = 0; k < 3; ++k) {
      const double h = 1e-6;
      Vec3 a = r, b = r;
      a[k] += h;
      b[k] -= h;
      const Mat3 fd = (rotation_matrix(a) - rotation_matrix(b)) / (2 * h);
      EXPECT_LT((d[k] - fd).norm(), 1e-8) << "r=" << r.transpose() << " k=" << k;
    }
  }
}

TEST(Rotation, LogInvertsExp) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec3 r = testing_support::random_axis_angle(rng, 3.1);
    EXPECT_LT((rotation_log(rotation_matrix(r)) - r).norm(), 1e-9);
  }
}

// ---------------------------------------------------------------- camera / projection

TEST(Camera, ValidateConstraints) {
  Camera c;
  EXPECT_NO_THROW(c.validate());
  c.near = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = Camera{};
  c.far = c.near;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = Camera{};
  c.width = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = Camera{};
  c.fov = std::numbers::pi;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Camera, PixelCentersAreSymmetric) {
  Camera c;
  c.height = 4;
  c.width = 8;
  EXPECT_LT((c.pixel_center(0, 0) - Vec2(-1.0 + 1.0 / 8, 1.0 - 1.0 / 4)).norm(), 1e-15);
  EXPECT_LT((c.pixel_center(3, 7) + c.pixel_center(0, 0)).norm(), 1e-15);
}

TEST(Project, CubeAtDepthThreeFitsInView) {
  const Mesh m = make_cube();
  const Camera cam;
  const ProjectedScene s = project(m, cam, Pose{});
  const double f = 1.0 / std::tan(cam.fov / 2);
  for (std::size_t j = 0; j < s.num_faces(); ++j) {
    EXPECT_TRUE(s.faces[j].visible);
    EXPECT_GT(s.faces[j].inverse_depth, s.background_inverse_depth);
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = m.vertices[m.faces[j][k]];
      const double depth = 3.0 - v.z();
      // Analytic pinhole oracle.
      EXPECT_NEAR(s.faces[j].ndc[k].x(), f * v.x() / depth, 1e-12);
      EXPECT_NEAR(s.faces[j].ndc[k].y(), f * v.y() / depth, 1e-12);
      EXPECT_LE(std::abs(s.faces[j].ndc[k].x()), 1.0);
      EXPECT_LE(std::abs(s.faces[j].ndc[k].y()), 1.0);
    }
  }
  EXPECT_DOUBLE_EQ(s.background_inverse_depth, 1.0 / cam.far);
}

TEST(Project, TranslationAlongRightShiftsNdcX) {
  const Mesh m = make_cube();
  const Camera cam;
  Pose shifted;
  const double t = 1e-5;
  shifted.translation = t * cam.basis().row(0).transpose();
  const ProjectedScene a = project(m, cam, Pose{});
  const ProjectedScene b = project(m, cam, shifted);
  const double f = 1.0 / std::tan(cam.fov / 2);
  for (std::size_t j = 0; j < a.num_faces(); ++j) {
    for (int k = 0; k < 3; ++k) {
      const double depth = 3.0 - m.vertices[m.faces[j][k]].z();
      EXPECT_NEAR((b.faces[j].ndc[k].x() - a.faces[j].ndc[k].x()) / t, f / depth, 1e-6);
      EXPECT_NEAR(b.faces[j].ndc[k].y(), a.faces[j].ndc[k].y(), 1e-15);
    }
  }
}

TEST(Project, FacesBehindCameraInvisible) {
  const Mesh m = make_cube();
  Pose behind;
  behind.translation = Vec3(0, 0, 5.0);
  const ProjectedScene s = project(m, Camera{}, behind);
  for (const auto& f : s.faces) EXPECT_FALSE(f.visible);
}

TEST(Project, DegenerateFaceFlagged) {
  const Mesh m({Vec3(0, 0, 0), Vec3(0.5, 0, 0), Vec3(1, 0, 0)}, {{0, 1, 2}}, {Rgb(1, 0, 0)});
  const ProjectedScene s = project(m, Camera{}, Pose{});
  EXPECT_TRUE(s.faces[0].degenerate);
}

TEST(Project, PoseJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const Camera cam;
  for (int trial = 0; trial < 20; ++trial) {
    Pose pose;
    pose.rotation = testing_support::random_axis_angle(rng);
    pose.translation = Vec3(0.1, -0.2, 0.3);
    const Vec3 v(0.4, -0.3, 0.5);
    const auto J = vertex_pose_jacobian(v, cam, pose);
    auto eval = [&](const Pose& p) {
      const Vec3 c = cam.basis() * (rotation_matrix(p.rotation) * v + p.translation - cam.eye);
      const double f = 1.0 / std::tan(cam.fov / 2);
      return Vec3(f / cam.aspect() * c.x() / c.z(), f * c.y() / c.z(), c.z());
    };
    for (int k = 0; k < 6; ++k) {
      const double h = 1e-5;
      Pose a = pose, b = pose;
      (k < 3 ? a.rotation : a.translation)[k % 3] += h;
      (k < 3 ? b.rotation : b.translation)[k % 3] -= h;
      const Vec3 fd = (eval(a) - eval(b)) / (2 * h);
      EXPECT_LT((J.col(k) - fd).norm(), 1e-4 * std::max(1.0, fd.norm())) << "k=" << k;
    }
  }
}

TEST(Project, PoseJacobianMatchesProjectedVertices) {
  const Mesh m = make_cube();
  const Camera cam;
  Pose pose;
  pose.rotation = Vec3(0.3, -0.2, 0.5);
  const ProjectedScene s = project(m, cam, pose);
  const Face& f = m.faces[4];
  const auto J = vertex_pose_jacobian(m.vertices[f[0]], cam, pose);
  for (int k = 0; k < 6; ++k) {
    const double h = 1e-5;
    Pose a = pose, b = pose;
    (k < 3 ? a.rotation : a.translation)[k % 3] += h;
    (k < 3 ? b.rotation : b.translation)[k % 3] -= h;
    const Vec2 fd = (project(m, cam, a).faces[4].ndc[0] - project(m, cam, b).faces[4].ndc[0]) / (2 * h);
    EXPECT_LT((J.col(k).head<2>() - fd).norm(), 1e-4 * std::max(1.0, fd.norm()));
  }
  EXPECT_EQ(s.faces.size(), 12u);
}

// ---------------------------------------------------------------- signed distance

TEST(SignedDistance, OnEdgeIsZero) {
  const Triangle2 t{Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};
  EXPECT_EQ(signed_distance(Vec2(0.5, 0.0), t), 0.0);
  EXPECT_NEAR(signed_distance(Vec2(0.5, 0.5), t), 0.0, 1e-16);
}

TEST(SignedDistance, IncenterGivesInradius) {
  const Triangle2 t{Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};
  const double r = (2.0 - std::numbers::sqrt2) / 2.0;
  EXPECT_NEAR(signed_distance(Vec2(r, r), t), r, 1e-12);
}

TEST(SignedDistance, OutsideMatchesBruteForce) {
  const Triangle2 t{Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};
  const Vec2 p(2, 2);
  EXPECT_NEAR(signed_distance(p, t), -brute_boundary_distance(p, t), 1e-5);
  EXPECT_NEAR(signed_distance(p, t), -1.5 * std::numbers::sqrt2, 1e-12);
}

TEST(SignedDistance, DegenerateSentinel) {
  const Triangle2 t{Vec2(0, 0), Vec2(1, 1), Vec2(2, 2)};
  EXPECT_EQ(signed_distance(Vec2(0.5, 0.5), t), kDegenerateDistance);
}

TEST(SignedDistance, OneLipschitz) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 10000; ++i) {
    const Triangle2 t = random_triangle(rng);
    const Vec2 p(u(rng), u(rng)), q(u(rng), u(rng));
    EXPECT_LE(std::abs(signed_distance(p, t) - signed_distance(q, t)), (p - q).norm() + 1e-9);
  }
}

TEST(SignedDistance, SignAgreesWithBarycentricTest) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 10000; ++i) {
    const Triangle2 t = random_triangle(rng);
    const Vec2 p(u(rng), u(rng));
    const double d = signed_distance(p, t);
    if (std::abs(d) < 1e-12) continue;
    EXPECT_EQ(d > 0.0, barycentric_inside(p, t));
    EXPECT_EQ(inside_triangle(p, t), barycentric_inside(p, t));
  }
}

TEST(SignedDistance, MagnitudeMatchesBruteForceOnRandomPairs) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 50; ++i) {
    const Triangle2 t = random_triangle(rng);
    const Vec2 p(u(rng), u(rng));
    EXPECT_NEAR(std::abs(signed_distance(p, t)), brute_boundary_distance(p, t, 20000), 1e-4);
  }
}

TEST(SignedDistance, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  int checked = 0;
  while (checked < 500) {
    Triangle2 t = random_triangle(rng);
    const Vec2 p(u(rng), u(rng));
    const auto g = signed_distance_grad(p, t);
    bool ok = true;
    for (int k = 0; k < 3 && ok; ++k) {
      for (int c = 0; c < 2 && ok; ++c) {
        const double h = 1e-7;
        Triangle2 a = t, b = t;
        a[k][c] += h;
        b[k][c] -= h;
        const double da = signed_distance(p, a), db = signed_distance(p, b);
        // Skip points where the nearest edge switches inside the stencil.
        if (std::abs((da - g.value) - (g.value - db)) > 1e-10) {
          ok = false;
          break;
        }
        EXPECT_NEAR(g.d_vertices[k][c], (da - db) / (2 * h), 1e-6);
      }
    }
    ++checked;
  }
}

// ---------------------------------------------------------------- shading

TEST(Shade, LambertExamples) {
  const Mesh tri({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}}, {Rgb(1, 1, 1)});
  DirectionalLight light;
  light.enabled = true;
  light.ambient = 0.0;
  light.diffuse = 1.0;
  light.direction = Vec3(0, 0, 1);
  EXPECT_LT((shade(tri, light)[0] - Rgb(1, 1, 1)).norm(), 1e-12);
  light.direction = Vec3(0, 0, -1);
  EXPECT_LT(shade(tri, light)[0].norm(), 1e-12);
  light.ambient = 0.3;
  light.diffuse = 0.7;
  light.direction = Vec3(std::sqrt(0.75), 0, 0.5);
  EXPECT_LT((shade(tri, light)[0] - Rgb(0.65, 0.65, 0.65)).norm(), 1e-12);
}

TEST(Shade, DisabledLightKeepsBaseColors) {
  const Mesh m = make_cube();
  EXPECT_EQ(shade(m, DirectionalLight{}), m.face_colors);
}
