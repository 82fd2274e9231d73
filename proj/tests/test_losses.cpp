#include "pertrender/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace pertrender;

namespace {

Image random_image(std::mt19937_64& rng, int h, int w, int c, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(h, w, c);
  for (double& v : img.data) v = u(rng);
  return img;
}

template <class F>
void expect_adjoint_matches_fd(const Image& target, Image rendered, F loss) {
  const ImageLoss base = loss(target, rendered);
  const double h = 1e-6;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double keep = rendered.data[i];
    rendered.data[i] = keep + h;
    const double up = loss(target, rendered).value;
    rendered.data[i] = keep - h;
    const double down = loss(target, rendered).value;
    rendered.data[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double a = base.adjoint.data[i];
    EXPECT_LE(std::abs(a - fd), 1e-5 * std::max(1.0, std::abs(fd))) << "i=" << i;
  }
}

Mesh tetrahedron() {
  return Mesh({Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)},
              {Face{0, 1, 2}, Face{0, 3, 1}, Face{0, 2, 3}, Face{1, 3, 2}},
              std::vector<Rgb>(4, Rgb(0.5, 0.5, 0.5)));
}

}  // namespace

TEST(RgbL2, IdenticalIsZero) {
  std::mt19937_64 rng(1);
  const Image a = random_image(rng, 4, 5, 3);
  const ImageLoss l = rgb_l2(a, a);
  EXPECT_EQ(l.value, 0.0);
  for (double v : l.adjoint.data) EXPECT_EQ(v, 0.0);
}

TEST(RgbL2, SinglePixelHalfOff) {
  Image t(3, 3, 3, 0.2);
  Image r = t;
  r.at(1, 2, 1) += 0.5;
  EXPECT_NEAR(rgb_l2(t, r).value, 0.125, 1e-15);
  EXPECT_NEAR(rgb_l2(t, r).adjoint.at(1, 2, 1), 0.5, 1e-15);
}

TEST(RgbL2, GradientStepMatchesFirstOrderPrediction) {
  std::mt19937_64 rng(2);
  const Image t = random_image(rng, 8, 8, 3);
  Image r = random_image(rng, 8, 8, 3);
  const ImageLoss l = rgb_l2(t, r);
  const double lr = 1e-4;
  double sq = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    sq += l.adjoint.data[i] * l.adjoint.data[i];
    r.data[i] -= lr * l.adjoint.data[i];
  }
  const double predicted = lr * sq;
  const double actual = l.value - rgb_l2(t, r).value;
  EXPECT_NEAR(actual / predicted, 1.0, 0.01);
}

TEST(RgbL2, AdjointMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  expect_adjoint_matches_fd(random_image(rng, 3, 4, 3), random_image(rng, 3, 4, 3), rgb_l2);
}

TEST(RgbL1, Examples) {
  Image t(2, 2, 3, 0.5);
  EXPECT_EQ(rgb_l1(t, t).value, 0.0);
  Image r = t;
  r.at(0, 1, 0) += 0.2;
  r.at(0, 1, 1) -= 0.1;
  const ImageLoss l = rgb_l1(t, r);
  EXPECT_NEAR(l.value, 0.3, 1e-15);
  EXPECT_EQ(l.adjoint.at(0, 1, 0), 1.0);
  EXPECT_EQ(l.adjoint.at(0, 1, 1), -1.0);
  EXPECT_EQ(l.adjoint.at(0, 1, 2), 0.0);
}

TEST(RgbL1, AdjointIsSignStructured) {
  std::mt19937_64 rng(4);
  const Image t = random_image(rng, 6, 6, 3);
  Image r = random_image(rng, 6, 6, 3);
  r.data[0] = t.data[0];
  const ImageLoss l = rgb_l1(t, r);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double d = r.data[i] - t.data[i];
    EXPECT_EQ(l.adjoint.data[i], d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
  }
}

TEST(RgbL1, AdjointMatchesFiniteDifferencesAwayFromKinks) {
  std::mt19937_64 rng(5);
  const Image t = random_image(rng, 3, 3, 3, 0.0, 0.4);
  expect_adjoint_matches_fd(t, random_image(rng, 3, 3, 3, 0.6, 1.0), rgb_l1);
}

TEST(RgbLosses, ShapeMismatchThrows) {
  EXPECT_THROW(rgb_l2(Image(2, 2, 3), Image(2, 3, 3)), std::invalid_argument);
  EXPECT_THROW(rgb_l1(Image(2, 2, 3), Image(2, 2, 1)), std::invalid_argument);
  EXPECT_THROW(neg_iou(Image(2, 2, 1), Image(3, 2, 1)), std::invalid_argument);
}

TEST(NegIou, BinaryExamples) {
  Image a(2, 3, 1);
  a.at(0, 0) = a.at(0, 1) = 1.0;
  EXPECT_EQ(neg_iou(a, a).value, 0.0);

  Image disjoint(2, 3, 1);
  disjoint.at(1, 2) = 1.0;
  EXPECT_EQ(neg_iou(a, disjoint).value, 1.0);

  Image wider = a;
  wider.at(1, 0) = wider.at(1, 1) = 1.0;
  EXPECT_NEAR(neg_iou(a, wider).value, 0.5, 1e-15);
}

TEST(NegIou, BothEmptyIsZeroWithZeroAdjoint) {
  const Image empty(4, 4, 1);
  const ImageLoss l = neg_iou(empty, empty);
  EXPECT_EQ(l.value, 0.0);
  for (double v : l.adjoint.data) EXPECT_EQ(v, 0.0);
}

TEST(NegIou, StaysInUnitIntervalOnSoftInputs) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 500; ++k) {
    const double v = neg_iou(random_image(rng, 5, 5, 1), random_image(rng, 5, 5, 1)).value;
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(NegIou, AdjointMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  expect_adjoint_matches_fd(random_image(rng, 4, 4, 1, 0.1, 0.9), random_image(rng, 4, 4, 1, 0.1, 0.9), neg_iou);
}

TEST(Laplacian, ChainInteriorAtMidpointsVanishes) {
  Mesh chain;
  chain.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0), Vec3(3, 0, 0), Vec3(4, 0, 0)};
  chain.adjacency = {{}, {0, 2}, {1, 3}, {2, 4}, {}};
  EXPECT_EQ(laplacian_loss(chain, chain.vertices).value, 0.0);
  auto bent = chain.vertices;
  bent[2].y() = 1.0;
  // middle vertex off by 1; its neighbors are off by 0.5 from their midpoints.
  EXPECT_NEAR(laplacian_loss(chain, bent).value, 1.0 + 0.25 + 0.25, 1e-15);
}

TEST(Laplacian, RegularTetrahedronDirectEvaluation) {
  const Mesh tet = tetrahedron();
  double expected = 0.0;
  for (std::size_t v = 0; v < 4; ++v) {
    Vec3 c = Vec3::Zero();
    for (std::size_t u = 0; u < 4; ++u) {
      if (u != v) c += tet.vertices[u] / 3.0;
    }
    expected += (tet.vertices[v] - c).squaredNorm();
  }
  EXPECT_NEAR(expected, 64.0 / 3.0, 1e-12);
  EXPECT_NEAR(laplacian_loss(tet, tet.vertices).value, expected, 1e-12);
}

TEST(Laplacian, TranslationInvariant) {
  const Mesh cube = make_cube();
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.1);
  auto pos = cube.vertices;
  for (Vec3& p : pos) p += Vec3(n(rng), n(rng), n(rng));
  auto moved = pos;
  for (Vec3& p : moved) p += Vec3(3.0, -1.5, 0.25);
  EXPECT_NEAR(laplacian_loss(cube, pos).value, laplacian_loss(cube, moved).value, 1e-12);
}

TEST(Laplacian, NonnegativeAndAdjointMatchesFiniteDifferences) {
  const Mesh cube = make_cube();
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 0.2);
  auto pos = cube.vertices;
  for (Vec3& p : pos) p += Vec3(n(rng), n(rng), n(rng));
  const VertexLoss base = laplacian_loss(cube, pos);
  EXPECT_GT(base.value, 0.0);
  const double h = 1e-6;
  for (std::size_t v = 0; v < pos.size(); ++v) {
    for (int k = 0; k < 3; ++k) {
      auto a = pos, b = pos;
      a[v][k] += h;
      b[v][k] -= h;
      const double fd = (laplacian_loss(cube, a).value - laplacian_loss(cube, b).value) / (2 * h);
      EXPECT_LE(std::abs(base.adjoint[v][k] - fd), 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Laplacian, WrongPositionCountThrows) {
  EXPECT_THROW(laplacian_loss(make_cube(), {Vec3::Zero()}), std::invalid_argument);
}

TEST(Composite, WeightedSum) {
  const Mesh tet = tetrahedron();
  LossParts parts;
  parts.sil = ImageLoss{0.5, Image(1, 1, 1, 1.0)};
  parts.rgb = ImageLoss{0.2, Image(1, 1, 3, 1.0)};
  parts.lap = VertexLoss{10.0, std::vector<Vec3>(4, Vec3::Ones())};
  const CompositeLoss l = composite_loss(LossWeights{1.0, 1.0, 3e-3}, parts);
  EXPECT_NEAR(l.value, 0.73, 1e-15);
  ASSERT_TRUE(l.d_vertices);
  EXPECT_NEAR((*l.d_vertices)[0].x(), 3e-3, 1e-18);
  EXPECT_EQ(l.d_rgb->data[0], 1.0);
}

TEST(Composite, ZeroAndSingleWeights) {
  LossParts parts;
  parts.rgb = ImageLoss{0.2, Image(1, 1, 3, 1.0)};
  EXPECT_EQ(composite_loss(LossWeights{0.0, 0.0, 0.0}, LossParts{}).value, 0.0);
  const CompositeLoss l = composite_loss(LossWeights{0.0, 2.5, 0.0}, parts);
  EXPECT_NEAR(l.value, 0.5, 1e-15);
  EXPECT_EQ(l.d_rgb->data[2], 2.5);
}

TEST(Composite, MissingPartOrNegativeWeightThrows) {
  LossParts parts;
  parts.rgb = ImageLoss{0.2, Image(1, 1, 3)};
  EXPECT_THROW(composite_loss(LossWeights{1.0, 1.0, 0.0}, parts), std::invalid_argument);
  EXPECT_THROW(composite_loss(LossWeights{0.0, -1.0, 0.0}, parts), std::invalid_argument);
}
