#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "oracle.hpp"
#include "partpool/rng.hpp"
#include "partpool/tensor.hpp"

using namespace partpool;

namespace {

Grid2D random_grid2d(Rng& rng, int h, int w) {
  Grid2D g(h, w);
  for (double& v : g.values()) v = uniform(rng, -1.0, 1.0);
  return g;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST(AvgPoolRect, ConstantMapGivesConstant) {
  Rng rng(3);
  const Grid2D map(6, 9, 1.75);
  for (int i = 0; i < 200; ++i) {
    const double x0 = uniform(rng, -2.0, 8.0), y0 = uniform(rng, -2.0, 5.0);
    const Rect r{x0, y0, x0 + uniform(rng, 0.6, 6.0), y0 + uniform(rng, 0.6, 6.0)};
    if (covered_cells(r, 6, 9).empty()) continue;
    EXPECT_EQ(avg_pool_rect(map, r), 1.75);
  }
}

TEST(AvgPoolRect, TwoByTwoFullRect) {
  const Grid2D map(2, 2, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(avg_pool_rect(map, Rect{0, 0, 2, 2}), 2.5);
}

TEST(AvgPoolRect, RectOutsideMapThrows) {
  const Grid2D map(4, 4, 1.0);
  EXPECT_THROW(avg_pool_rect(map, Rect{5, 5, 8, 8}), EmptyRect);
  EXPECT_THROW(avg_pool_rect(map, Rect{-3, 0, -1, 2}), EmptyRect);
}

TEST(AvgPoolRect, CellCenterMembership) {
  const Grid2D map(1, 4, {1, 2, 3, 4});
  // Centers at 0.5, 1.5, 2.5, 3.5; [0.5, 2.5) holds the first two.
  EXPECT_DOUBLE_EQ(avg_pool_rect(map, Rect{0.5, 0, 2.5, 1}), 1.5);
  EXPECT_DOUBLE_EQ(avg_pool_rect(map, Rect{0.51, 0, 2.51, 1}), 2.5);
}

TEST(AvgPoolRect, MatchesBruteForceScan) {
  Rng rng(11);
  const Grid2D map = random_grid2d(rng, 7, 10);
  for (int i = 0; i < 300; ++i) {
    const double x0 = uniform(rng, -3.0, 10.0), y0 = uniform(rng, -3.0, 7.0);
    const Rect r{x0, y0, x0 + uniform(rng, 0.2, 8.0), y0 + uniform(rng, 0.2, 8.0)};
    const double expect = oracle::brute_average(map, r);
    if (std::isnan(expect)) {
      EXPECT_THROW(avg_pool_rect(map, r), EmptyRect);
    } else {
      EXPECT_NEAR(avg_pool_rect(map, r), expect, 1e-14);
    }
  }
}

TEST(AvgPoolRectBackward, UniformAdjoint) {
  Grid2D grad(4, 4, 0.0);
  avg_pool_rect_backward(Rect{0, 0, 2, 2}, 1.0, grad);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) EXPECT_DOUBLE_EQ(grad.at(y, x), (x < 2 && y < 2) ? 0.25 : 0.0);
}

TEST(AvgPoolRectBackward, ZeroUpstreamLeavesGradient) {
  Grid2D grad(3, 3, 0.5);
  avg_pool_rect_backward(Rect{0, 0, 3, 3}, 0.0, grad);
  for (double v : grad.values()) EXPECT_EQ(v, 0.5);
}

TEST(AvgPoolRectBackward, ThreeCellRect) {
  Grid2D grad(2, 5, 0.0);
  avg_pool_rect_backward(Rect{1, 0, 4, 1}, 0.6, grad);
  for (int x = 0; x < 5; ++x) EXPECT_NEAR(grad.at(0, x), (x >= 1 && x < 4) ? 0.2 : 0.0, 1e-15);
  for (int x = 0; x < 5; ++x) EXPECT_EQ(grad.at(1, x), 0.0);
}

TEST(AvgPoolRectBackward, FirstOrderTaylor) {
  Rng rng(5);
  const Grid2D map = random_grid2d(rng, 6, 6);
  const Grid2D dir = random_grid2d(rng, 6, 6);
  const Rect r{0.7, 1.2, 4.9, 5.3};
  Grid2D grad(6, 6, 0.0);
  avg_pool_rect_backward(r, 1.0, grad);
  double predicted_slope = 0.0;
  for (int i = 0; i < map.size(); ++i) predicted_slope += grad.values()[i] * dir.values()[i];
  for (double h : {1e-2, 1e-3}) {
    Grid2D moved = map;
    for (int i = 0; i < map.size(); ++i) moved.values()[i] += h * dir.values()[i];
    const double change = avg_pool_rect(moved, r) - avg_pool_rect(map, r);
    EXPECT_NEAR(change, h * predicted_slope, 10 * h * h);
  }
}

TEST(SummedArea, MatchesDirectSums) {
  Rng rng(8);
  const Grid2D map = random_grid2d(rng, 9, 7);
  const SummedArea sat(map);
  for (int i = 0; i < 200; ++i) {
    const double x0 = uniform(rng, -1.0, 7.0), y0 = uniform(rng, -1.0, 9.0);
    const Rect r{x0, y0, x0 + uniform(rng, 0.5, 5.0), y0 + uniform(rng, 0.5, 5.0)};
    const CellRange cells = covered_cells(r, 9, 7);
    if (cells.empty()) {
      EXPECT_THROW(sat.average(cells), EmptyRect);
      continue;
    }
    EXPECT_NEAR(sat.average(cells), avg_pool_rect(map, r), 1e-13);
  }
}

TEST(L2NormalizeBlock, ThreeFour) {
  const std::vector<double> v{3.0, 4.0};
  const auto out = l2_normalize_block(v);
  EXPECT_NEAR(out[0], 0.6, 1e-12);
  EXPECT_NEAR(out[1], 0.8, 1e-12);
}

TEST(L2NormalizeBlock, UnitVectorUnchanged) {
  const std::vector<double> v{0.0, 1.0, 0.0, 0.0};
  const auto out = l2_normalize_block(v);
  for (size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out[i], v[i], 1e-12);
}

TEST(L2NormalizeBlock, ZeroBlockStaysZero) {
  const std::vector<double> v(5, 0.0);
  for (double x : l2_normalize_block(v)) EXPECT_EQ(x, 0.0);
}

TEST(L2NormalizeBlockBackward, ZeroUpstream) {
  const std::vector<double> v{0.3, -1.2, 2.0};
  const std::vector<double> up(3, 0.0);
  for (double g : l2_normalize_block_backward(v, up)) EXPECT_EQ(g, 0.0);
}

TEST(L2NormalizeBlockProperty, NormWithinBounds) {
  Rng rng(21);
  for (int i = 0; i < 2000; ++i) {
    const int n = uniform_int(rng, 2, 8);
    const double scale = std::pow(10.0, uniform(rng, -2.0, 3.0));
    std::vector<double> v(n);
    for (double& x : v) x = scale * uniform(rng, -1.0, 1.0);
    if (norm2(v) < 1e-2) continue;
    const double n_out = norm2(l2_normalize_block(v));
    EXPECT_GE(n_out, 1.0 - 1e-6);
    EXPECT_LE(n_out, 1.0 + 1e-15);
  }
}

TEST(L2NormalizeBlockProperty, BackwardMatchesFiniteDifferences) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(4), up(4);
    for (double& x : v) x = uniform(rng, -2.0, 2.0);
    for (double& x : up) x = uniform(rng, -1.0, 1.0);
    const auto f = [&](std::span<const double> p) {
      const auto out = l2_normalize_block(p);
      return std::inner_product(out.begin(), out.end(), up.begin(), 0.0);
    };
    EXPECT_LT(max_relative_error(l2_normalize_block_backward(v, up), finite_diff_gradient(f, v)), 1e-6);
  }
}

TEST(Affine, ZeroWeightUnitBias) {
  AffineParams p(3, 4);
  std::fill(p.weight.begin(), p.weight.end(), 0.0);
  std::fill(p.bias.begin(), p.bias.end(), 1.0);
  const std::vector<double> x{5.0, -3.0, 0.25};
  for (double y : affine_forward(p, x)) EXPECT_EQ(y, 1.0);
}

TEST(Affine, IdentityWeight) {
  AffineParams p(3, 3);
  std::fill(p.weight.begin(), p.weight.end(), 0.0);
  std::fill(p.bias.begin(), p.bias.end(), 0.0);
  for (int i = 0; i < 3; ++i) p.w(i, i) = 1.0;
  const std::vector<double> x{1.5, -2.0, 7.0};
  EXPECT_EQ(affine_forward(p, x), x);
}

TEST(Affine, TwoByTwoHandCase) {
  AffineParams p(2, 2);
  p.weight = {1, 2, 3, 4};
  p.bias = {0, 0};
  const std::vector<double> x{1, 1};
  EXPECT_EQ(affine_forward(p, x), (std::vector<double>{3, 7}));
}

TEST(AffineProperty, BackwardAgreesWithFiniteDifferences) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    AffineParams p(5, 3);
    for (double& w : p.weight) w = uniform(rng, -1.0, 1.0);
    for (double& b : p.bias) b = uniform(rng, -1.0, 1.0);
    std::vector<double> x(5), up(3);
    for (double& v : x) v = uniform(rng, -1.0, 1.0);
    for (double& v : up) v = uniform(rng, -1.0, 1.0);
    const auto loss_x = [&](std::span<const double> in) {
      const auto y = affine_forward(p, in);
      return std::inner_product(y.begin(), y.end(), up.begin(), 0.0);
    };
    p.zero_grad();
    const auto gx = affine_backward(p, x, up);
    EXPECT_LT(max_relative_error(gx, finite_diff_gradient(loss_x, x)), 1e-6);

    const std::vector<double> w0 = p.weight;
    const auto loss_w = [&](std::span<const double> w) {
      AffineParams q = p;
      std::copy(w.begin(), w.end(), q.weight.begin());
      const auto y = affine_forward(q, x);
      return std::inner_product(y.begin(), y.end(), up.begin(), 0.0);
    };
    EXPECT_LT(max_relative_error(p.grad_weight, finite_diff_gradient(loss_w, w0)), 1e-6);
  }
}

TEST(Affine, GradientsAccumulateUntilZeroed) {
  AffineParams p(2, 1);
  p.weight = {1, 1};
  p.bias = {0};
  p.zero_grad();
  const std::vector<double> x{2, 3}, up{1};
  affine_backward(p, x, up);
  affine_backward(p, x, up);
  EXPECT_EQ(p.grad_weight, (std::vector<double>{4, 6}));
  EXPECT_EQ(p.grad_bias, (std::vector<double>{2}));
  p.zero_grad();
  EXPECT_EQ(p.grad_weight, (std::vector<double>{0, 0}));
}

TEST(Softmax, UniformLogits) {
  const std::vector<double> l(4, 2.5);
  for (double p : softmax(l)) EXPECT_NEAR(p, 0.25, 1e-15);
}

TEST(SoftmaxProperty, SumsToOneInOpenInterval) {
  Rng rng(41);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> l(uniform_int(rng, 2, 7));
    for (double& v : l) v = uniform(rng, -20.0, 20.0);
    const auto p = softmax(l);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    for (double x : p) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
  }
}

TEST(CrossEntropy, CertainCorrectIsZero) {
  const std::vector<double> p{0.0, 1.0, 0.0};
  EXPECT_EQ(cross_entropy_loss(p, 1), 0.0);
}

TEST(SmoothL1, Branches) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1_grad(0.5), 0.5);
  EXPECT_DOUBLE_EQ(smooth_l1_grad(-2.0), -1.0);
}

TEST(FiniteDiff, SquareAtThree) {
  const std::vector<double> x{3.0};
  const auto g = finite_diff_gradient([](std::span<const double> p) { return p[0] * p[0]; }, x, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDiff, ConstantFunction) {
  const std::vector<double> x{1.0, -2.0, 4.0};
  for (double g : finite_diff_gradient([](std::span<const double>) { return 3.0; }, x)) EXPECT_EQ(g, 0.0);
}

TEST(RelativeError, FloorAppliesNearZero) {
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-6);
}
