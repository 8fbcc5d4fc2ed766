#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "partpool/heads.hpp"
#include "partpool/pipeline.hpp"
#include "partpool/rng.hpp"

using namespace partpool;

namespace {

PooledScores scores_from(int parts, int classes, std::vector<double> values) {
  PooledScores s(parts, classes);
  s.values = std::move(values);
  return s;
}

std::vector<double> random_field(Rng& rng, int n) {
  std::vector<double> f(n);
  for (double& v : f) v = uniform(rng, -1.0, 1.0);
  return f;
}

}  // namespace

TEST(Classify, EqualScoresGiveUniform) {
  const PooledScores s = scores_from(4, 2, std::vector<double>(12, 0.3));
  for (double p : classify(s)) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
}

TEST(Classify, RaisedClassWins) {
  PooledScores s = scores_from(4, 2, std::vector<double>(12, 0.1));
  for (int part = 0; part < 4; ++part) s.values[s.index(part, 2)] += 0.05;
  const auto p = classify(s);
  EXPECT_GT(p[2], p[0]);
  EXPECT_GT(p[2], p[1]);
}

TEST(Classify, HandCaseKTwo) {
  const PooledScores s = scores_from(4, 1, {1, 0, 1, 0, 1, 0, 1, 0});
  const auto logits = classify_logits(s);
  EXPECT_DOUBLE_EQ(logits[0], 1.0);
  EXPECT_DOUBLE_EQ(logits[1], 0.0);
  const auto p = classify(s);
  const double e = std::exp(1.0);
  EXPECT_NEAR(p[0], e / (e + 1), 1e-15);
  EXPECT_NEAR(p[1], 1 / (e + 1), 1e-15);
}

TEST(ClassifyProperty, SumsToOneAndIsShiftInvariant) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int parts = uniform_int(rng, 1, 9), C = uniform_int(rng, 1, 4);
    PooledScores s = scores_from(parts, C, random_field(rng, parts * (C + 1)));
    const auto p = classify(s);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    const double shift = uniform(rng, -3.0, 3.0);
    for (double& v : s.values) v += shift;
    const auto q = classify(s);
    EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), std::max_element(q.begin(), q.end()) - q.begin());
  }
}

TEST(LocalizeBase, ConstantAndZero) {
  PooledLoc loc{3, 2, std::vector<double>(3 * 2 * 4, 0.7)};
  for (const BoxDelta& d : localize_base(loc))
    for (double v : d) EXPECT_NEAR(v, 0.7, 1e-15);
  loc.values.assign(loc.values.size(), 0.0);
  for (const BoxDelta& d : localize_base(loc))
    for (double v : d) EXPECT_EQ(v, 0.0);
}

TEST(LocalizeBase, MeanOfTwoParts) {
  PooledLoc loc{2, 1, std::vector<double>(8, 0.0)};
  loc.values[loc.index(0, 1, 0)] = 0.1;
  loc.values[loc.index(1, 1, 0)] = 0.3;
  EXPECT_NEAR(localize_base(loc)[0][0], 0.2, 1e-15);
}

TEST(Refine, IdentityInitReturnsBase) {
  Rng rng(2);
  RefineParams p(9, 16);
  p.init_identity(3);
  const BoxDelta base{0.3, -0.2, 0.05, 1.5};
  for (int trial = 0; trial < 50; ++trial) EXPECT_EQ(refine_localization(p, random_field(rng, 18), base), base);
}

TEST(Refine, ZeroFieldGivesLayerTwoBias) {
  RefineParams p(4, 3);
  p.init_identity(4);
  std::fill(p.layer1.bias.begin(), p.layer1.bias.end(), 0.0);
  for (double& w : p.layer2.weight) w = 0.9;
  p.layer2.bias = {2.0, 3.0, -1.0, 0.5};
  RefineTrace trace;
  refine_localization(p, std::vector<double>(8, 0.0), BoxDelta{1, 1, 1, 1}, &trace);
  EXPECT_EQ(trace.multiplier, (BoxDelta{2.0, 3.0, -1.0, 0.5}));
}

TEST(Refine, HandCaseMultiplierOnePointFour) {
  RefineParams p(4, 1);
  std::fill(p.layer1.weight.begin(), p.layer1.weight.end(), 1.0);
  p.layer1.bias = {0.0};
  std::fill(p.layer2.weight.begin(), p.layer2.weight.end(), 0.5);
  p.layer2.bias = {1.0, 1.0, 1.0, 1.0};
  RefineTrace trace;
  const BoxDelta out = refine_localization(p, std::vector<double>(8, 0.1), BoxDelta{1, 2, 3, 4}, &trace);
  for (int t = 0; t < 4; ++t) {
    EXPECT_NEAR(trace.multiplier[t], 1.4, 1e-15);
    EXPECT_NEAR(out[t], 1.4 * (t + 1), 1e-14);
  }
}

TEST(Refine, FieldLengthChecked) {
  RefineParams p(4, 2);
  p.init_identity(1);
  EXPECT_THROW(refine_localization(p, std::vector<double>(7, 0.0), BoxDelta{}), DimensionMismatch);
}

TEST(RefineProperty, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  RefineParams p(4, 6);
  p.init_identity(6);
  for (double& w : p.layer2.weight) w = uniform(rng, -0.5, 0.5);
  const std::vector<double> field = random_field(rng, 8);
  const BoxDelta base{0.4, -0.3, 0.2, 0.1};
  const BoxDelta up{1.0, -0.5, 0.25, 2.0};
  const auto loss = [&](std::span<const double> f) {
    const BoxDelta o = refine_localization(p, f, base);
    double s = 0;
    for (int t = 0; t < 4; ++t) s += o[t] * up[t];
    return s;
  };
  RefineTrace trace;
  refine_localization(p, field, base, &trace);
  for (double h : trace.hidden_pre) ASSERT_GT(std::abs(h), 1e-3);
  p.zero_grad();
  const RefineGrads g = refine_localization_backward(p, trace, up);
  EXPECT_LT(max_relative_error(g.field, finite_diff_gradient(loss, field)), 1e-6);
  for (int t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(g.base[t], up[t] * trace.multiplier[t]);
}

TEST(DecodeBox, ZeroDeltaUnchanged) {
  const Rect r{3, 4, 13, 10};
  EXPECT_EQ(decode_box(r, BoxDelta{}, 64, 64), r);
}

TEST(DecodeBox, LogTwoDoublesWidth) {
  const Rect b = decode_box(Rect{10, 10, 20, 20}, BoxDelta{0, 0, std::log(2.0), 0}, 64, 64);
  EXPECT_NEAR(b.width(), 20.0, 1e-12);
  EXPECT_NEAR(b.center_x(), 15.0, 1e-12);
}

TEST(DecodeBox, HalfWidthShift) {
  const Rect b = decode_box(Rect{0, 0, 10, 10}, BoxDelta{0.5, 0, 0, 0}, 64, 64);
  EXPECT_NEAR(b.center_x(), 10.0, 1e-12);
}

TEST(DecodeBox, ClampsToImage) {
  const Rect b = decode_box(Rect{50, 50, 60, 60}, BoxDelta{1.0, 1.0, 0, 0}, 64, 64);
  EXPECT_LE(b.x1, 64.0);
  EXPECT_LE(b.y1, 64.0);
}

TEST(DecodeBoxProperty, RoundTripWithEncoder) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    const double x0 = uniform(rng, -5, 50), y0 = uniform(rng, -5, 50);
    const Rect region{x0, y0, x0 + uniform(rng, 1, 30), y0 + uniform(rng, 1, 30)};
    const double a0 = uniform(rng, -5, 50), b0 = uniform(rng, -5, 50);
    const Rect target{a0, b0, a0 + uniform(rng, 1, 30), b0 + uniform(rng, 1, 30)};
    const Rect back = decode_box_unclamped(region, encode_box(region, target));
    EXPECT_NEAR(back.x0, target.x0, 1e-9);
    EXPECT_NEAR(back.y0, target.y0, 1e-9);
    EXPECT_NEAR(back.x1, target.x1, 1e-9);
    EXPECT_NEAR(back.y1, target.y1, 1e-9);
  }
}

TEST(MultitaskLoss, PerfectBackgroundIsZero) {
  const std::vector<double> probs{1.0, 0.0, 0.0};
  const std::vector<BoxDelta> deltas{BoxDelta{5, 5, 5, 5}, BoxDelta{}};
  const LossTerms l = multitask_loss(probs, 0, deltas, BoxDelta{}, 7.0);
  EXPECT_EQ(l.total, 0.0);
  EXPECT_EQ(l.localization, 0.0);
}

TEST(MultitaskLoss, LinearCombination) {
  const double p1 = std::exp(-0.2);
  const std::vector<double> probs{(1 - p1) / 2, p1, (1 - p1) / 2};
  const BoxDelta target{0.1, 0.2, 0.3, 0.4};
  BoxDelta pred = target;
  pred[2] += std::sqrt(0.2);  // smooth L1 = 0.5 * 0.2
  const std::vector<BoxDelta> deltas{pred, BoxDelta{9, 9, 9, 9}};
  const LossTerms l = multitask_loss(probs, 1, deltas, target, 7.0);
  EXPECT_NEAR(l.classification, 0.2, 1e-12);
  EXPECT_NEAR(l.localization, 0.1, 1e-12);
  EXPECT_NEAR(l.total, 0.9, 1e-12);
}

TEST(MultitaskLossProperty, NonNegativeAndZeroOnlyWhenExact) {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    const int C = uniform_int(rng, 1, 4);
    std::vector<double> logits(C + 1);
    for (double& l : logits) l = uniform(rng, -3, 3);
    const auto probs = softmax(logits);
    std::vector<BoxDelta> deltas(C);
    for (BoxDelta& d : deltas)
      for (double& v : d) v = uniform(rng, -1, 1);
    BoxDelta target;
    for (double& v : target) v = uniform(rng, -1, 1);
    const int label = uniform_int(rng, 0, C);
    EXPECT_GT(multitask_loss(probs, label, deltas, target, 7.0).total, 0.0);
  }
  std::vector<double> certain(3, 0.0);
  certain[2] = 1.0;
  const BoxDelta t{0.1, -0.1, 0.2, 0.0};
  EXPECT_EQ(multitask_loss(certain, 2, std::vector<BoxDelta>{BoxDelta{}, t}, t, 7.0).total, 0.0);
}

TEST(MultitaskLossProperty, BackwardMatchesFiniteDifferences) {
  Rng rng(9);
  const int C = 3;
  std::vector<double> logits(C + 1);
  for (double& l : logits) l = uniform(rng, -2, 2);
  std::vector<BoxDelta> deltas(C);
  for (BoxDelta& d : deltas)
    for (double& v : d) v = uniform(rng, -2, 2);
  const BoxDelta target{0.5, -0.5, 0.1, 2.5};
  const int label = 2;
  const auto probs = softmax(logits);
  const LossGrads g = multitask_loss_backward(probs, label, deltas, target, 7.0);
  const auto f_logits = [&](std::span<const double> l) {
    return multitask_loss(softmax(l), label, deltas, target, 7.0).total;
  };
  EXPECT_LT(max_relative_error(g.logits, finite_diff_gradient(f_logits, logits)), 1e-6);
  std::vector<double> flat;
  for (const BoxDelta& d : deltas) flat.insert(flat.end(), d.begin(), d.end());
  const auto f_deltas = [&](std::span<const double> x) {
    std::vector<BoxDelta> d(C);
    for (int i = 0; i < 4 * C; ++i) d[i / 4][i % 4] = x[i];
    return multitask_loss(probs, label, d, target, 7.0).total;
  };
  std::vector<double> analytic;
  for (const BoxDelta& d : g.deltas) analytic.insert(analytic.end(), d.begin(), d.end());
  EXPECT_LT(max_relative_error(analytic, finite_diff_gradient(f_deltas, flat)), 1e-6);
}
