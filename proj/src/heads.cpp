#include "partpool/heads.hpp"

#include <algorithm>
#include <cmath>

#include "partpool/rng.hpp"

namespace partpool {

RefineParams::RefineParams(int num_parts, int hidden)
    : layer1(2 * num_parts, hidden), layer2(hidden, 4) {}

void RefineParams::init_identity(uint64_t seed) {
  Rng rng(seed);
  const double s = 1.0 / std::sqrt(static_cast<double>(layer1.in_dim));
  for (double& w : layer1.weight) w = uniform(rng, -s, s);
  for (double& b : layer1.bias) b = uniform(rng, -s, s);
  std::fill(layer2.weight.begin(), layer2.weight.end(), 0.0);
  std::fill(layer2.bias.begin(), layer2.bias.end(), 1.0);
}

void RefineParams::zero_grad() {
  layer1.zero_grad();
  layer2.zero_grad();
}

std::vector<double> classify_logits(const PooledScores& pooled) {
  std::vector<double> logits(pooled.num_classes + 1, 0.0);
  for (int part = 0; part < pooled.num_parts; ++part)
    for (int c = 0; c <= pooled.num_classes; ++c) logits[c] += pooled.value(part, c);
  for (double& l : logits) l /= pooled.num_parts;
  return logits;
}

std::vector<double> classify(const PooledScores& pooled) { return softmax(classify_logits(pooled)); }

std::vector<double> classify_backward(const PooledScores& pooled, std::span<const double> grad_logits) {
  if (grad_logits.size() != static_cast<size_t>(pooled.num_classes + 1))
    throw DimensionMismatch("classify_backward: logits gradient size");
  std::vector<double> grad(pooled.values.size());
  for (int part = 0; part < pooled.num_parts; ++part)
    for (int c = 0; c <= pooled.num_classes; ++c)
      grad[pooled.index(part, c)] = grad_logits[c] / pooled.num_parts;
  return grad;
}

std::vector<BoxDelta> localize_base(const PooledLoc& loc) {
  std::vector<BoxDelta> out(loc.num_classes, BoxDelta{});
  for (int part = 0; part < loc.num_parts; ++part)
    for (int c = 1; c <= loc.num_classes; ++c)
      for (int t = 0; t < 4; ++t) out[c - 1][t] += loc.value(part, c, t);
  for (BoxDelta& d : out)
    for (double& v : d) v /= loc.num_parts;
  return out;
}

std::vector<double> localize_base_backward(const PooledLoc& loc, std::span<const BoxDelta> grad_base) {
  if (grad_base.size() != static_cast<size_t>(loc.num_classes))
    throw DimensionMismatch("localize_base_backward: one delta gradient per class required");
  std::vector<double> grad(loc.values.size());
  for (int part = 0; part < loc.num_parts; ++part)
    for (int c = 1; c <= loc.num_classes; ++c)
      for (int t = 0; t < 4; ++t) grad[loc.index(part, c, t)] = grad_base[c - 1][t] / loc.num_parts;
  return grad;
}

BoxDelta refine_localization(const RefineParams& params, std::span<const double> field,
                             const BoxDelta& base, RefineTrace* trace) {
  if (field.size() != static_cast<size_t>(params.layer1.in_dim))
    throw DimensionMismatch("refine_localization: field length differs from 2k^2");
  std::vector<double> pre = affine_forward(params.layer1, field);
  std::vector<double> hidden = relu(pre);
  const std::vector<double> mult = affine_forward(params.layer2, hidden);
  BoxDelta out;
  for (int t = 0; t < 4; ++t) out[t] = base[t] * mult[t];
  if (trace != nullptr) {
    trace->field.assign(field.begin(), field.end());
    trace->hidden_pre = std::move(pre);
    trace->hidden = std::move(hidden);
    for (int t = 0; t < 4; ++t) trace->multiplier[t] = mult[t];
    trace->base = base;
  }
  return out;
}

RefineGrads refine_localization_backward(RefineParams& params, const RefineTrace& trace,
                                         const BoxDelta& upstream) {
  RefineGrads g;
  std::vector<double> grad_mult(4);
  for (int t = 0; t < 4; ++t) {
    g.base[t] = upstream[t] * trace.multiplier[t];
    grad_mult[t] = upstream[t] * trace.base[t];
  }
  const std::vector<double> grad_hidden = affine_backward(params.layer2, trace.hidden, grad_mult);
  const std::vector<double> grad_pre = relu_backward(trace.hidden_pre, grad_hidden);
  g.field = affine_backward(params.layer1, trace.field, grad_pre);
  return g;
}

Rect decode_box_unclamped(const Rect& r, const BoxDelta& d) {
  const double w = r.width();
  const double h = r.height();
  const double cx = r.center_x() + d[0] * w;
  const double cy = r.center_y() + d[1] * h;
  const double nw = w * std::exp(d[2]);
  const double nh = h * std::exp(d[3]);
  const Rect out{cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
  if (!std::isfinite(out.x0) || !std::isfinite(out.y0) || !std::isfinite(out.x1) ||
      !std::isfinite(out.y1))
    throw NonFinite("decode_box: non-finite box");
  return out;
}

Rect decode_box(const Rect& region, const BoxDelta& delta, double image_width, double image_height) {
  return decode_box_unclamped(region, delta).clamped(image_width, image_height);
}

LossTerms multitask_loss(std::span<const double> probs, int label, std::span<const BoxDelta> deltas,
                         const BoxDelta& target, double weight) {
  if (label < 0 || static_cast<size_t>(label) >= probs.size())
    throw DimensionMismatch("multitask_loss: label out of range");
  LossTerms l;
  l.classification = cross_entropy_loss(probs, label);
  if (label > 0) {
    if (deltas.size() + 1 != probs.size())
      throw DimensionMismatch("multitask_loss: one delta per foreground class required");
    l.localization = smooth_l1_loss(deltas[label - 1], target);
  }
  l.total = l.classification + weight * l.localization;
  return l;
}

LossGrads multitask_loss_backward(std::span<const double> probs, int label,
                                  std::span<const BoxDelta> deltas, const BoxDelta& target,
                                  double weight) {
  if (label < 0 || static_cast<size_t>(label) >= probs.size())
    throw DimensionMismatch("multitask_loss_backward: label out of range");
  LossGrads g;
  // d CE / d logits = p - onehot
  g.logits.assign(probs.begin(), probs.end());
  g.logits[label] -= 1.0;
  g.deltas.assign(probs.size() - 1, BoxDelta{});
  if (label > 0) {
    if (deltas.size() + 1 != probs.size())
      throw DimensionMismatch("multitask_loss_backward: one delta per foreground class required");
    const std::vector<double> gl = smooth_l1_loss_backward(deltas[label - 1], target);
    for (int t = 0; t < 4; ++t) g.deltas[label - 1][t] = weight * gl[t];
  }
  return g;
}

}  // namespace partpool
