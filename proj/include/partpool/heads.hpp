#ifndef PARTPOOL_HEADS_HPP_
#define PARTPOOL_HEADS_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "partpool/dp_pool.hpp"
#include "partpool/tensor.hpp"

namespace partpool {

/// Box regression targets (tx, ty, tw, th); tw and th are log-size ratios.
using BoxDelta = std::array<double, 4>;

/// Two affine layers (2k^2 -> hidden -> 4) with a ReLU between them, shared
/// across all foreground classes.
struct RefineParams {
  RefineParams() = default;
  RefineParams(int num_parts, int hidden);

  AffineParams layer1;
  AffineParams layer2;

  // layer2 weights 0 and bias 1 so the multiplier starts at exactly 1;
  // layer1 uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  void init_identity(uint64_t seed);
  void zero_grad();
};

// logits[c] = mean over parts of p[part][c]; returns softmax(logits).
std::vector<double> classify(const PooledScores& pooled);
std::vector<double> classify_logits(const PooledScores& pooled);
// Gradient on pooled scores given a gradient on the logits.
std::vector<double> classify_backward(const PooledScores& pooled, std::span<const double> grad_logits);

// Per foreground class, the mean over parts of the pooled loc values. Index c - 1.
std::vector<BoxDelta> localize_base(const PooledLoc& pooled_loc);
std::vector<double> localize_base_backward(const PooledLoc& pooled_loc,
                                           std::span<const BoxDelta> grad_base);

/// Intermediate values of one refinement call, kept for the backward pass.
struct RefineTrace {
  std::vector<double> field;
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  BoxDelta multiplier{};
  BoxDelta base{};
};

BoxDelta refine_localization(const RefineParams& params, std::span<const double> field,
                             const BoxDelta& base, RefineTrace* trace = nullptr);

struct RefineGrads {
  std::vector<double> field;
  BoxDelta base{};
};

// Accumulates into params' gradient buffers.
RefineGrads refine_localization_backward(RefineParams& params, const RefineTrace& trace,
                                         const BoxDelta& upstream);

/// center += (tx * W, ty * H); size *= (exp(tw), exp(th)); clamped to
/// [0, image_width] x [0, image_height]. Throws NonFinite on overflow.
Rect decode_box(const Rect& region, const BoxDelta& delta, double image_width, double image_height);
// Unclamped form, the exact inverse of encode_box.
Rect decode_box_unclamped(const Rect& region, const BoxDelta& delta);

struct LossTerms {
  double classification = 0.0;
  double localization = 0.0;  // smooth L1 summed over the 4 coordinates
  double total = 0.0;
};

/// cross_entropy + weight * smooth_l1 on the true class's deltas; the loc term
/// is only present for foreground labels.
LossTerms multitask_loss(std::span<const double> probs, int label, std::span<const BoxDelta> deltas,
                         const BoxDelta& target, double weight);

struct LossGrads {
  std::vector<double> logits;        // through the softmax
  std::vector<BoxDelta> deltas;      // index c - 1, nonzero only for the label
};

LossGrads multitask_loss_backward(std::span<const double> probs, int label,
                                  std::span<const BoxDelta> deltas, const BoxDelta& target,
                                  double weight);

}  // namespace partpool

#endif  // PARTPOOL_HEADS_HPP_
