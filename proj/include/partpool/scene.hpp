#ifndef PARTPOOL_SCENE_HPP_
#define PARTPOOL_SCENE_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "partpool/backbone.hpp"
#include "partpool/config.hpp"
#include "partpool/rng.hpp"
#include "partpool/tensor.hpp"

namespace partpool {

// Channels of the rendered input.
inline constexpr int kBodyChannel = 0;
inline constexpr int kPartAChannel = 1;
inline constexpr int kPartBChannel = 2;

/// Canonical layout of one synthetic class: part anchors in root-box
/// coordinates ([0,1]^2) and their appearance channel.
struct PartAnchor {
  double u = 0.5;
  double v = 0.5;
  int channel = kPartAChannel;
};

struct ClassTemplate {
  std::vector<PartAnchor> parts;
};

// Number of distinct class layouts the generator knows about.
int max_synthetic_classes();
const ClassTemplate& class_template(int cls);  // cls in 1..max_synthetic_classes()

struct GroundTruth {
  int cls = 0;
  Rect box;   // tight box around body and parts, pixels
  Rect root;  // body rectangle, pixels
  std::vector<std::array<double, 2>> part_offsets;  // articulation, pixels
  std::vector<std::array<double, 2>> part_centers;  // rendered blob centers, pixels
  double part_radius = 0.0;
};

struct SyntheticScene {
  uint64_t seed = 0;
  Tensor3 image;
  std::vector<GroundTruth> objects;
};

/// Renders each object as a body rectangle plus class-specific part blobs
/// displaced by sampled articulation offsets, on a noisy background with
/// distractor blobs. Deterministic in (seed, config).
SyntheticScene gen_scene(uint64_t seed, const Config& config);

/// A proposal in pixel coordinates with its assigned training label.
struct LabeledRegion {
  Rect box;
  int label = 0;  // 0 = background
  int gt_index = -1;
  double iou = 0.0;
};

/// per_object tight and loose_per_object wide jitters around every
/// ground-truth box plus uniform background boxes. Labels by IoU >= 0.5.
std::vector<LabeledRegion> jitter_proposals(const SyntheticScene& scene, const ProposalConfig& proposals,
                                            uint64_t seed, const Config& config);

// Center/size jitter of one box: center += sigma * size * N(0,1),
// size *= exp(sigma * N(0,1)).
Rect jitter_box(const Rect& box, double sigma, Rng& rng);

void assign_labels(std::vector<LabeledRegion>& regions, const std::vector<GroundTruth>& objects);

}  // namespace partpool

#endif  // PARTPOOL_SCENE_HPP_
