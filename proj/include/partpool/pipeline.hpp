#ifndef PARTPOOL_PIPELINE_HPP_
#define PARTPOOL_PIPELINE_HPP_

#include <functional>
#include <vector>

#include "partpool/config.hpp"
#include "partpool/heads.hpp"
#include "partpool/metrics.hpp"
#include "partpool/model.hpp"
#include "partpool/scene.hpp"

namespace partpool {

/// Inverse of decode_box_unclamped: deltas that move `region` onto `target`.
BoxDelta encode_box(const Rect& region, const Rect& target);

// Pixel <-> feature-map coordinates.
Region to_map_region(const Rect& pixel_box, int downsample, int image_id = 0);
Rect to_pixels(const Rect& map_box, int downsample);

/// Builds the model of a config and initializes it from the config's "init" stream.
Model initial_model(const Config& config);

struct StepResult {
  double loss = 0.0;  // mean over the regions used
  double classification = 0.0;
  double localization = 0.0;  // weighted, mean over all regions
  int regions = 0;
  int skipped = 0;  // regions too small for a k x k grid after clamping
};

/// Forward + backward for one mini-batch of regions from one scene.
/// Accumulates gradients into model (callers zero them); the loss is the
/// mean multitask loss over the regions.
StepResult image_step(Model& model, const Config& config, const SyntheticScene& scene,
                      const std::vector<LabeledRegion>& regions);

/// Draws fg/bg regions from the proposals following the configured fraction.
std::vector<LabeledRegion> sample_minibatch(const std::vector<LabeledRegion>& proposals,
                                            const Config& config, Rng& rng);

struct Sgd {
  double learning_rate;
  double momentum;
  double weight_decay;
  std::vector<std::vector<double>> velocity;

  void step(Model& model);
};

struct TrainResult {
  Model model;
  std::vector<double> loss_trace;
  std::vector<double> classification_trace;
  std::vector<double> localization_trace;
};

using IterationCallback = std::function<void(int iteration, double loss)>;

TrainResult train(const Config& config, const IterationCallback& on_iteration = {});

struct EvalResult {
  EvalReport report;
  std::vector<Detection> detections;  // pixel coordinates, after NMS
  std::vector<GroundTruthBox> ground_truth;
};

// Detections for one scene before NMS.
std::vector<Detection> detect(const Model& model, const Config& config, const SyntheticScene& scene,
                              const std::vector<LabeledRegion>& proposals, int image_id);

EvalResult evaluate(const Model& model, const Config& config);

// Seeds of the named sub-streams.
uint64_t train_scene_seed(const Config& config, int index);
uint64_t eval_scene_seed(const Config& config, int index);

}  // namespace partpool

#endif  // PARTPOOL_PIPELINE_HPP_
