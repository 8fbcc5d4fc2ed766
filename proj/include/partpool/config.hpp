#ifndef PARTPOOL_CONFIG_HPP_
#define PARTPOOL_CONFIG_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "partpool/dp_pool.hpp"

namespace partpool {

inline constexpr int kConfigSchemaVersion = 1;

struct SceneConfig {
  int height = 64;
  int width = 64;
  int channels = 3;
  int min_objects = 1;
  int max_objects = 2;
  double min_size = 28.0;  // root box side, pixels
  double max_size = 40.0;
  // Part articulation amplitude as a fraction of one part extent.
  double part_offset = 0.6;
  double noise = 0.1;
  double max_overlap_iou = 0.3;
  int distractors = 2;
};

struct ProposalConfig {
  int per_object = 16;  // tight jitter around each ground-truth box
  double jitter_sigma = 0.1;
  int loose_per_object = 8;  // wider jitter, mostly hard negatives
  double loose_sigma = 0.3;
  int background = 16;  // uniform boxes anywhere in the image
};

struct TrainConfig {
  int scenes = 2000;
  int iterations = 2000;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int regions_per_image = 64;
  double fg_fraction = 0.25;
  ProposalConfig proposals;
};

struct EvalConfig {
  int scenes = 200;
  double nms_threshold = 0.3;
  ProposalConfig proposals{8, 0.1, 4, 0.3, 16};
};

struct Config {
  int schema_version = kConfigSchemaVersion;
  uint64_t seed = 1;
  int k = 7;
  int num_classes = 3;
  double lambda_def = 0.3;  // +inf selects position-sensitive pooling
  std::optional<SearchRadius> search_radius;  // empty: one part extent
  double enlarge_factor = 1.3;
  double loss_weight = 7.0;
  // Multiplies the averaged pooled scores before the softmax.
  double logit_scale = 1.0;
  // Regression targets are divided by these before the loss; predictions are
  // multiplied back before decoding.
  std::array<double, 4> box_target_std{0.1, 0.1, 0.2, 0.2};
  bool refine = true;
  int refine_hidden = 256;
  int hidden_channels = 16;
  int downsample = 4;
  SceneConfig scene;
  TrainConfig train;
  EvalConfig eval;

  bool lambda_infinite() const;
  int map_height() const { return scene.height / downsample; }
  int map_width() const { return scene.width / downsample; }
};

// Throws ConfigInvalid on schema or range violations.
Config parse_config(const std::string& json_text);
Config load_config(const std::string& path);  // ConfigInvalid naming the path if unreadable
std::string to_json(const Config& config);
void validate(const Config& config);

// "inf" / "infinity" map to +inf.
double parse_lambda(const std::string& text);

}  // namespace partpool

#endif  // PARTPOOL_CONFIG_HPP_
