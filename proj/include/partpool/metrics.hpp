#ifndef PARTPOOL_METRICS_HPP_
#define PARTPOOL_METRICS_HPP_

#include <string>
#include <vector>

#include "partpool/tensor.hpp"

namespace partpool {

double iou(const Rect& a, const Rect& b);

struct Detection {
  int image_id = 0;
  int cls = 0;
  double confidence = 0.0;
  Rect box;
  int region_id = -1;
};

// Greedy per-class suppression by descending confidence (stable for ties).
// A detection is dropped when its IoU with a kept same-class, same-image
// detection exceeds threshold.
std::vector<Detection> nms(const std::vector<Detection>& dets, double threshold);

struct GroundTruthBox {
  int image_id = 0;
  int cls = 0;
  Rect box;
};

/// Area under the precision/recall curve with the monotone precision
/// envelope, for one class. Each ground truth is matched at most once.
double average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                         int cls, double iou_threshold);

struct EvalReport {
  int num_classes = 0;
  std::vector<double> ap50;
  std::vector<double> ap75;
  std::vector<double> ap50_95;
  double map50 = 0.0;
  double map75 = 0.0;
  double map50_95 = 0.0;

  bool operator==(const EvalReport& other) const = default;
};

EvalReport map_report(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                      int num_classes);

std::string to_json(const EvalReport& report);
std::string to_json_line(const Detection& det);

}  // namespace partpool

#endif  // PARTPOOL_METRICS_HPP_
