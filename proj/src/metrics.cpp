#include "partpool/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

namespace partpool {

double iou(const Rect& a, const Rect& b) {
  const double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? std::min(1.0, inter / uni) : 0.0;
}

namespace {

std::vector<size_t> by_confidence(const std::vector<Detection>& dets) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return dets[a].confidence > dets[b].confidence; });
  return order;
}

}  // namespace

std::vector<Detection> nms(const std::vector<Detection>& dets, double threshold) {
  const std::vector<size_t> order = by_confidence(dets);
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<size_t> kept;
  for (size_t a = 0; a < order.size(); ++a) {
    const size_t i = order[a];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (size_t b = a + 1; b < order.size(); ++b) {
      const size_t j = order[b];
      if (suppressed[j] || dets[j].cls != dets[i].cls || dets[j].image_id != dets[i].image_id)
        continue;
      if (iou(dets[i].box, dets[j].box) > threshold) suppressed[j] = true;
    }
  }
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (size_t i : kept) out.push_back(dets[i]);
  return out;
}

double average_precision(const std::vector<Detection>& all_dets,
                         const std::vector<GroundTruthBox>& all_gts, int cls, double iou_threshold) {
  std::vector<Detection> dets;
  for (const Detection& d : all_dets)
    if (d.cls == cls) dets.push_back(d);
  std::vector<const GroundTruthBox*> gts;
  for (const GroundTruthBox& g : all_gts)
    if (g.cls == cls) gts.push_back(&g);
  if (gts.empty() || dets.empty()) return 0.0;

  const std::vector<size_t> order = by_confidence(dets);
  std::vector<bool> matched(gts.size(), false);
  std::vector<double> precision;
  std::vector<double> recall;
  int tp = 0;
  int fp = 0;
  for (size_t i : order) {
    const Detection& d = dets[i];
    int best = -1;
    double best_iou = iou_threshold;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (matched[g] || gts[g]->image_id != d.image_id) continue;
      const double o = iou(d.box, gts[g]->box);
      if (o >= best_iou) {
        best_iou = o;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      matched[best] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / gts.size());
  }
  // Monotone envelope from the right, then integrate over recall steps.
  for (size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalReport map_report(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                      int num_classes) {
  EvalReport r;
  r.num_classes = num_classes;
  for (int c = 1; c <= num_classes; ++c) {
    r.ap50.push_back(average_precision(dets, gts, c, 0.5));
    r.ap75.push_back(average_precision(dets, gts, c, 0.75));
    double sum = 0.0;
    for (int t = 0; t < 10; ++t) sum += average_precision(dets, gts, c, (50 + 5 * t) / 100.0);
    r.ap50_95.push_back(sum / 10.0);
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  r.map50 = mean(r.ap50);
  r.map75 = mean(r.ap75);
  r.map50_95 = mean(r.ap50_95);
  return r;
}

std::string to_json(const EvalReport& r) {
  nlohmann::json j;
  j["map50"] = r.map50;
  j["map75"] = r.map75;
  j["map50_95"] = r.map50_95;
  j["per_class"] = nlohmann::json::array();
  for (int c = 0; c < r.num_classes; ++c)
    j["per_class"].push_back({{"class", c + 1}, {"ap50", r.ap50[c]}, {"ap75", r.ap75[c]},
                              {"ap50_95", r.ap50_95[c]}});
  return j.dump(2);
}

std::string to_json_line(const Detection& d) {
  nlohmann::json j;
  j["image"] = d.image_id;
  j["class"] = d.cls;
  j["confidence"] = d.confidence;
  j["box"] = {d.box.x0, d.box.y0, d.box.x1, d.box.y1};
  j["region"] = d.region_id;
  return j.dump();
}

}  // namespace partpool
