#include "partpool/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "partpool/rng.hpp"

namespace partpool {

BoxDelta encode_box(const Rect& region, const Rect& target) {
  const double w = region.width();
  const double h = region.height();
  if (!(w > 0.0) || !(h > 0.0) || !(target.width() > 0.0) || !(target.height() > 0.0))
    throw DegenerateRegion("encode_box: empty box");
  return {(target.center_x() - region.center_x()) / w, (target.center_y() - region.center_y()) / h,
          std::log(target.width() / w), std::log(target.height() / h)};
}

Region to_map_region(const Rect& b, int downsample, int image_id) {
  const double s = 1.0 / downsample;
  return Region{Rect{b.x0 * s, b.y0 * s, b.x1 * s, b.y1 * s}, image_id, std::nullopt};
}

Rect to_pixels(const Rect& b, int downsample) {
  const double s = downsample;
  return Rect{b.x0 * s, b.y0 * s, b.x1 * s, b.y1 * s};
}

Model initial_model(const Config& config) {
  validate(config);
  Model model(config);
  model.init(derive_seed(config.seed, "init", 0));
  return model;
}

uint64_t train_scene_seed(const Config& config, int index) {
  return derive_seed(config.seed, "scene-train", static_cast<uint64_t>(index % config.train.scenes));
}

uint64_t eval_scene_seed(const Config& config, int index) {
  return derive_seed(config.seed, "scene-eval", static_cast<uint64_t>(index));
}

StepResult image_step(Model& model, const Config& config, const SyntheticScene& scene,
                      const std::vector<LabeledRegion>& regions) {
  const PoolSettings settings = PoolSettings::from(config);
  const Backbone::Output out = model.backbone.forward(scene.image);
  const Stacks stacks{out.features, out.loc};

  StepResult result;
  std::vector<RegionForward> forwards;
  std::vector<const LabeledRegion*> used;
  forwards.reserve(regions.size());
  for (const LabeledRegion& r : regions) {
    try {
      forwards.push_back(forward_region(model, stacks, to_map_region(r.box, config.downsample), settings));
      used.push_back(&r);
    } catch (const DegenerateRegion&) {
      ++result.skipped;
    }
  }
  result.regions = static_cast<int>(forwards.size());
  if (forwards.empty()) return result;

  const double scale = 1.0 / static_cast<double>(forwards.size());
  StackGrads grads(stacks.features, stacks.loc);
  double total = 0.0;
  for (size_t i = 0; i < forwards.size(); ++i) {
    const RegionForward& f = forwards[i];
    const LabeledRegion& r = *used[i];
    BoxDelta target{};
    if (r.label > 0) {
      target = encode_box(r.box, scene.objects[r.gt_index].box);
      for (int t = 0; t < 4; ++t) target[t] /= config.box_target_std[t];
    }
    const LossTerms terms = multitask_loss(f.probs, r.label, f.deltas, target, config.loss_weight);
    total += terms.total;
    result.classification += terms.classification * scale;
    result.localization += config.loss_weight * terms.localization * scale;
    LossGrads g = multitask_loss_backward(f.probs, r.label, f.deltas, target, config.loss_weight);
    for (double& v : g.logits) v *= scale;
    for (BoxDelta& d : g.deltas)
      for (double& v : d) v *= scale;
    backward_region(model, f, g.logits, g.deltas, settings, grads);
  }
  result.loss = total * scale;

  const Tensor3 grad_cls = stacks.features.normalization_backward(grads.cls_normalized);
  const Tensor3 grad_loc = to_tensor(grads.loc);
  model.backbone.backward(out.acts, grad_cls, grad_loc);
  return result;
}

std::vector<LabeledRegion> sample_minibatch(const std::vector<LabeledRegion>& proposals,
                                            const Config& config, Rng& rng) {
  std::vector<const LabeledRegion*> fg;
  std::vector<const LabeledRegion*> bg;
  for (const LabeledRegion& r : proposals) (r.label > 0 ? fg : bg).push_back(&r);
  // Fisher-Yates on our own uniform_int so the draw does not depend on the
  // standard library's shuffle.
  auto shuffle = [&rng](std::vector<const LabeledRegion*>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  };
  shuffle(fg);
  shuffle(bg);
  const int total = config.train.regions_per_image;
  const int want_fg = static_cast<int>(std::lround(config.train.fg_fraction * total));
  const int n_fg = std::min<int>(want_fg, static_cast<int>(fg.size()));
  const int n_bg = std::min<int>(total - n_fg, static_cast<int>(bg.size()));
  std::vector<LabeledRegion> out;
  out.reserve(n_fg + n_bg);
  for (int i = 0; i < n_fg; ++i) out.push_back(*fg[i]);
  for (int i = 0; i < n_bg; ++i) out.push_back(*bg[i]);
  return out;
}

void Sgd::step(Model& model) {
  auto params = model.parameters();
  if (velocity.empty())
    for (const auto& p : params) velocity.emplace_back(p.values.size(), 0.0);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& v = velocity[i];
    auto w = params[i].values;
    auto g = params[i].grads;
    for (size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum * v[j] - learning_rate * (g[j] + weight_decay * w[j]);
      w[j] += v[j];
    }
  }
}

TrainResult train(const Config& config, const IterationCallback& on_iteration) {
  TrainResult result{initial_model(config), {}, {}, {}};
  Model& model = result.model;
  Sgd sgd{config.train.learning_rate, config.train.momentum, config.train.weight_decay, {}};
  result.loss_trace.reserve(config.train.iterations);
  for (int it = 0; it < config.train.iterations; ++it) {
    const SyntheticScene scene = gen_scene(train_scene_seed(config, it), config);
    const auto proposals = jitter_proposals(scene, config.train.proposals,
                                            derive_seed(config.seed, "jitter-train", it), config);
    Rng rng(derive_seed(config.seed, "minibatch", it));
    const auto batch = sample_minibatch(proposals, config, rng);
    model.zero_grad();
    const StepResult step = image_step(model, config, scene, batch);
    if (!std::isfinite(step.loss)) throw NonFinite("train: loss is not finite at iteration " + std::to_string(it));
    if (step.regions > 0) sgd.step(model);
    result.loss_trace.push_back(step.loss);
    result.classification_trace.push_back(step.classification);
    result.localization_trace.push_back(step.localization);
    if (on_iteration) on_iteration(it, step.loss);
  }
  return result;
}

std::vector<Detection> detect(const Model& model, const Config& config, const SyntheticScene& scene,
                              const std::vector<LabeledRegion>& proposals, int image_id) {
  const PoolSettings settings = PoolSettings::from(config);
  const Stacks stacks = build_stacks(model.backbone, scene.image);
  const double W = config.scene.width;
  const double H = config.scene.height;
  std::vector<Detection> dets;
  for (size_t i = 0; i < proposals.size(); ++i) {
    const Rect& box = proposals[i].box;
    RegionForward f;
    try {
      f = forward_region(model, stacks, to_map_region(box, config.downsample, image_id), settings);
    } catch (const DegenerateRegion&) {
      continue;
    }
    for (int c = 1; c <= config.num_classes; ++c) {
      Detection d;
      d.image_id = image_id;
      d.cls = c;
      d.confidence = f.probs[c];
      BoxDelta delta = f.deltas[c - 1];
      for (int t = 0; t < 4; ++t) delta[t] *= config.box_target_std[t];
      d.box = decode_box(box, delta, W, H);
      d.region_id = static_cast<int>(i);
      if (d.box.width() <= 0.0 || d.box.height() <= 0.0) continue;
      dets.push_back(d);
    }
  }
  return dets;
}

EvalResult evaluate(const Model& model, const Config& config) {
  EvalResult result;
  for (int s = 0; s < config.eval.scenes; ++s) {
    const SyntheticScene scene = gen_scene(eval_scene_seed(config, s), config);
    const auto proposals =
        jitter_proposals(scene, config.eval.proposals, derive_seed(config.seed, "jitter-eval", s), config);
    const auto dets = nms(detect(model, config, scene, proposals, s), config.eval.nms_threshold);
    result.detections.insert(result.detections.end(), dets.begin(), dets.end());
    for (const GroundTruth& gt : scene.objects) result.ground_truth.push_back({s, gt.cls, gt.box});
  }
  result.report = map_report(result.detections, result.ground_truth, config.num_classes);
  return result;
}

}  // namespace partpool
