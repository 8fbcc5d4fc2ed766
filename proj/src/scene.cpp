#include "partpool/scene.hpp"

#include <algorithm>
#include <cmath>

#include "partpool/metrics.hpp"

namespace partpool {

namespace {

// Anchors sit on the body's border so that articulated parts push the
// object's extent around; layouts differ only in where the parts go.
const std::vector<ClassTemplate>& templates() {
  static const std::vector<ClassTemplate> t = {
      {{{0.0, 0.5, kPartAChannel}, {1.0, 0.5, kPartAChannel}, {0.5, 0.0, kPartBChannel}}},
      {{{0.5, 0.0, kPartAChannel}, {0.5, 1.0, kPartAChannel}, {1.0, 0.5, kPartBChannel}}},
      {{{0.0, 0.0, kPartAChannel}, {1.0, 1.0, kPartAChannel}, {0.5, 1.0, kPartBChannel}}},
      {{{0.0, 1.0, kPartAChannel}, {1.0, 0.0, kPartAChannel}, {0.0, 0.5, kPartBChannel}}},
      {{{0.0, 0.0, kPartAChannel}, {1.0, 0.0, kPartAChannel}, {0.5, 1.0, kPartBChannel}}},
      {{{0.5, 1.0, kPartAChannel}, {0.0, 0.5, kPartAChannel}, {1.0, 0.0, kPartBChannel}}},
  };
  return t;
}

constexpr double kPartRadiusFraction = 0.2;  // of the body's shorter side
constexpr int kMaxPlacementTries = 50;

void add_rect(Tensor3& img, int channel, const Rect& r, double value) {
  const CellRange cells = covered_cells(r, img.height, img.width);
  for (int y = cells.y_begin; y < cells.y_end; ++y)
    for (int x = cells.x_begin; x < cells.x_end; ++x) img.at(channel, y, x) += value;
}

void add_blob(Tensor3& img, int channel, double cx, double cy, double radius, double amplitude) {
  const double sigma = 0.5 * radius;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - 3 * sigma)));
  const int y1 = std::min(img.height, static_cast<int>(std::ceil(cy + 3 * sigma)) + 1);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - 3 * sigma)));
  const int x1 = std::min(img.width, static_cast<int>(std::ceil(cx + 3 * sigma)) + 1);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double ex = x + 0.5 - cx;
      const double ey = y + 0.5 - cy;
      img.at(channel, y, x) += amplitude * std::exp(-(ex * ex + ey * ey) * inv);
    }
}

GroundTruth sample_object(int cls, const Config& config, Rng& rng) {
  const SceneConfig& s = config.scene;
  GroundTruth gt;
  gt.cls = cls;
  const double w = uniform(rng, s.min_size, s.max_size);
  const double h = uniform(rng, s.min_size, s.max_size);
  // Body is the inner part of the object; parts protrude around it.
  const double body_w = w * 0.6;
  const double body_h = h * 0.6;
  gt.part_radius = kPartRadiusFraction * std::min(body_w, body_h);
  const double extent_x = w / 3.0;
  const double extent_y = h / 3.0;
  const ClassTemplate& tpl = class_template(cls);
  for (size_t p = 0; p < tpl.parts.size(); ++p) {
    const double ox = s.part_offset * extent_x * uniform(rng, -1.0, 1.0);
    const double oy = s.part_offset * extent_y * uniform(rng, -1.0, 1.0);
    gt.part_offsets.push_back({ox, oy});
  }
  // Body placed at the origin for now; translated once the extent is known.
  gt.root = Rect{0.0, 0.0, body_w, body_h};
  Rect box = gt.root;
  for (size_t p = 0; p < tpl.parts.size(); ++p) {
    const double cx = tpl.parts[p].u * body_w + gt.part_offsets[p][0];
    const double cy = tpl.parts[p].v * body_h + gt.part_offsets[p][1];
    gt.part_centers.push_back({cx, cy});
    box.x0 = std::min(box.x0, cx - gt.part_radius);
    box.y0 = std::min(box.y0, cy - gt.part_radius);
    box.x1 = std::max(box.x1, cx + gt.part_radius);
    box.y1 = std::max(box.y1, cy + gt.part_radius);
  }
  gt.box = box;
  return gt;
}

void translate(GroundTruth& gt, double tx, double ty) {
  gt.root = gt.root.shifted(tx, ty);
  gt.box = gt.box.shifted(tx, ty);
  for (auto& c : gt.part_centers) {
    c[0] += tx;
    c[1] += ty;
  }
}

}  // namespace

int max_synthetic_classes() { return static_cast<int>(templates().size()); }

const ClassTemplate& class_template(int cls) {
  if (cls < 1 || cls > max_synthetic_classes())
    throw ConfigInvalid("class_template: no synthetic layout for class " + std::to_string(cls));
  return templates()[cls - 1];
}

SyntheticScene gen_scene(uint64_t seed, const Config& config) {
  validate(config);
  if (config.num_classes > max_synthetic_classes())
    throw ConfigInvalid("gen_scene: at most " + std::to_string(max_synthetic_classes()) +
                        " synthetic classes");
  const SceneConfig& s = config.scene;
  Rng rng(seed);
  SyntheticScene scene;
  scene.seed = seed;
  scene.image = Tensor3(s.channels, s.height, s.width);
  for (double& v : scene.image.data) v = s.noise > 0.0 ? normal(rng, 0.0, s.noise) : 0.0;

  const int count = uniform_int(rng, s.min_objects, s.max_objects);
  for (int n = 0; n < count; ++n) {
    const int cls = uniform_int(rng, 1, config.num_classes);
    for (int attempt = 0; attempt < kMaxPlacementTries; ++attempt) {
      GroundTruth gt = sample_object(cls, config, rng);
      const double bw = gt.box.width();
      const double bh = gt.box.height();
      if (bw >= s.width || bh >= s.height) continue;
      const double px = uniform(rng, 0.0, s.width - bw);
      const double py = uniform(rng, 0.0, s.height - bh);
      translate(gt, px - gt.box.x0, py - gt.box.y0);
      bool ok = true;
      for (const GroundTruth& other : scene.objects)
        if (iou(other.box, gt.box) > s.max_overlap_iou) ok = false;
      if (!ok) continue;
      scene.objects.push_back(std::move(gt));
      break;
    }
  }

  for (const GroundTruth& gt : scene.objects) {
    add_rect(scene.image, kBodyChannel, gt.root, 1.0);
    const ClassTemplate& tpl = class_template(gt.cls);
    for (size_t p = 0; p < tpl.parts.size(); ++p)
      add_blob(scene.image, tpl.parts[p].channel, gt.part_centers[p][0], gt.part_centers[p][1],
               gt.part_radius, 1.0);
  }

  // Clutter: loose parts and part-less bodies, so that appearance alone does
  // not separate objects from background.
  for (int d = 0; d < s.distractors; ++d) {
    const double size = uniform(rng, s.min_size, s.max_size);
    const double radius = kPartRadiusFraction * 0.6 * size;
    const double cx = uniform(rng, 0.0, s.width);
    const double cy = uniform(rng, 0.0, s.height);
    const int kind = uniform_int(rng, 0, 2);
    if (kind == 0) {
      const double bw = 0.6 * size;
      const double bh = 0.6 * uniform(rng, s.min_size, s.max_size);
      add_rect(scene.image, kBodyChannel, Rect{cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2}, 1.0);
    } else {
      add_blob(scene.image, kind == 1 ? kPartAChannel : kPartBChannel, cx, cy, radius, 1.0);
    }
  }
  return scene;
}

Rect jitter_box(const Rect& box, double sigma, Rng& rng) {
  if (sigma == 0.0) return box;
  const double w = box.width();
  const double h = box.height();
  const double cx = box.center_x() + sigma * w * normal(rng, 0.0, 1.0);
  const double cy = box.center_y() + sigma * h * normal(rng, 0.0, 1.0);
  const double nw = w * std::exp(sigma * normal(rng, 0.0, 1.0));
  const double nh = h * std::exp(sigma * normal(rng, 0.0, 1.0));
  return {cx - nw / 2, cy - nh / 2, cx + nw / 2, cy + nh / 2};
}

void assign_labels(std::vector<LabeledRegion>& regions, const std::vector<GroundTruth>& objects) {
  for (LabeledRegion& r : regions) {
    r.label = 0;
    r.gt_index = -1;
    r.iou = 0.0;
    for (size_t g = 0; g < objects.size(); ++g) {
      const double o = iou(r.box, objects[g].box);
      if (o > r.iou) {
        r.iou = o;
        r.gt_index = static_cast<int>(g);
      }
    }
    if (r.iou >= 0.5) r.label = objects[r.gt_index].cls;
  }
}

std::vector<LabeledRegion> jitter_proposals(const SyntheticScene& scene, const ProposalConfig& p,
                                            uint64_t seed, const Config& config) {
  Rng rng(seed);
  const double W = config.scene.width;
  const double H = config.scene.height;
  // Smallest box whose k x k grid still gives every cell a map cell.
  const double min_side = static_cast<double>(config.k * config.downsample);
  std::vector<LabeledRegion> out;
  auto push = [&](const Rect& raw) {
    const Rect b = raw.clamped(W, H);
    if (b.width() < min_side || b.height() < min_side) return;
    out.push_back(LabeledRegion{b});
  };
  for (const GroundTruth& gt : scene.objects) {
    for (int n = 0; n < p.per_object; ++n) push(jitter_box(gt.box, p.jitter_sigma, rng));
    for (int n = 0; n < p.loose_per_object; ++n) push(jitter_box(gt.box, p.loose_sigma, rng));
  }
  const double lo = std::max(min_side, config.scene.min_size);
  const double hi = std::max(lo, config.scene.max_size * 1.2);
  for (int n = 0; n < p.background; ++n) {
    const double w = uniform(rng, lo, std::min(hi, W));
    const double h = uniform(rng, lo, std::min(hi, H));
    const double x = uniform(rng, 0.0, W - w);
    const double y = uniform(rng, 0.0, H - h);
    push(Rect{x, y, x + w, y + h});
  }
  assign_labels(out, scene.objects);
  return out;
}

}  // namespace partpool
