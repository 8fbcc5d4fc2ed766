#include "partpool/demo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "partpool/pipeline.hpp"
#include "partpool/rng.hpp"

namespace partpool {

Pixmap::Pixmap(int w, int h) : width(w), height(h), rgb(static_cast<size_t>(w) * h * 3, 0) {
  if (w <= 0 || h <= 0) throw DimensionMismatch("Pixmap: empty image");
}

void Pixmap::set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const size_t i = (static_cast<size_t>(y) * width + x) * 3;
  rgb[i] = r;
  rgb[i + 1] = g;
  rgb[i + 2] = b;
}

void Pixmap::outline(const Rect& rect, uint8_t r, uint8_t g, uint8_t b) {
  const int x0 = static_cast<int>(std::floor(rect.x0));
  const int y0 = static_cast<int>(std::floor(rect.y0));
  const int x1 = static_cast<int>(std::ceil(rect.x1)) - 1;
  const int y1 = static_cast<int>(std::ceil(rect.y1)) - 1;
  for (int x = x0; x <= x1; ++x) {
    set(x, y0, r, g, b);
    set(x, y1, r, g, b);
  }
  for (int y = y0; y <= y1; ++y) {
    set(x0, y, r, g, b);
    set(x1, y, r, g, b);
  }
}

void write_ppm(const Pixmap& image, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("ppm: cannot write '" + tmp + "'");
    os << "P6\n" << image.width << " " << image.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
    if (!os) throw IoError("ppm: write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("ppm: cannot rename to '" + path + "'");
}

Pixmap read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("ppm: cannot read '" + path + "'");
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw IoError("ppm: unsupported header in '" + path + "'");
  is.get();
  Pixmap p(w, h);
  if (!is.read(reinterpret_cast<char*>(p.rgb.data()), static_cast<std::streamsize>(p.rgb.size())))
    throw IoError("ppm: truncated '" + path + "'");
  return p;
}

namespace {

uint8_t to_byte(double v) { return static_cast<uint8_t>(std::clamp(v * 200.0, 0.0, 255.0)); }

Rect scaled(const Rect& r, double s) { return Rect{r.x0 * s, r.y0 * s, r.x1 * s, r.y1 * s}; }

}  // namespace

PoolDemo pool_demo(const Model& model, const Config& config, int max_regions, int scale) {
  PoolDemo demo;
  demo.scene = gen_scene(derive_seed(config.seed, "scene-demo", 0), config);
  const auto proposals =
      jitter_proposals(demo.scene, config.eval.proposals, derive_seed(config.seed, "jitter-demo", 0), config);
  for (const LabeledRegion& r : proposals)
    if (r.label > 0 && static_cast<int>(demo.regions.size()) < max_regions) demo.regions.push_back(r);

  const Stacks stacks = build_stacks(model.backbone, demo.scene.image);
  const PoolSettings settings = PoolSettings::from(config);
  const int W = config.scene.width, H = config.scene.height;
  Pixmap& img = demo.overlay = Pixmap(W * scale, H * scale);
  for (int y = 0; y < H * scale; ++y)
    for (int x = 0; x < W * scale; ++x) {
      const Tensor3& s = demo.scene.image;
      img.set(x, y, to_byte(s.at(kBodyChannel, y / scale, x / scale)),
              to_byte(s.at(kPartAChannel, y / scale, x / scale)),
              to_byte(s.at(kPartBChannel, y / scale, x / scale)));
    }

  const double map_to_overlay = static_cast<double>(config.downsample) * scale;
  for (size_t i = 0; i < demo.regions.size(); ++i) {
    const Rect& box = demo.regions[i].box;
    RegionForward f;
    try {
      f = forward_region(model, stacks, to_map_region(box, config.downsample), settings);
    } catch (const DegenerateRegion&) {
      continue;
    }
    int best = 1;
    for (int c = 1; c <= config.num_classes; ++c) {
      if (f.probs[c] > f.probs[best]) best = c;
      demo.records.push_back({static_cast<int>(i), 0, c, f.pool.fields[c - 1].values()});
    }
    for (const Rect& cell : f.grid.cells) img.outline(scaled(cell, map_to_overlay), 60, 60, 255);
    const DeformationField& field = f.pool.fields[best - 1];
    for (size_t p = 0; p < f.grid.cells.size(); ++p) {
      const Displacement& d = field.parts[p];
      img.outline(scaled(f.grid.cells[p].shifted(d.dx, d.dy), map_to_overlay), 255, 40, 40);
    }
    img.outline(scaled(box, scale), 255, 255, 0);
  }
  return demo;
}

}  // namespace partpool
