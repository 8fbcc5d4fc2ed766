#ifndef PARTPOOL_DEMO_HPP_
#define PARTPOOL_DEMO_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "partpool/config.hpp"
#include "partpool/dp_pool.hpp"
#include "partpool/model.hpp"
#include "partpool/scene.hpp"

namespace partpool {

/// 8-bit RGB image, written as binary PPM (P6).
struct Pixmap {
  Pixmap(int width, int height);

  int width;
  int height;
  std::vector<uint8_t> rgb;

  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b);
  // Outline of a rect given in pixel coordinates; clipped to the image.
  void outline(const Rect& rect, uint8_t r, uint8_t g, uint8_t b);
};

void write_ppm(const Pixmap& image, const std::string& path);
Pixmap read_ppm(const std::string& path);

struct PoolDemo {
  SyntheticScene scene;
  std::vector<LabeledRegion> regions;
  std::vector<DeformationRecord> records;  // one per (region, foreground class)
  Pixmap overlay{1, 1};
};

/// Pools foreground proposals of one generated scene and collects their
/// deformations. The overlay shows each region (yellow), its part cells
/// (blue) and the displaced cells of its best-scoring class (red), upscaled
/// by `scale`.
PoolDemo pool_demo(const Model& model, const Config& config, int max_regions = 8, int scale = 4);

}  // namespace partpool

#endif  // PARTPOOL_DEMO_HPP_
