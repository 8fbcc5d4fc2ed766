#ifndef PARTPOOL_DP_POOL_HPP_
#define PARTPOOL_DP_POOL_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "partpool/backbone.hpp"
#include "partpool/tensor.hpp"

namespace partpool {

/// A region of interest in feature-map coordinates.
struct Region {
  Rect box;
  int image_id = 0;
  std::optional<double> objectness;
};

/// Scales the box about its center, then clamps it to the map.
Region enlarge_region(const Region& region, double factor, int map_height, int map_width);

/// k x k cells fitted to a region box. cells[i * k + j] is row i, column j.
struct PartGrid {
  int k = 0;
  Rect box;
  double part_width = 0.0;
  double part_height = 0.0;
  int map_height = 0;
  int map_width = 0;
  std::vector<Rect> cells;

  int num_parts() const { return k * k; }
  const Rect& cell(int i, int j) const { return cells[static_cast<size_t>(i) * k + j]; }
};

/// Throws DegenerateRegion if the box is empty after clamping or any cell
/// covers no map cell.
PartGrid fit_part_grid(const Region& region, int k, int map_height, int map_width);

/// Integer map-cell offset of one part plus its size-normalized form.
struct Displacement {
  int dx = 0;
  int dy = 0;
  double ndx = 0.0;
  double ndy = 0.0;

  bool operator==(const Displacement& other) const = default;
};

struct SearchRadius {
  int sx = 0;
  int sy = 0;
};

// One part extent in each axis: (ceil(w), ceil(h)).
SearchRadius default_search_radius(const PartGrid& grid);

/// Displacements of all k^2 parts for one foreground class.
struct DeformationField {
  int cls = 0;
  std::vector<Displacement> parts;

  // (ndx, ndy) interleaved per part, length 2k^2.
  std::vector<double> values() const;
};

/// p[part][class] for one region with the displacement behind every value.
struct PooledScores {
  PooledScores() = default;
  PooledScores(int num_parts, int num_classes);

  int num_parts = 0;
  int num_classes = 0;  // foreground classes C; columns are C + 1
  std::vector<double> values;
  std::vector<Displacement> provenance;
  // Objective gap between the chosen and the runner-up candidate (+inf when
  // there was a single candidate). Lets gradient checks stay off the argmax
  // boundaries.
  std::vector<double> margins;

  size_t index(int part, int cls) const {
    return static_cast<size_t>(part) * (num_classes + 1) + cls;
  }
  double value(int part, int cls) const { return values[index(part, cls)]; }
  const Displacement& displacement(int part, int cls) const { return provenance[index(part, cls)]; }
};

struct DeformablePoolResult {
  PooledScores scores;
  std::vector<DeformationField> fields;  // fields[c - 1] for class c
};

// Maps are indexed part * (num_classes + 1) + cls, as in FeatureStack.
DeformablePoolResult deformable_pool(std::span<const Grid2D> maps, int num_classes,
                                     const PartGrid& grid, double lambda_def, SearchRadius search);
DeformablePoolResult deformable_pool(const FeatureStack& stack, const PartGrid& grid,
                                     double lambda_def, SearchRadius search);

PooledScores ps_pool(std::span<const Grid2D> maps, int num_classes, const PartGrid& grid);
PooledScores ps_pool(const FeatureStack& stack, const PartGrid& grid);

/// Zero displacements for every class, as produced by ps_pool.
std::vector<DeformationField> zero_fields(int num_parts, int num_classes);

/// Pooled localization values, index (part * C + (cls - 1)) * 4 + coord.
struct PooledLoc {
  int num_parts = 0;
  int num_classes = 0;
  std::vector<double> values;

  size_t index(int part, int cls, int coord) const {
    return (static_cast<size_t>(part) * num_classes + (cls - 1)) * 4 + coord;
  }
  double value(int part, int cls, int coord) const { return values[index(part, cls, coord)]; }
};

PooledLoc pool_localization(const LocStack& loc, const PartGrid& grid,
                            std::span<const DeformationField> fields);

// Scatters gradients on pooled scores into grad_maps (same indexing as the
// maps that were pooled) at the stored displacements.
void deformable_pool_backward(const PooledScores& scores, std::span<const double> grad_scores,
                              const PartGrid& grid, std::vector<Grid2D>& grad_maps);

void pool_localization_backward(std::span<const double> grad_loc, const PartGrid& grid,
                                std::span<const DeformationField> fields, int num_classes,
                                std::vector<Grid2D>& grad_loc_maps);

/// One line of the deformation dump.
struct DeformationRecord {
  int region_id = 0;
  int image_id = 0;
  int cls = 0;
  std::vector<double> displacements;  // 2k^2 normalized values
};

std::string to_json_line(const DeformationRecord& record);
DeformationRecord parse_deformation_record(const std::string& line);

}  // namespace partpool

#endif  // PARTPOOL_DP_POOL_HPP_
