#include "partpool/dp_pool.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace partpool {

Region enlarge_region(const Region& region, double factor, int map_height, int map_width) {
  if (!(factor > 0.0)) throw DegenerateRegion("enlarge_region: factor must be positive");
  const Rect& b = region.box;
  const double cx = b.center_x();
  const double cy = b.center_y();
  const double hw = 0.5 * b.width() * factor;
  const double hh = 0.5 * b.height() * factor;
  Region out = region;
  out.box = Rect{cx - hw, cy - hh, cx + hw, cy + hh}.clamped(map_width, map_height);
  if (out.box.area() <= 0.0) throw DegenerateRegion("enlarge_region: box empty after clamping");
  return out;
}

PartGrid fit_part_grid(const Region& region, int k, int map_height, int map_width) {
  if (k < 1) throw DegenerateRegion("fit_part_grid: k must be >= 1");
  const Rect& b = region.box;
  if (b.clamped(map_width, map_height).area() <= 0.0)
    throw DegenerateRegion("fit_part_grid: region has no area on the map");
  PartGrid g;
  g.k = k;
  g.box = b;
  g.map_height = map_height;
  g.map_width = map_width;
  g.part_width = b.width() / k;
  g.part_height = b.height() / k;
  g.cells.reserve(static_cast<size_t>(k) * k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      // Boundaries computed from the box edges so neighbouring cells share them exactly.
      const Rect cell{b.x0 + j * b.width() / k, b.y0 + i * b.height() / k,
                      b.x0 + (j + 1) * b.width() / k, b.y0 + (i + 1) * b.height() / k};
      if (covered_cells(cell, map_height, map_width).empty()) {
        std::ostringstream os;
        os << "fit_part_grid: part (" << i << "," << j << ") covers no map cell";
        throw DegenerateRegion(os.str());
      }
      g.cells.push_back(cell);
    }
  }
  return g;
}

SearchRadius default_search_radius(const PartGrid& grid) {
  return {static_cast<int>(std::ceil(grid.part_width)),
          static_cast<int>(std::ceil(grid.part_height))};
}

std::vector<double> DeformationField::values() const {
  std::vector<double> v;
  v.reserve(parts.size() * 2);
  for (const Displacement& d : parts) {
    v.push_back(d.ndx);
    v.push_back(d.ndy);
  }
  return v;
}

PooledScores::PooledScores(int parts, int classes) : num_parts(parts), num_classes(classes) {
  const size_t n = static_cast<size_t>(parts) * (classes + 1);
  values.assign(n, 0.0);
  provenance.assign(n, Displacement{});
  margins.assign(n, std::numeric_limits<double>::infinity());
}

namespace {

void check_maps(std::span<const Grid2D> maps, int num_classes, const PartGrid& grid) {
  if (maps.size() != static_cast<size_t>(grid.num_parts()) * (num_classes + 1)) {
    std::ostringstream os;
    os << "pool: " << maps.size() << " maps for k=" << grid.k << ", C=" << num_classes;
    throw DimensionMismatch(os.str());
  }
  for (const Grid2D& m : maps)
    if (m.height() != grid.map_height || m.width() != grid.map_width)
      throw DimensionMismatch("pool: map size differs from the grid's map");
}

Displacement make_displacement(int dx, int dy, const PartGrid& grid) {
  return {dx, dy, dx / grid.part_width, dy / grid.part_height};
}

// Sums of equal values over different cell sets differ in the last bits, so
// scores this close to the best count as tied.
inline constexpr double kTieTolerance = 1e-12;

}  // namespace

namespace {

struct Shift {
  int dx;
  int dy;
  double norm2;
  CellRange cells;
};

DeformablePoolResult deformable_pool_impl(std::span<const Grid2D> maps, std::span<const SummedArea> sums,
                                          int num_classes, const PartGrid& grid, double lambda_def,
                                          SearchRadius search) {
  check_maps(maps, num_classes, grid);
  if (!(lambda_def >= 0.0)) throw DegenerateRegion("deformable_pool: lambda_def must be >= 0");
  if (search.sx < 0 || search.sy < 0)
    throw DegenerateRegion("deformable_pool: search radius must be >= 0");
  // An infinite cost leaves (0, 0) as the only admissible candidate.
  if (std::isinf(lambda_def)) search = {0, 0};

  const int parts = grid.num_parts();
  DeformablePoolResult result;
  result.scores = PooledScores(parts, num_classes);
  PooledScores& out = result.scores;
  result.fields.resize(num_classes);
  for (int c = 1; c <= num_classes; ++c) {
    result.fields[c - 1].cls = c;
    result.fields[c - 1].parts.resize(parts);
  }

  std::vector<Shift> shifts;
  std::vector<double> scores;
  for (int part = 0; part < parts; ++part) {
    const Rect& cell = grid.cells[part];
    const size_t bg = out.index(part, 0);
    out.values[bg] = avg_pool_rect(maps[bg], cell);

    shifts.clear();
    for (int dy = -search.sy; dy <= search.sy; ++dy)
      for (int dx = -search.sx; dx <= search.sx; ++dx) {
        const CellRange cells = covered_cells(cell.shifted(dx, dy), grid.map_height, grid.map_width);
        if (cells.empty()) continue;
        const double ndx = dx / grid.part_width;
        const double ndy = dy / grid.part_height;
        shifts.push_back({dx, dy, ndx * ndx + ndy * ndy, cells});
      }
    if (shifts.empty()) throw DegenerateRegion("deformable_pool: no admissible displacement");
    scores.resize(shifts.size());

    for (int c = 1; c <= num_classes; ++c) {
      const size_t idx = out.index(part, c);
      const SummedArea& sum = sums[idx];
      double top = -std::numeric_limits<double>::infinity();
      for (size_t s = 0; s < shifts.size(); ++s) {
        scores[s] = sum.average(shifts[s].cells) - lambda_def * shifts[s].norm2;
        top = std::max(top, scores[s]);
      }
      // Among the (near-)maximal candidates: smaller norm, then (dy, dx).
      const double floor = top - kTieTolerance * std::max(1.0, std::abs(top));
      size_t chosen = shifts.size();
      for (size_t s = 0; s < shifts.size(); ++s) {
        if (scores[s] < floor) continue;
        if (chosen == shifts.size() || shifts[s].norm2 < shifts[chosen].norm2 ||
            (shifts[s].norm2 == shifts[chosen].norm2 &&
             (shifts[s].dy < shifts[chosen].dy || (shifts[s].dy == shifts[chosen].dy && shifts[s].dx < shifts[chosen].dx))))
          chosen = s;
      }
      double runner_up = -std::numeric_limits<double>::infinity();
      for (size_t s = 0; s < shifts.size(); ++s)
        if (s != chosen) runner_up = std::max(runner_up, scores[s]);
      const Shift& best = shifts[chosen];
      // The reported value is pooled directly so that (0, 0) reproduces
      // ps_pool bit for bit.
      const double ndx = best.dx / grid.part_width;
      const double ndy = best.dy / grid.part_height;
      out.values[idx] = avg_pool_rect(maps[idx], cell.shifted(best.dx, best.dy)) -
                        lambda_def * (ndx * ndx + ndy * ndy);
      out.provenance[idx] = make_displacement(best.dx, best.dy, grid);
      out.margins[idx] = scores[chosen] - runner_up;
      result.fields[c - 1].parts[part] = out.provenance[idx];
    }
  }
  return result;
}

}  // namespace

DeformablePoolResult deformable_pool(std::span<const Grid2D> maps, int num_classes,
                                     const PartGrid& grid, double lambda_def, SearchRadius search) {
  std::vector<SummedArea> sums;
  sums.reserve(maps.size());
  for (const Grid2D& m : maps) sums.emplace_back(m);
  return deformable_pool_impl(maps, sums, num_classes, grid, lambda_def, search);
}

DeformablePoolResult deformable_pool(const FeatureStack& stack, const PartGrid& grid,
                                     double lambda_def, SearchRadius search) {
  if (stack.k() != grid.k) throw DimensionMismatch("deformable_pool: stack k differs from grid k");
  return deformable_pool_impl(stack.normalized_maps(), stack.summed_maps(), stack.num_classes(), grid,
                              lambda_def, search);
}

PooledScores ps_pool(std::span<const Grid2D> maps, int num_classes, const PartGrid& grid) {
  check_maps(maps, num_classes, grid);
  PooledScores out(grid.num_parts(), num_classes);
  for (int part = 0; part < grid.num_parts(); ++part)
    for (int c = 0; c <= num_classes; ++c) {
      const size_t idx = out.index(part, c);
      out.values[idx] = avg_pool_rect(maps[idx], grid.cells[part]);
    }
  return out;
}

PooledScores ps_pool(const FeatureStack& stack, const PartGrid& grid) {
  if (stack.k() != grid.k) throw DimensionMismatch("ps_pool: stack k differs from grid k");
  return ps_pool(stack.normalized_maps(), stack.num_classes(), grid);
}

std::vector<DeformationField> zero_fields(int num_parts, int num_classes) {
  std::vector<DeformationField> fields(num_classes);
  for (int c = 1; c <= num_classes; ++c) {
    fields[c - 1].cls = c;
    fields[c - 1].parts.assign(num_parts, Displacement{});
  }
  return fields;
}

namespace {

void check_fields(std::span<const DeformationField> fields, int num_parts, int num_classes) {
  if (fields.size() != static_cast<size_t>(num_classes))
    throw DimensionMismatch("pool_localization: one field per foreground class required");
  for (const DeformationField& f : fields)
    if (f.parts.size() != static_cast<size_t>(num_parts))
      throw DimensionMismatch("pool_localization: field length differs from k^2");
}

}  // namespace

PooledLoc pool_localization(const LocStack& loc, const PartGrid& grid,
                            std::span<const DeformationField> fields) {
  if (loc.k() != grid.k) throw DimensionMismatch("pool_localization: stack k differs from grid k");
  const int parts = grid.num_parts();
  const int C = loc.num_classes();
  check_fields(fields, parts, C);
  PooledLoc out;
  out.num_parts = parts;
  out.num_classes = C;
  out.values.assign(static_cast<size_t>(parts) * C * 4, 0.0);
  for (int part = 0; part < parts; ++part)
    for (int c = 1; c <= C; ++c) {
      const Displacement& d = fields[c - 1].parts[part];
      const Rect shifted = grid.cells[part].shifted(d.dx, d.dy);
      for (int t = 0; t < 4; ++t)
        out.values[out.index(part, c, t)] = avg_pool_rect(loc.map(part, c, t), shifted);
    }
  return out;
}

void deformable_pool_backward(const PooledScores& scores, std::span<const double> grad_scores,
                              const PartGrid& grid, std::vector<Grid2D>& grad_maps) {
  if (grad_scores.size() != scores.values.size())
    throw DimensionMismatch("deformable_pool_backward: gradient size mismatch");
  if (scores.num_parts != grid.num_parts() || grad_maps.size() != scores.values.size())
    throw DimensionMismatch("deformable_pool_backward: provenance does not match grid/maps");
  for (int part = 0; part < scores.num_parts; ++part)
    for (int c = 0; c <= scores.num_classes; ++c) {
      const size_t idx = scores.index(part, c);
      const double g = grad_scores[idx];
      if (g == 0.0) continue;
      const Displacement& d = scores.provenance[idx];
      avg_pool_rect_backward(grid.cells[part].shifted(d.dx, d.dy), g, grad_maps[idx]);
    }
}

void pool_localization_backward(std::span<const double> grad_loc, const PartGrid& grid,
                                std::span<const DeformationField> fields, int num_classes,
                                std::vector<Grid2D>& grad_loc_maps) {
  const int parts = grid.num_parts();
  check_fields(fields, parts, num_classes);
  const size_t n = static_cast<size_t>(parts) * num_classes * 4;
  if (grad_loc.size() != n || grad_loc_maps.size() != n)
    throw DimensionMismatch("pool_localization_backward: size mismatch");
  for (int part = 0; part < parts; ++part)
    for (int c = 1; c <= num_classes; ++c) {
      const Displacement& d = fields[c - 1].parts[part];
      const Rect shifted = grid.cells[part].shifted(d.dx, d.dy);
      for (int t = 0; t < 4; ++t) {
        const size_t idx = (static_cast<size_t>(part) * num_classes + (c - 1)) * 4 + t;
        if (grad_loc[idx] != 0.0) avg_pool_rect_backward(shifted, grad_loc[idx], grad_loc_maps[idx]);
      }
    }
}

std::string to_json_line(const DeformationRecord& r) {
  nlohmann::json j;
  j["region"] = r.region_id;
  j["image"] = r.image_id;
  j["class"] = r.cls;
  j["displacements"] = r.displacements;
  return j.dump();
}

DeformationRecord parse_deformation_record(const std::string& line) {
  try {
    const nlohmann::json j = nlohmann::json::parse(line);
    DeformationRecord r;
    r.region_id = j.at("region").get<int>();
    r.image_id = j.at("image").get<int>();
    r.cls = j.at("class").get<int>();
    r.displacements = j.at("displacements").get<std::vector<double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("deformation record: ") + e.what());
  }
}

}  // namespace partpool
