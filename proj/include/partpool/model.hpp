#ifndef PARTPOOL_MODEL_HPP_
#define PARTPOOL_MODEL_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "partpool/backbone.hpp"
#include "partpool/config.hpp"
#include "partpool/dp_pool.hpp"
#include "partpool/heads.hpp"

namespace partpool {

/// Backbone plus the shared refinement layers: every trainable parameter.
class Model {
 public:
  explicit Model(const Config& config);

  void init(uint64_t seed);
  void zero_grad();

  struct ParamRef {
    std::string name;
    std::span<double> values;
    std::span<double> grads;
  };
  std::vector<ParamRef> parameters();

  Backbone backbone;
  RefineParams refine;
};

struct PoolSettings {
  int k = 7;
  double lambda_def = 0.3;  // +inf: position-sensitive pooling
  std::optional<SearchRadius> search;
  double enlarge_factor = 1.3;
  bool refine = true;
  double logit_scale = 1.0;

  static PoolSettings from(const Config& config);
};

/// Everything computed for one region, kept for the backward pass.
struct RegionForward {
  Region proposal;  // feature-map coordinates, before enlargement
  PartGrid grid;    // fitted to the enlarged box
  DeformablePoolResult pool;
  PooledLoc loc;
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<BoxDelta> base;    // index c - 1
  std::vector<BoxDelta> deltas;  // refined when refinement is on
  std::vector<RefineTrace> traces;
};

RegionForward forward_region(const Model& model, const Stacks& stacks, const Region& proposal,
                             const PoolSettings& settings);

/// Gradient buffers on the per-image stacks, filled region by region.
struct StackGrads {
  StackGrads(const FeatureStack& features, const LocStack& loc);
  std::vector<Grid2D> cls_normalized;
  std::vector<Grid2D> loc;
};

// Given d(loss)/d(logits) and d(loss)/d(deltas), scatters into grads and
// accumulates refinement parameter gradients.
void backward_region(Model& model, const RegionForward& fwd, std::span<const double> grad_logits,
                     std::span<const BoxDelta> grad_deltas, const PoolSettings& settings,
                     StackGrads& grads);

Tensor3 to_tensor(const std::vector<Grid2D>& maps);

// Binary checkpoint: magic, version, layer manifest, then little-endian f64
// values in manifest order. Writes go through a temp file and rename.
void save_checkpoint(const Model& model, const std::string& path);
// Throws IoError on unreadable/corrupt files, ShapeMismatch when the stored
// manifest differs from the model built from the config.
void load_checkpoint(Model& model, const std::string& path);

inline constexpr char kCheckpointMagic[8] = {'P', 'P', 'O', 'O', 'L', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

}  // namespace partpool

#endif  // PARTPOOL_MODEL_HPP_
