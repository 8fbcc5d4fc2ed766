#include "partpool/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "partpool/rng.hpp"

namespace partpool {

namespace {

BackboneConfig backbone_config(const Config& c) {
  BackboneConfig b;
  b.input_channels = c.scene.channels;
  b.hidden_channels = c.hidden_channels;
  b.k = c.k;
  b.num_classes = c.num_classes;
  b.downsample = c.downsample;
  return b;
}

}  // namespace

Model::Model(const Config& config)
    : backbone(backbone_config(config)), refine(config.k * config.k, config.refine_hidden) {}

void Model::init(uint64_t seed) {
  backbone.init_uniform(splitmix64(seed ^ 0x1ULL));
  refine.init_identity(splitmix64(seed ^ 0x2ULL));
}

void Model::zero_grad() {
  backbone.zero_grad();
  refine.zero_grad();
}

std::vector<Model::ParamRef> Model::parameters() {
  std::vector<ParamRef> out;
  const char* names[] = {"conv1", "conv2", "conv3", "cls_head", "loc_head"};
  const std::vector<ConvParams*> layers = backbone.layers();
  for (size_t i = 0; i < layers.size(); ++i) {
    out.push_back({std::string(names[i]) + ".weight", layers[i]->weight, layers[i]->grad_weight});
    out.push_back({std::string(names[i]) + ".bias", layers[i]->bias, layers[i]->grad_bias});
  }
  out.push_back({"refine1.weight", refine.layer1.weight, refine.layer1.grad_weight});
  out.push_back({"refine1.bias", refine.layer1.bias, refine.layer1.grad_bias});
  out.push_back({"refine2.weight", refine.layer2.weight, refine.layer2.grad_weight});
  out.push_back({"refine2.bias", refine.layer2.bias, refine.layer2.grad_bias});
  return out;
}

PoolSettings PoolSettings::from(const Config& c) {
  PoolSettings s;
  s.k = c.k;
  s.lambda_def = c.lambda_def;
  s.search = c.search_radius;
  s.enlarge_factor = c.enlarge_factor;
  s.refine = c.refine;
  s.logit_scale = c.logit_scale;
  return s;
}

RegionForward forward_region(const Model& model, const Stacks& stacks, const Region& proposal,
                             const PoolSettings& settings) {
  const FeatureStack& features = stacks.features;
  const int H = features.height();
  const int W = features.width();
  const int C = features.num_classes();
  RegionForward f;
  f.proposal = proposal;
  const Region enlarged = enlarge_region(proposal, settings.enlarge_factor, H, W);
  f.grid = fit_part_grid(enlarged, settings.k, H, W);
  if (std::isinf(settings.lambda_def)) {
    f.pool.scores = ps_pool(features, f.grid);
    f.pool.fields = zero_fields(f.grid.num_parts(), C);
  } else {
    f.pool = deformable_pool(features, f.grid, settings.lambda_def,
                             settings.search.value_or(default_search_radius(f.grid)));
  }
  f.loc = pool_localization(stacks.loc, f.grid, f.pool.fields);
  f.logits = classify_logits(f.pool.scores);
  for (double& l : f.logits) l *= settings.logit_scale;
  f.probs = softmax(f.logits);
  f.base = localize_base(f.loc);
  if (settings.refine) {
    f.deltas.resize(C);
    f.traces.resize(C);
    for (int c = 1; c <= C; ++c)
      f.deltas[c - 1] = refine_localization(model.refine, f.pool.fields[c - 1].values(), f.base[c - 1],
                                            &f.traces[c - 1]);
  } else {
    f.deltas = f.base;
  }
  return f;
}

StackGrads::StackGrads(const FeatureStack& features, const LocStack& loc) {
  cls_normalized.assign(features.raw().channels, Grid2D(features.height(), features.width()));
  this->loc.assign(loc.raw().channels, Grid2D(loc.height(), loc.width()));
}

void backward_region(Model& model, const RegionForward& f, std::span<const double> grad_logits,
                     std::span<const BoxDelta> grad_deltas, const PoolSettings& settings,
                     StackGrads& grads) {
  std::vector<double> scaled(grad_logits.begin(), grad_logits.end());
  for (double& g : scaled) g *= settings.logit_scale;
  const std::vector<double> grad_scores = classify_backward(f.pool.scores, scaled);
  deformable_pool_backward(f.pool.scores, grad_scores, f.grid, grads.cls_normalized);

  const int C = f.pool.scores.num_classes;
  if (grad_deltas.size() != static_cast<size_t>(C))
    throw DimensionMismatch("backward_region: one delta gradient per class required");
  std::vector<BoxDelta> grad_base(grad_deltas.begin(), grad_deltas.end());
  if (settings.refine) {
    for (int c = 1; c <= C; ++c) {
      const BoxDelta& up = grad_deltas[c - 1];
      if (up == BoxDelta{}) continue;
      grad_base[c - 1] = refine_localization_backward(model.refine, f.traces[c - 1], up).base;
    }
  }
  const std::vector<double> grad_loc = localize_base_backward(f.loc, grad_base);
  pool_localization_backward(grad_loc, f.grid, f.pool.fields, C, grads.loc);
}

Tensor3 to_tensor(const std::vector<Grid2D>& maps) {
  if (maps.empty()) throw DimensionMismatch("to_tensor: no maps");
  Tensor3 t(static_cast<int>(maps.size()), maps[0].height(), maps[0].width());
  for (size_t c = 0; c < maps.size(); ++c) {
    const auto v = maps[c].values();
    std::copy(v.begin(), v.end(), t.channel(static_cast<int>(c)));
  }
  return t;
}

namespace {

struct ManifestEntry {
  std::string name;
  uint32_t kind = 0;  // 0 conv, 1 affine
  std::vector<uint32_t> dims;
  uint32_t dilation = 1;
  uint32_t stride = 1;

  bool operator==(const ManifestEntry& other) const = default;
};

template <typename Values>
struct Layer {
  ManifestEntry entry;
  Values* weight;
  Values* bias;
};

// Works for both Model and const Model.
template <typename M>
auto layers_of(M& model) {
  using Values = std::remove_reference_t<decltype((model.refine.layer1.weight))>;
  std::vector<Layer<Values>> out;
  const char* names[] = {"conv1", "conv2", "conv3", "cls_head", "loc_head"};
  const auto convs = model.backbone.layers();
  for (size_t i = 0; i < convs.size(); ++i) {
    auto* p = convs[i];
    ManifestEntry e{names[i], 0,
                    {static_cast<uint32_t>(p->out_channels), static_cast<uint32_t>(p->in_channels),
                     static_cast<uint32_t>(p->kernel_h), static_cast<uint32_t>(p->kernel_w)},
                    static_cast<uint32_t>(p->dilation), static_cast<uint32_t>(p->stride)};
    out.push_back({e, &p->weight, &p->bias});
  }
  auto push_affine = [&out](const char* name, auto& a) {
    ManifestEntry e{name, 1, {static_cast<uint32_t>(a.out_dim), static_cast<uint32_t>(a.in_dim)}, 1, 1};
    out.push_back({e, &a.weight, &a.bias});
  };
  push_affine("refine1", model.refine.layer1);
  push_affine("refine2", model.refine.layer2);
  return out;
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint: truncated file");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("checkpoint: truncated file");
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  const auto layers = layers_of(model);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot write '" + tmp + "'");
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<uint32_t>(layers.size()));
    for (const auto& l : layers) {
      put_u32(os, static_cast<uint32_t>(l.entry.name.size()));
      os.write(l.entry.name.data(), static_cast<std::streamsize>(l.entry.name.size()));
      put_u32(os, l.entry.kind);
      put_u32(os, static_cast<uint32_t>(l.entry.dims.size()));
      for (uint32_t d : l.entry.dims) put_u32(os, d);
      put_u32(os, l.entry.dilation);
      put_u32(os, l.entry.stride);
    }
    for (const auto& l : layers) {
      for (double v : *l.weight) put_f64(os, v);
      for (double v : *l.bias) put_f64(os, v);
    }
    os.flush();
    if (!os) throw IoError("checkpoint: write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("checkpoint: cannot rename to '" + path + "': " + ec.message());
}

void load_checkpoint(Model& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot read '" + path + "'");
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw IoError("checkpoint: bad magic in '" + path + "'");
  const uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  auto layers = layers_of(model);
  const uint32_t count = get_u32(is);
  if (count > 1024) throw IoError("checkpoint: implausible layer count");
  std::vector<ManifestEntry> stored(count);
  for (ManifestEntry& e : stored) {
    const uint32_t len = get_u32(is);
    if (len > 256) throw IoError("checkpoint: implausible layer name length");
    e.name.resize(len);
    if (!is.read(e.name.data(), len)) throw IoError("checkpoint: truncated file");
    e.kind = get_u32(is);
    const uint32_t nd = get_u32(is);
    if (nd > 8) throw IoError("checkpoint: implausible rank");
    e.dims.resize(nd);
    for (uint32_t& d : e.dims) d = get_u32(is);
    e.dilation = get_u32(is);
    e.stride = get_u32(is);
  }
  if (stored.size() != layers.size())
    throw ShapeMismatch("checkpoint: layer count differs from config");
  for (size_t i = 0; i < layers.size(); ++i) {
    if (!(stored[i] == layers[i].entry)) {
      std::ostringstream os;
      os << "checkpoint: layer '" << stored[i].name << "' shape differs from config";
      throw ShapeMismatch(os.str());
    }
  }
  for (auto& l : layers) {
    for (double& v : *l.weight) v = get_f64(is);
    for (double& v : *l.bias) v = get_f64(is);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint: trailing bytes");
}

}  // namespace partpool
