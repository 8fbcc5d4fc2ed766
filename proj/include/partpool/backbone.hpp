#ifndef PARTPOOL_BACKBONE_HPP_
#define PARTPOOL_BACKBONE_HPP_

#include <cstdint>
#include <vector>

#include "partpool/tensor.hpp"

namespace partpool {

/// Channel-major stack of equally sized maps: data[(c * height + y) * width + x].
struct Tensor3 {
  Tensor3() = default;
  Tensor3(int channels, int height, int width, double fill = 0.0);

  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double& at(int c, int y, int x) { return data[(static_cast<size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  double* channel(int c) { return data.data() + static_cast<size_t>(c) * height * width; }
  const double* channel(int c) const { return data.data() + static_cast<size_t>(c) * height * width; }
  Grid2D channel_grid(int c) const;
  void fill(double v);

  bool operator==(const Tensor3& other) const = default;
};

/// Same-padded 2D convolution with dilation and stride.
struct ConvParams {
  ConvParams() = default;
  ConvParams(int out_channels, int in_channels, int kernel_h, int kernel_w, int dilation = 1,
             int stride = 1);

  int out_channels = 0;
  int in_channels = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int dilation = 1;
  int stride = 1;
  std::vector<double> weight;  // out x in x kh x kw
  std::vector<double> bias;
  std::vector<double> grad_weight;
  std::vector<double> grad_bias;

  size_t weight_index(int o, int i, int ky, int kx) const {
    return ((static_cast<size_t>(o) * in_channels + i) * kernel_h + ky) * kernel_w + kx;
  }
  int fan_in() const { return in_channels * kernel_h * kernel_w; }
  void zero_grad();
};

Tensor3 dilated_conv_forward(const ConvParams& params, const Tensor3& input);
// Accumulates parameter gradients and returns the gradient w.r.t. input.
Tensor3 dilated_conv_backward(ConvParams& params, const Tensor3& input, const Tensor3& upstream);
// Same, adding the input gradient into *grad_input unless it is null.
void dilated_conv_backward(ConvParams& params, const Tensor3& input, const Tensor3& upstream,
                           Tensor3* grad_input);

// Mean over non-overlapping factor x factor blocks; trailing rows/cols that do
// not fill a block are dropped.
Tensor3 avg_downsample(const Tensor3& input, int factor);

Tensor3 relu(const Tensor3& input);
Tensor3 relu_backward(const Tensor3& input, const Tensor3& upstream);

/// Per-part, per-class classification score maps z and their per-location
/// L2-normalized copy. Class 0 is background.
class FeatureStack {
 public:
  // raw must hold exactly k*k*(num_classes+1) channels, ordered part-major:
  // channel = part * (num_classes + 1) + cls.
  FeatureStack(int k, int num_classes, Tensor3 raw);

  int k() const { return k_; }
  int num_parts() const { return k_ * k_; }
  int num_classes() const { return num_classes_; }
  int height() const { return raw_.height; }
  int width() const { return raw_.width; }

  int channel_index(int part, int cls) const { return part * (num_classes_ + 1) + cls; }
  const Grid2D& normalized(int part, int cls) const { return normalized_[channel_index(part, cls)]; }
  const Tensor3& raw() const { return raw_; }
  const std::vector<Grid2D>& normalized_maps() const { return normalized_; }
  const std::vector<SummedArea>& summed_maps() const { return summed_; }

  // Maps per-map gradients on the normalized copy back onto raw z.
  Tensor3 normalization_backward(const std::vector<Grid2D>& grad_normalized) const;

 private:
  int k_;
  int num_classes_;
  Tensor3 raw_;
  std::vector<Grid2D> normalized_;
  std::vector<SummedArea> summed_;
};

/// Per-part, per-foreground-class box regression maps (tx, ty, tw, th).
class LocStack {
 public:
  // channel = (part * num_classes + (cls - 1)) * 4 + coord
  LocStack(int k, int num_classes, Tensor3 raw);

  int k() const { return k_; }
  int num_parts() const { return k_ * k_; }
  int num_classes() const { return num_classes_; }
  int height() const { return raw_.height; }
  int width() const { return raw_.width; }

  int channel_index(int part, int cls, int coord) const {
    return (part * num_classes_ + (cls - 1)) * 4 + coord;
  }
  const Grid2D& map(int part, int cls, int coord) const { return maps_[channel_index(part, cls, coord)]; }
  const Tensor3& raw() const { return raw_; }

 private:
  int k_;
  int num_classes_;
  Tensor3 raw_;
  std::vector<Grid2D> maps_;
};

struct BackboneConfig {
  int input_channels = 3;
  int hidden_channels = 16;
  int k = 7;
  int num_classes = 3;
  int downsample = 4;
};

/// Three 3x3 convs with ReLU (the last dilated by 2) after a fixed average
/// downsample, then two sibling 1x1 convs emitting the score stacks.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& config);

  struct Activations {
    Tensor3 input;  // after downsampling
    Tensor3 pre1, act1, pre2, act2, pre3, act3;
  };

  struct Output {
    FeatureStack features;
    LocStack loc;
    Activations acts;
  };

  const BackboneConfig& config() const { return config_; }

  Output forward(const Tensor3& image) const;
  // Accumulates gradients for every layer given gradients on the raw stacks.
  void backward(const Activations& acts, const Tensor3& grad_cls, const Tensor3& grad_loc);

  void init_uniform(uint64_t seed);
  void zero_grad();

  std::vector<ConvParams*> layers() { return {&conv1, &conv2, &conv3, &cls_head, &loc_head}; }
  std::vector<const ConvParams*> layers() const {
    return {&conv1, &conv2, &conv3, &cls_head, &loc_head};
  }

  ConvParams conv1;
  ConvParams conv2;
  ConvParams conv3;
  ConvParams cls_head;
  ConvParams loc_head;

 private:
  BackboneConfig config_;
};

struct Stacks {
  FeatureStack features;
  LocStack loc;
};

/// One forward pass for a whole image; the result is shared by all of its regions.
Stacks build_stacks(const Backbone& backbone, const Tensor3& image);

}  // namespace partpool

#endif  // PARTPOOL_BACKBONE_HPP_
