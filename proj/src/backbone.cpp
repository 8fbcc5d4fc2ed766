#include "partpool/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "partpool/rng.hpp"

namespace partpool {

Tensor3::Tensor3(int c, int h, int w, double fill) : channels(c), height(h), width(w) {
  if (c < 1 || h < 1 || w < 1) throw DimensionMismatch("Tensor3: dimensions must be >= 1");
  data.assign(static_cast<size_t>(c) * h * w, fill);
}

Grid2D Tensor3::channel_grid(int c) const {
  const double* p = channel(c);
  return Grid2D(height, width, std::vector<double>(p, p + static_cast<size_t>(height) * width));
}

void Tensor3::fill(double v) { std::fill(data.begin(), data.end(), v); }

ConvParams::ConvParams(int out, int in, int kh, int kw, int dil, int str)
    : out_channels(out), in_channels(in), kernel_h(kh), kernel_w(kw), dilation(dil), stride(str) {
  if (out < 1 || in < 1) throw DimensionMismatch("ConvParams: channel counts must be >= 1");
  if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0)
    throw DimensionMismatch("ConvParams: kernel sizes must be odd");
  if (dil < 1 || str < 1) throw DimensionMismatch("ConvParams: dilation and stride must be >= 1");
  weight.assign(static_cast<size_t>(out) * in * kh * kw, 0.0);
  bias.assign(out, 0.0);
  grad_weight.assign(weight.size(), 0.0);
  grad_bias.assign(out, 0.0);
}

void ConvParams::zero_grad() {
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
}

namespace {

void check_conv_input(const ConvParams& p, const Tensor3& input) {
  if (input.channels != p.in_channels) {
    std::ostringstream os;
    os << "conv: input has " << input.channels << " channels, expected " << p.in_channels;
    throw DimensionMismatch(os.str());
  }
  if (input.height < p.stride || input.width < p.stride)
    throw DimensionMismatch("conv: input smaller than stride");
}

// Output rows y with 0 <= y*stride + off < n.
std::pair<int, int> valid_range(int off, int n, int out_n, int stride) {
  int lo = 0;
  while (lo < out_n && lo * stride + off < 0) ++lo;
  int hi = out_n;
  while (hi > lo && (hi - 1) * stride + off >= n) --hi;
  return {lo, hi};
}

}  // namespace

namespace {

// Column matrix: row (i, ky, kx) holds the input tap of every output position,
// zero where the tap falls into the padding.
std::vector<double> im2col(const ConvParams& p, const Tensor3& input, int oh, int ow) {
  const size_t plane = static_cast<size_t>(oh) * ow;
  std::vector<double> cols(static_cast<size_t>(p.fan_in()) * plane, 0.0);
  for (int i = 0; i < p.in_channels; ++i) {
    const double* src = input.channel(i);
    for (int ky = 0; ky < p.kernel_h; ++ky) {
      const int offy = (ky - p.kernel_h / 2) * p.dilation;
      const auto [y0, y1] = valid_range(offy, input.height, oh, p.stride);
      for (int kx = 0; kx < p.kernel_w; ++kx) {
        const int offx = (kx - p.kernel_w / 2) * p.dilation;
        const auto [x0, x1] = valid_range(offx, input.width, ow, p.stride);
        double* dst = cols.data() + ((static_cast<size_t>(i) * p.kernel_h + ky) * p.kernel_w + kx) * plane;
        for (int y = y0; y < y1; ++y) {
          const double* row = src + static_cast<size_t>(y * p.stride + offy) * input.width + offx;
          double* drow = dst + static_cast<size_t>(y) * ow;
          for (int x = x0; x < x1; ++x) drow[x] = row[x * p.stride];
        }
      }
    }
  }
  return cols;
}

void col2im_add(const ConvParams& p, const std::vector<double>& cols, int oh, int ow, Tensor3& grad_in) {
  const size_t plane = static_cast<size_t>(oh) * ow;
  for (int i = 0; i < p.in_channels; ++i) {
    double* dst = grad_in.channel(i);
    for (int ky = 0; ky < p.kernel_h; ++ky) {
      const int offy = (ky - p.kernel_h / 2) * p.dilation;
      const auto [y0, y1] = valid_range(offy, grad_in.height, oh, p.stride);
      for (int kx = 0; kx < p.kernel_w; ++kx) {
        const int offx = (kx - p.kernel_w / 2) * p.dilation;
        const auto [x0, x1] = valid_range(offx, grad_in.width, ow, p.stride);
        const double* src = cols.data() + ((static_cast<size_t>(i) * p.kernel_h + ky) * p.kernel_w + kx) * plane;
        for (int y = y0; y < y1; ++y) {
          double* row = dst + static_cast<size_t>(y * p.stride + offy) * grad_in.width + offx;
          const double* srow = src + static_cast<size_t>(y) * ow;
          for (int x = x0; x < x1; ++x) row[x * p.stride] += srow[x];
        }
      }
    }
  }
}

// Fixed-order dot product with four partial sums.
double dot(const double* a, const double* b, size_t n) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    acc[0] += a[j] * b[j];
    acc[1] += a[j + 1] * b[j + 1];
    acc[2] += a[j + 2] * b[j + 2];
    acc[3] += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) acc[0] += a[j] * b[j];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

}  // namespace

Tensor3 dilated_conv_forward(const ConvParams& p, const Tensor3& input) {
  check_conv_input(p, input);
  const int oh = input.height / p.stride;
  const int ow = input.width / p.stride;
  const size_t plane = static_cast<size_t>(oh) * ow;
  const int taps = p.fan_in();
  const std::vector<double> cols = im2col(p, input, oh, ow);
  Tensor3 out(p.out_channels, oh, ow);
  for (int o = 0; o < p.out_channels; ++o) {
    double* dst = out.channel(o);
    std::fill(dst, dst + plane, p.bias[o]);
    const double* w = p.weight.data() + static_cast<size_t>(o) * taps;
    for (int t = 0; t < taps; ++t) {
      const double wt = w[t];
      if (wt == 0.0) continue;
      const double* col = cols.data() + static_cast<size_t>(t) * plane;
      for (size_t n = 0; n < plane; ++n) dst[n] += wt * col[n];
    }
  }
  return out;
}

Tensor3 dilated_conv_backward(ConvParams& p, const Tensor3& input, const Tensor3& upstream) {
  Tensor3 grad_in(input.channels, input.height, input.width);
  dilated_conv_backward(p, input, upstream, &grad_in);
  return grad_in;
}

void dilated_conv_backward(ConvParams& p, const Tensor3& input, const Tensor3& upstream, Tensor3* grad_in) {
  check_conv_input(p, input);
  const int oh = input.height / p.stride;
  const int ow = input.width / p.stride;
  if (upstream.channels != p.out_channels || upstream.height != oh || upstream.width != ow)
    throw DimensionMismatch("conv backward: upstream shape mismatch");
  if (grad_in && (grad_in->channels != input.channels || grad_in->height != input.height ||
                  grad_in->width != input.width))
    throw DimensionMismatch("conv backward: input gradient shape mismatch");
  const size_t plane = static_cast<size_t>(oh) * ow;
  const int taps = p.fan_in();
  const std::vector<double> cols = im2col(p, input, oh, ow);
  std::vector<double> grad_cols(grad_in ? cols.size() : 0, 0.0);
  for (int o = 0; o < p.out_channels; ++o) {
    const double* up = upstream.channel(o);
    double gb = 0.0;
    for (size_t n = 0; n < plane; ++n) gb += up[n];
    p.grad_bias[o] += gb;
    const double* w = p.weight.data() + static_cast<size_t>(o) * taps;
    double* gw = p.grad_weight.data() + static_cast<size_t>(o) * taps;
    for (int t = 0; t < taps; ++t) {
      const double* col = cols.data() + static_cast<size_t>(t) * plane;
      gw[t] += dot(up, col, plane);
      if (grad_in) {
        const double wt = w[t];
        double* gcol = grad_cols.data() + static_cast<size_t>(t) * plane;
        for (size_t n = 0; n < plane; ++n) gcol[n] += wt * up[n];
      }
    }
  }
  if (grad_in) col2im_add(p, grad_cols, oh, ow, *grad_in);
}

Tensor3 avg_downsample(const Tensor3& input, int factor) {
  if (factor < 1) throw DimensionMismatch("avg_downsample: factor must be >= 1");
  const int oh = input.height / factor;
  const int ow = input.width / factor;
  if (oh < 1 || ow < 1) throw DimensionMismatch("avg_downsample: input smaller than factor");
  Tensor3 out(input.channels, oh, ow);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < input.channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) s += input.at(c, y * factor + dy, x * factor + dx);
        out.at(c, y, x) = s * inv;
      }
  return out;
}

Tensor3 relu(const Tensor3& input) {
  Tensor3 out = input;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor3 relu_backward(const Tensor3& input, const Tensor3& upstream) {
  if (input.data.size() != upstream.data.size())
    throw DimensionMismatch("relu_backward: shape mismatch");
  Tensor3 grad = upstream;
  for (size_t n = 0; n < grad.data.size(); ++n)
    if (!(input.data[n] > 0.0)) grad.data[n] = 0.0;
  return grad;
}

FeatureStack::FeatureStack(int k, int num_classes, Tensor3 raw)
    : k_(k), num_classes_(num_classes), raw_(std::move(raw)) {
  if (k < 1 || num_classes < 1) throw DimensionMismatch("FeatureStack: k and C must be >= 1");
  if (raw_.channels != k * k * (num_classes + 1)) {
    std::ostringstream os;
    os << "FeatureStack: expected " << k * k * (num_classes + 1) << " maps, got " << raw_.channels;
    throw DimensionMismatch(os.str());
  }
  const int blocks = num_classes + 1;
  Tensor3 norm(raw_.channels, raw_.height, raw_.width);
  std::vector<double> block(blocks);
  for (int part = 0; part < k * k; ++part)
    for (int y = 0; y < raw_.height; ++y)
      for (int x = 0; x < raw_.width; ++x) {
        for (int c = 0; c < blocks; ++c) block[c] = raw_.at(channel_index(part, c), y, x);
        const std::vector<double> n = l2_normalize_block(block);
        for (int c = 0; c < blocks; ++c) norm.at(channel_index(part, c), y, x) = n[c];
      }
  normalized_.reserve(raw_.channels);
  for (int ch = 0; ch < raw_.channels; ++ch) normalized_.push_back(norm.channel_grid(ch));
  summed_.reserve(raw_.channels);
  for (const Grid2D& m : normalized_) summed_.emplace_back(m);
}

Tensor3 FeatureStack::normalization_backward(const std::vector<Grid2D>& grad_normalized) const {
  if (grad_normalized.size() != static_cast<size_t>(raw_.channels))
    throw DimensionMismatch("normalization_backward: map count mismatch");
  const int blocks = num_classes_ + 1;
  Tensor3 grad(raw_.channels, raw_.height, raw_.width);
  std::vector<double> block(blocks), up(blocks);
  for (int part = 0; part < num_parts(); ++part)
    for (int y = 0; y < raw_.height; ++y)
      for (int x = 0; x < raw_.width; ++x) {
        bool any = false;
        for (int c = 0; c < blocks; ++c) {
          up[c] = grad_normalized[channel_index(part, c)](y, x);
          any = any || up[c] != 0.0;
        }
        if (!any) continue;
        for (int c = 0; c < blocks; ++c) block[c] = raw_.at(channel_index(part, c), y, x);
        const std::vector<double> g = l2_normalize_block_backward(block, up);
        for (int c = 0; c < blocks; ++c) grad.at(channel_index(part, c), y, x) = g[c];
      }
  return grad;
}

LocStack::LocStack(int k, int num_classes, Tensor3 raw)
    : k_(k), num_classes_(num_classes), raw_(std::move(raw)) {
  if (k < 1 || num_classes < 1) throw DimensionMismatch("LocStack: k and C must be >= 1");
  if (raw_.channels != k * k * num_classes * 4) {
    std::ostringstream os;
    os << "LocStack: expected " << k * k * num_classes * 4 << " maps, got " << raw_.channels;
    throw DimensionMismatch(os.str());
  }
  maps_.reserve(raw_.channels);
  for (int ch = 0; ch < raw_.channels; ++ch) maps_.push_back(raw_.channel_grid(ch));
}

Backbone::Backbone(const BackboneConfig& cfg)
    : conv1(cfg.hidden_channels, cfg.input_channels, 3, 3, 1, 1),
      conv2(cfg.hidden_channels, cfg.hidden_channels, 3, 3, 1, 1),
      conv3(cfg.hidden_channels, cfg.hidden_channels, 3, 3, 2, 1),
      cls_head(cfg.k * cfg.k * (cfg.num_classes + 1), cfg.hidden_channels, 1, 1, 1, 1),
      loc_head(cfg.k * cfg.k * cfg.num_classes * 4, cfg.hidden_channels, 1, 1, 1, 1),
      config_(cfg) {
  if (cfg.downsample < 1) throw DimensionMismatch("Backbone: downsample must be >= 1");
}

Backbone::Output Backbone::forward(const Tensor3& image) const {
  Activations a;
  a.input = avg_downsample(image, config_.downsample);
  a.pre1 = dilated_conv_forward(conv1, a.input);
  a.act1 = relu(a.pre1);
  a.pre2 = dilated_conv_forward(conv2, a.act1);
  a.act2 = relu(a.pre2);
  a.pre3 = dilated_conv_forward(conv3, a.act2);
  a.act3 = relu(a.pre3);
  Tensor3 cls = dilated_conv_forward(cls_head, a.act3);
  Tensor3 loc = dilated_conv_forward(loc_head, a.act3);
  return Output{FeatureStack(config_.k, config_.num_classes, std::move(cls)),
                LocStack(config_.k, config_.num_classes, std::move(loc)), std::move(a)};
}

void Backbone::backward(const Activations& a, const Tensor3& grad_cls, const Tensor3& grad_loc) {
  Tensor3 g3 = dilated_conv_backward(cls_head, a.act3, grad_cls);
  const Tensor3 g3_loc = dilated_conv_backward(loc_head, a.act3, grad_loc);
  for (size_t n = 0; n < g3.data.size(); ++n) g3.data[n] += g3_loc.data[n];
  const Tensor3 g2 = dilated_conv_backward(conv3, a.act2, relu_backward(a.pre3, g3));
  const Tensor3 g1 = dilated_conv_backward(conv2, a.act1, relu_backward(a.pre2, g2));
  // The input is data; its gradient is never needed.
  dilated_conv_backward(conv1, a.input, relu_backward(a.pre1, g1), nullptr);
}

void Backbone::init_uniform(uint64_t seed) {
  Rng rng(seed);
  for (ConvParams* layer : layers()) {
    const double s = 1.0 / std::sqrt(static_cast<double>(layer->fan_in()));
    for (double& w : layer->weight) w = uniform(rng, -s, s);
    for (double& b : layer->bias) b = uniform(rng, -s, s);
  }
}

void Backbone::zero_grad() {
  for (ConvParams* layer : layers()) layer->zero_grad();
}

Stacks build_stacks(const Backbone& backbone, const Tensor3& image) {
  Backbone::Output out = backbone.forward(image);
  return Stacks{std::move(out.features), std::move(out.loc)};
}

}  // namespace partpool
