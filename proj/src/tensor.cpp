#include "partpool/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace partpool {

namespace {

void require_same_size(size_t a, size_t b, const char* what) {
  if (a != b) {
    std::ostringstream os;
    os << what << ": size " << a << " vs " << b;
    throw DimensionMismatch(os.str());
  }
}

}  // namespace

Grid2D::Grid2D(int height, int width, double fill)
    : height_(height), width_(width) {
  if (height < 1 || width < 1) throw DimensionMismatch("Grid2D: dimensions must be >= 1");
  values_.assign(static_cast<size_t>(height) * width, fill);
}

Grid2D::Grid2D(int height, int width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height < 1 || width < 1) throw DimensionMismatch("Grid2D: dimensions must be >= 1");
  require_same_size(values_.size(), static_cast<size_t>(height) * width, "Grid2D storage");
}

double Grid2D::at(int y, int x) const {
  if (y < 0 || y >= height_ || x < 0 || x >= width_) throw std::out_of_range("Grid2D::at");
  return values_[static_cast<size_t>(y) * width_ + x];
}

double& Grid2D::at(int y, int x) {
  if (y < 0 || y >= height_ || x < 0 || x >= width_) throw std::out_of_range("Grid2D::at");
  return values_[static_cast<size_t>(y) * width_ + x];
}

void Grid2D::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

double Rect::area() const {
  if (x1 <= x0 || y1 <= y0) return 0.0;
  return (x1 - x0) * (y1 - y0);
}

Rect Rect::clamped(double width, double height) const {
  return {std::clamp(x0, 0.0, width), std::clamp(y0, 0.0, height), std::clamp(x1, 0.0, width),
          std::clamp(y1, 0.0, height)};
}

int CellRange::count() const {
  if (y_end <= y_begin || x_end <= x_begin) return 0;
  return (y_end - y_begin) * (x_end - x_begin);
}

CellRange covered_cells(const Rect& rect, int height, int width) {
  // Cell i is covered iff lo <= i + 0.5 < hi, i.e. ceil(lo - 0.5) <= i < ceil(hi - 0.5).
  auto lower = [](double lo, int n) {
    return static_cast<int>(std::clamp(std::ceil(lo - 0.5), 0.0, static_cast<double>(n)));
  };
  CellRange r;
  r.x_begin = lower(rect.x0, width);
  r.x_end = lower(rect.x1, width);
  r.y_begin = lower(rect.y0, height);
  r.y_end = lower(rect.y1, height);
  return r;
}

double avg_pool_rect(const Grid2D& map, const Rect& rect) {
  const CellRange cells = covered_cells(rect, map.height(), map.width());
  const int n = cells.count();
  if (n == 0) throw EmptyRect("avg_pool_rect: rect covers no map cell");
  double sum = 0.0;
  for (int y = cells.y_begin; y < cells.y_end; ++y)
    for (int x = cells.x_begin; x < cells.x_end; ++x) sum += map(y, x);
  return sum / n;
}

SummedArea::SummedArea(const Grid2D& map)
    : height_(map.height()), width_(map.width()),
      table_(static_cast<size_t>(map.height() + 1) * (map.width() + 1), 0.0) {
  const int stride = width_ + 1;
  for (int y = 0; y < height_; ++y) {
    double row = 0.0;
    for (int x = 0; x < width_; ++x) {
      row += map(y, x);
      table_[(y + 1) * stride + x + 1] = table_[y * stride + x + 1] + row;
    }
  }
}

double SummedArea::sum(const CellRange& c) const {
  if (c.empty()) return 0.0;
  const int stride = width_ + 1;
  return table_[c.y_end * stride + c.x_end] - table_[c.y_begin * stride + c.x_end] -
         table_[c.y_end * stride + c.x_begin] + table_[c.y_begin * stride + c.x_begin];
}

double SummedArea::average(const CellRange& c) const {
  const int n = c.count();
  if (n == 0) throw EmptyRect("SummedArea: empty cell range");
  return sum(c) / n;
}

void avg_pool_rect_backward(const Rect& rect, double upstream, Grid2D& grad_map) {
  const CellRange cells = covered_cells(rect, grad_map.height(), grad_map.width());
  const int n = cells.count();
  if (n == 0) throw EmptyRect("avg_pool_rect_backward: rect covers no map cell");
  const double g = upstream / n;
  for (int y = cells.y_begin; y < cells.y_end; ++y)
    for (int x = cells.x_begin; x < cells.x_end; ++x) grad_map(y, x) += g;
}

std::vector<double> l2_normalize_block(std::span<const double> values) {
  double sq = 0.0;
  for (double v : values) sq += v * v;
  std::vector<double> out(values.size(), 0.0);
  if (sq == 0.0) return out;
  const double inv = 1.0 / std::sqrt(sq + kNormEpsilon);
  for (size_t c = 0; c < values.size(); ++c) out[c] = values[c] * inv;
  return out;
}

std::vector<double> l2_normalize_block_backward(std::span<const double> values,
                                                std::span<const double> upstream) {
  require_same_size(values.size(), upstream.size(), "l2_normalize_block_backward");
  double sq = 0.0;
  for (double v : values) sq += v * v;
  std::vector<double> grad(values.size(), 0.0);
  // Zero blocks are held at zero by rule; nothing flows back through them.
  if (sq == 0.0) return grad;
  const double s = std::sqrt(sq + kNormEpsilon);
  double dot = 0.0;
  for (size_t c = 0; c < values.size(); ++c) dot += values[c] * upstream[c];
  const double s3 = s * s * s;
  for (size_t c = 0; c < values.size(); ++c) grad[c] = upstream[c] / s - values[c] * dot / s3;
  return grad;
}

AffineParams::AffineParams(int in, int out) : in_dim(in), out_dim(out) {
  if (in < 1 || out < 1) throw DimensionMismatch("AffineParams: dimensions must be >= 1");
  weight.assign(static_cast<size_t>(in) * out, 0.0);
  bias.assign(out, 0.0);
  grad_weight.assign(weight.size(), 0.0);
  grad_bias.assign(bias.size(), 0.0);
}

void AffineParams::zero_grad() {
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
}

std::vector<double> affine_forward(const AffineParams& params, std::span<const double> input) {
  require_same_size(input.size(), static_cast<size_t>(params.in_dim), "affine_forward");
  std::vector<double> out(params.bias);
  for (int o = 0; o < params.out_dim; ++o) {
    const double* row = params.weight.data() + static_cast<size_t>(o) * params.in_dim;
    double acc = 0.0;
    for (int i = 0; i < params.in_dim; ++i) acc += row[i] * input[i];
    out[o] += acc;
  }
  return out;
}

std::vector<double> affine_backward(AffineParams& params, std::span<const double> input,
                                    std::span<const double> upstream) {
  require_same_size(input.size(), static_cast<size_t>(params.in_dim), "affine_backward input");
  require_same_size(upstream.size(), static_cast<size_t>(params.out_dim),
                    "affine_backward upstream");
  std::vector<double> grad_input(params.in_dim, 0.0);
  for (int o = 0; o < params.out_dim; ++o) {
    const double g = upstream[o];
    if (g == 0.0) continue;
    params.grad_bias[o] += g;
    const size_t base = static_cast<size_t>(o) * params.in_dim;
    for (int i = 0; i < params.in_dim; ++i) {
      params.grad_weight[base + i] += g * input[i];
      grad_input[i] += g * params.weight[base + i];
    }
  }
  return grad_input;
}

std::vector<double> relu(std::span<const double> input) {
  std::vector<double> out(input.size());
  for (size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

std::vector<double> relu_backward(std::span<const double> input, std::span<const double> upstream) {
  require_same_size(input.size(), upstream.size(), "relu_backward");
  std::vector<double> grad(input.size());
  for (size_t i = 0; i < input.size(); ++i) grad[i] = input[i] > 0.0 ? upstream[i] : 0.0;
  return grad;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionMismatch("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> upstream) {
  require_same_size(probs.size(), upstream.size(), "softmax_backward");
  double dot = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) dot += probs[i] * upstream[i];
  std::vector<double> grad(probs.size());
  for (size_t i = 0; i < probs.size(); ++i) grad[i] = probs[i] * (upstream[i] - dot);
  return grad;
}

double cross_entropy_loss(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<size_t>(label) >= probs.size())
    throw DimensionMismatch("cross_entropy_loss: label out of range");
  return -std::log(std::max(probs[label], 1e-300));
}

std::vector<double> cross_entropy_backward(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<size_t>(label) >= probs.size())
    throw DimensionMismatch("cross_entropy_backward: label out of range");
  std::vector<double> grad(probs.size(), 0.0);
  grad[label] = -1.0 / std::max(probs[label], 1e-300);
  return grad;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

double smooth_l1_loss(std::span<const double> prediction, std::span<const double> target) {
  require_same_size(prediction.size(), target.size(), "smooth_l1_loss");
  double sum = 0.0;
  for (size_t i = 0; i < prediction.size(); ++i) sum += smooth_l1(prediction[i] - target[i]);
  return sum;
}

std::vector<double> smooth_l1_loss_backward(std::span<const double> prediction,
                                            std::span<const double> target) {
  require_same_size(prediction.size(), target.size(), "smooth_l1_loss_backward");
  std::vector<double> grad(prediction.size());
  for (size_t i = 0; i < prediction.size(); ++i) grad[i] = smooth_l1_grad(prediction[i] - target[i]);
  return grad;
}

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> point,
                                         double h) {
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double max_relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  require_same_size(a.size(), b.size(), "max_relative_error");
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

}  // namespace partpool
