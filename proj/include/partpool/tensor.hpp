#ifndef PARTPOOL_TENSOR_HPP_
#define PARTPOOL_TENSOR_HPP_

#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace partpool {

// Error hierarchy shared by every module. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyRect : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateRegion : public Error {
 public:
  using Error::Error;
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

class ConfigInvalid : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// One dense row-major channel of scalars.
class Grid2D {
 public:
  Grid2D(int height, int width, double fill = 0.0);
  Grid2D(int height, int width, std::vector<double> values);

  int height() const { return height_; }
  int width() const { return width_; }
  int size() const { return height_ * width_; }

  // Bounds-checked access.
  double at(int y, int x) const;
  double& at(int y, int x);

  // Unchecked access for inner loops.
  double operator()(int y, int x) const { return values_[y * width_ + x]; }
  double& operator()(int y, int x) { return values_[y * width_ + x]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  void fill(double v);

  bool operator==(const Grid2D& other) const = default;

 private:
  int height_;
  int width_;
  std::vector<double> values_;
};

/// Half-open rectangle [x0, x1) x [y0, y1) in continuous cell coordinates.
/// Cell (y, x) has its center at (x + 0.5, y + 0.5).
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const;
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
  Rect shifted(double dx, double dy) const { return {x0 + dx, y0 + dy, x1 + dx, y1 + dy}; }
  Rect clamped(double width, double height) const;

  bool operator==(const Rect& other) const = default;
};

/// Integer index ranges [y_begin, y_end) x [x_begin, x_end) of the map cells
/// whose centers fall inside a rect, after clamping to the map.
struct CellRange {
  int y_begin = 0;
  int y_end = 0;
  int x_begin = 0;
  int x_end = 0;

  int count() const;
  bool empty() const { return count() == 0; }
};

CellRange covered_cells(const Rect& rect, int height, int width);

double avg_pool_rect(const Grid2D& map, const Rect& rect);

/// Summed-area table for constant-time sums over cell ranges. Rounding
/// differs from a direct sum, so it is suited to ranking candidates.
class SummedArea {
 public:
  explicit SummedArea(const Grid2D& map);

  double sum(const CellRange& cells) const;
  double average(const CellRange& cells) const;  // EmptyRect if no cell

 private:
  int height_;
  int width_;
  std::vector<double> table_;  // (height + 1) x (width + 1)
};
void avg_pool_rect_backward(const Rect& rect, double upstream, Grid2D& grad_map);

inline constexpr double kNormEpsilon = 1e-12;

// out[c] = v[c] / sqrt(sum v^2 + eps)
std::vector<double> l2_normalize_block(std::span<const double> values);
std::vector<double> l2_normalize_block_backward(std::span<const double> values,
                                                std::span<const double> upstream);

/// Fully connected layer with gradient accumulators living beside the
/// parameters. Accumulators are only cleared by zero_grad().
struct AffineParams {
  AffineParams() = default;
  AffineParams(int in_dim, int out_dim);

  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> weight;  // out_dim x in_dim, row-major
  std::vector<double> bias;
  std::vector<double> grad_weight;
  std::vector<double> grad_bias;

  double& w(int o, int i) { return weight[static_cast<size_t>(o) * in_dim + i]; }
  double w(int o, int i) const { return weight[static_cast<size_t>(o) * in_dim + i]; }
  void zero_grad();
};

std::vector<double> affine_forward(const AffineParams& params, std::span<const double> input);
// Accumulates into params.grad_* and returns d(loss)/d(input).
std::vector<double> affine_backward(AffineParams& params, std::span<const double> input,
                                    std::span<const double> upstream);

std::vector<double> relu(std::span<const double> input);
std::vector<double> relu_backward(std::span<const double> input, std::span<const double> upstream);

std::vector<double> softmax(std::span<const double> logits);
// Vector-Jacobian product of softmax, given its output.
std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> upstream);

double cross_entropy_loss(std::span<const double> probs, int label);
// Gradient w.r.t. the probabilities.
std::vector<double> cross_entropy_backward(std::span<const double> probs, int label);

double smooth_l1(double x);
double smooth_l1_grad(double x);
double smooth_l1_loss(std::span<const double> prediction, std::span<const double> target);
std::vector<double> smooth_l1_loss_backward(std::span<const double> prediction,
                                            std::span<const double> target);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central-difference gradient of f at point.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> point,
                                         double h = 1e-5);

// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
// turning round-off into huge ratios.
inline constexpr double kRelErrorFloor = 1e-3;
double relative_error(double a, double b, double floor = kRelErrorFloor);
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = kRelErrorFloor);

}  // namespace partpool

#endif  // PARTPOOL_TENSOR_HPP_
