#include "partpool/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>

#include "partpool/backbone.hpp"
#include "partpool/dp_pool.hpp"
#include "partpool/heads.hpp"
#include "partpool/model.hpp"
#include "partpool/rng.hpp"
#include "partpool/tensor.hpp"

namespace partpool {

namespace {

struct Comparison {
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// One random point per call; nullopt when the point sits too close to a kink
// or an argmax boundary to be compared.
using PointCheck = std::function<std::optional<Comparison>(Rng&, double h)>;

std::vector<double> normals(Rng& rng, size_t n, double sigma = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng, 0.0, sigma);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void append(std::vector<double>& out, std::span<const double> v) { out.insert(out.end(), v.begin(), v.end()); }

std::optional<Comparison> check_avg_pool(Rng& rng, double h) {
  const int H = 6, W = 7;
  const std::vector<double> point = normals(rng, H * W);
  const double x0 = uniform(rng, 0.0, 3.0), y0 = uniform(rng, 0.0, 3.0);
  const Rect rect{x0, y0, x0 + uniform(rng, 1.0, 4.0), y0 + uniform(rng, 1.0, 3.0)};
  const double u = normal(rng, 0.0, 1.0);
  Grid2D grad(H, W);
  avg_pool_rect_backward(rect, u, grad);
  auto f = [&](std::span<const double> p) {
    return u * avg_pool_rect(Grid2D(H, W, std::vector<double>(p.begin(), p.end())), rect);
  };
  return Comparison{{grad.values().begin(), grad.values().end()}, finite_diff_gradient(f, point, h)};
}

std::optional<Comparison> check_l2(Rng& rng, double h) {
  const std::vector<double> v = normals(rng, 4);
  const std::vector<double> u = normals(rng, 4);
  auto f = [&](std::span<const double> p) { return dot(u, l2_normalize_block(p)); };
  return Comparison{l2_normalize_block_backward(v, u), finite_diff_gradient(f, v, h)};
}

std::optional<Comparison> check_affine(Rng& rng, double h) {
  const int in = 5, out = 3;
  AffineParams a(in, out);
  a.weight = normals(rng, in * out);
  a.bias = normals(rng, out);
  const std::vector<double> x = normals(rng, in);
  const std::vector<double> u = normals(rng, out);
  std::vector<double> point = x;
  append(point, a.weight);
  append(point, a.bias);
  a.zero_grad();
  Comparison c;
  c.analytic = affine_backward(a, x, u);
  append(c.analytic, a.grad_weight);
  append(c.analytic, a.grad_bias);
  auto f = [&](std::span<const double> p) {
    AffineParams q(in, out);
    q.weight.assign(p.begin() + in, p.begin() + in + in * out);
    q.bias.assign(p.begin() + in + in * out, p.end());
    return dot(u, affine_forward(q, p.subspan(0, in)));
  };
  c.numeric = finite_diff_gradient(f, point, h);
  return c;
}

std::optional<Comparison> check_conv(Rng& rng, double h) {
  // Alternate between a dilated and a strided layer.
  const bool strided = uniform_int(rng, 0, 1) == 1;
  ConvParams conv(3, 2, 3, 3, strided ? 1 : 2, strided ? 2 : 1);
  conv.weight = normals(rng, conv.weight.size(), 0.5);
  conv.bias = normals(rng, conv.bias.size());
  Tensor3 input(2, strided ? 8 : 7, strided ? 8 : 6);
  input.data = normals(rng, input.data.size());
  const Tensor3 probe = dilated_conv_forward(conv, input);
  const std::vector<double> u = normals(rng, probe.data.size());
  Tensor3 up(probe.channels, probe.height, probe.width);
  up.data = u;

  const size_t ni = input.data.size(), nw = conv.weight.size();
  std::vector<double> point = input.data;
  append(point, conv.weight);
  append(point, conv.bias);
  conv.zero_grad();
  Comparison c;
  c.analytic = dilated_conv_backward(conv, input, up).data;
  append(c.analytic, conv.grad_weight);
  append(c.analytic, conv.grad_bias);
  auto f = [&](std::span<const double> p) {
    ConvParams q = conv;
    Tensor3 x = input;
    std::copy(p.begin(), p.begin() + ni, x.data.begin());
    std::copy(p.begin() + ni, p.begin() + ni + nw, q.weight.begin());
    std::copy(p.begin() + ni + nw, p.end(), q.bias.begin());
    return dot(u, dilated_conv_forward(q, x).data);
  };
  c.numeric = finite_diff_gradient(f, point, h);
  return c;
}

std::optional<Comparison> check_deformable_pool(Rng& rng, double h) {
  const int k = 3, C = 2, H = 7, W = 7;
  const double lambdas[] = {0.1, 0.3, 1.0};
  const double lambda = lambdas[uniform_int(rng, 0, 2)];
  Tensor3 cls(k * k * (C + 1), H, W);
  cls.data = normals(rng, cls.data.size());
  Tensor3 loc(k * k * C * 4, H, W);
  loc.data = normals(rng, loc.data.size());
  const double x0 = uniform(rng, 0.0, 2.5), y0 = uniform(rng, 0.0, 2.5);
  const Region region{Rect{x0, y0, x0 + uniform(rng, 3.0, W - x0), y0 + uniform(rng, 3.0, H - y0)}, 0, {}};
  PartGrid grid;
  try {
    grid = fit_part_grid(region, k, H, W);
  } catch (const DegenerateRegion&) {
    return std::nullopt;
  }
  const SearchRadius search = default_search_radius(grid);

  const FeatureStack stack(k, C, cls);
  const DeformablePoolResult base = deformable_pool(stack, grid, lambda, search);
  const double min_margin = *std::min_element(base.scores.margins.begin(), base.scores.margins.end());
  if (min_margin <= 10.0 * h) return std::nullopt;

  const std::vector<double> u = normals(rng, base.scores.values.size());
  const LocStack loc_stack(k, C, loc);
  const PooledLoc pooled_loc = pool_localization(loc_stack, grid, base.fields);
  const std::vector<double> u_loc = normals(rng, pooled_loc.values.size());

  std::vector<Grid2D> grad_norm(cls.channels, Grid2D(H, W));
  deformable_pool_backward(base.scores, u, grid, grad_norm);
  std::vector<Grid2D> grad_loc(loc.channels, Grid2D(H, W));
  pool_localization_backward(u_loc, grid, base.fields, C, grad_loc);

  Comparison c;
  c.analytic = stack.normalization_backward(grad_norm).data;
  append(c.analytic, to_tensor(grad_loc).data);

  // Any perturbation that moves an argmax invalidates the comparison.
  bool stable = true;
  auto f_cls = [&](std::span<const double> p) {
    Tensor3 t = cls;
    t.data.assign(p.begin(), p.end());
    const DeformablePoolResult r = deformable_pool(FeatureStack(k, C, t), grid, lambda, search);
    for (size_t i = 0; i < r.scores.provenance.size(); ++i) {
      const Displacement& a = r.scores.provenance[i];
      const Displacement& b = base.scores.provenance[i];
      if (a.dx != b.dx || a.dy != b.dy) stable = false;
    }
    return dot(u, r.scores.values);
  };
  auto f_loc = [&](std::span<const double> p) {
    Tensor3 t = loc;
    t.data.assign(p.begin(), p.end());
    return dot(u_loc, pool_localization(LocStack(k, C, t), grid, base.fields).values);
  };
  c.numeric = finite_diff_gradient(f_cls, cls.data, h);
  append(c.numeric, finite_diff_gradient(f_loc, loc.data, h));
  if (!stable) return std::nullopt;
  return c;
}

std::optional<Comparison> check_refine(Rng& rng, double h) {
  const int parts = 9, hidden = 8;
  RefineParams params(parts, hidden);
  params.layer1.weight = normals(rng, params.layer1.weight.size(), 0.5);
  params.layer1.bias = normals(rng, params.layer1.bias.size(), 0.5);
  params.layer2.weight = normals(rng, params.layer2.weight.size(), 0.5);
  params.layer2.bias = normals(rng, params.layer2.bias.size(), 0.5);
  const std::vector<double> field = normals(rng, 2 * parts, 0.5);
  const std::vector<double> base_v = normals(rng, 4);
  const BoxDelta base{base_v[0], base_v[1], base_v[2], base_v[3]};
  const std::vector<double> u = normals(rng, 4);

  RefineTrace trace;
  refine_localization(params, field, base, &trace);
  for (double v : trace.hidden_pre)
    if (std::abs(v) < 1e-3) return std::nullopt;

  const size_t nf = field.size();
  const size_t n1w = params.layer1.weight.size(), n1b = params.layer1.bias.size();
  const size_t n2w = params.layer2.weight.size();
  std::vector<double> point = field;
  append(point, base_v);
  append(point, params.layer1.weight);
  append(point, params.layer1.bias);
  append(point, params.layer2.weight);
  append(point, params.layer2.bias);

  params.zero_grad();
  const RefineGrads g = refine_localization_backward(params, trace, {u[0], u[1], u[2], u[3]});
  Comparison c;
  c.analytic = g.field;
  append(c.analytic, g.base);
  append(c.analytic, params.layer1.grad_weight);
  append(c.analytic, params.layer1.grad_bias);
  append(c.analytic, params.layer2.grad_weight);
  append(c.analytic, params.layer2.grad_bias);

  auto f = [&](std::span<const double> p) {
    RefineParams q = params;
    size_t o = nf + 4;
    std::copy(p.begin() + o, p.begin() + o + n1w, q.layer1.weight.begin());
    o += n1w;
    std::copy(p.begin() + o, p.begin() + o + n1b, q.layer1.bias.begin());
    o += n1b;
    std::copy(p.begin() + o, p.begin() + o + n2w, q.layer2.weight.begin());
    o += n2w;
    std::copy(p.begin() + o, p.end(), q.layer2.bias.begin());
    const BoxDelta b{p[nf], p[nf + 1], p[nf + 2], p[nf + 3]};
    return dot(u, refine_localization(q, p.subspan(0, nf), b));
  };
  c.numeric = finite_diff_gradient(f, point, h);
  return c;
}

std::optional<Comparison> check_multitask(Rng& rng, double h) {
  const int C = 3;
  const double weight = 7.0;
  const int label = uniform_int(rng, 0, C);
  const std::vector<double> logits = normals(rng, C + 1);
  std::vector<BoxDelta> deltas(C);
  for (BoxDelta& d : deltas)
    for (double& v : d) v = normal(rng, 0.0, 1.0);
  BoxDelta target;
  for (double& v : target) v = normal(rng, 0.0, 1.0);
  if (label > 0)
    for (int t = 0; t < 4; ++t)
      if (std::abs(std::abs(deltas[label - 1][t] - target[t]) - 1.0) < 1e-3) return std::nullopt;

  std::vector<double> point = logits;
  for (const BoxDelta& d : deltas) append(point, d);
  const LossGrads g = multitask_loss_backward(softmax(logits), label, deltas, target, weight);
  Comparison c;
  c.analytic = g.logits;
  for (const BoxDelta& d : g.deltas) append(c.analytic, d);
  auto f = [&](std::span<const double> p) {
    std::vector<BoxDelta> ds(C);
    for (int cl = 0; cl < C; ++cl)
      for (int t = 0; t < 4; ++t) ds[cl][t] = p[C + 1 + cl * 4 + t];
    return multitask_loss(softmax(p.subspan(0, C + 1)), label, ds, target, weight).total;
  };
  c.numeric = finite_diff_gradient(f, point, h);
  return c;
}

struct Operator {
  std::string name;
  PointCheck check;
};

const std::vector<Operator>& operators() {
  static const std::vector<Operator> ops = {
      {"avg_pool_rect", check_avg_pool},
      {"l2_normalize_block", check_l2},
      {"affine", check_affine},
      {"dilated_conv", check_conv},
      {"deformable_pool", check_deformable_pool},
      {"refine_localization", check_refine},
      {"multitask_loss", check_multitask},
  };
  return ops;
}

}  // namespace

const std::vector<std::string>& gradient_operator_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const Operator& op : operators()) n.push_back(op.name);
    return n;
  }();
  return names;
}

std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options) {
  std::vector<GradCheckResult> results;
  for (size_t i = 0; i < operators().size(); ++i) {
    const Operator& op = operators()[i];
    Rng rng(derive_seed(options.seed, "gradcheck", i));
    GradCheckResult r;
    r.op = op.name;
    // Rejected points are redrawn, up to a bounded number of attempts.
    for (int attempt = 0; attempt < 20 * options.trials && r.points < options.trials; ++attempt) {
      std::optional<Comparison> c = op.check(rng, options.h);
      if (!c) {
        ++r.skipped;
        continue;
      }
      if (options.inject_fault == op.name)
        for (double& v : c->analytic) v *= 1.01;
      r.max_rel_error = std::max(r.max_rel_error, max_relative_error(c->analytic, c->numeric));
      ++r.points;
    }
    r.passed = r.points > 0 && r.max_rel_error < options.tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace partpool
