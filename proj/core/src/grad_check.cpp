#include "tssl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tssl/rng.hpp"

namespace tssl::nn {

namespace {

// Scale-aware relative error: coordinates far below the gradient's own
// magnitude are measured against that magnitude, so finite-difference noise
// on a near-zero coordinate is not amplified into a spurious failure while a
// genuinely wrong gradient still registers at O(1).
double relative_error(double analytic, double numeric, double grad_scale) {
  const double denom = std::max(
      {std::fabs(analytic), std::fabs(numeric), 1e-3 * grad_scale, 1e-12});
  return std::fabs(analytic - numeric) / denom;
}

std::vector<std::size_t> sample_coords(std::size_t total, std::size_t max_coords,
                                       std::uint64_t seed) {
  std::vector<std::size_t> coords(total);
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (total <= max_coords) return coords;
  Rng rng(seed_mix(seed, "grad_check"));
  // Partial Fisher-Yates: first max_coords entries are a uniform sample.
  for (std::size_t i = 0; i < max_coords; ++i) {
    const std::size_t j = i + rng.index(total - i);
    std::swap(coords[i], coords[j]);
  }
  coords.resize(max_coords);
  return coords;
}

void check_finite_loss(double value) {
  if (!std::isfinite(value))
    fail(ErrorKind::numeric, "grad_check: loss is not finite at the given point");
}

}  // namespace

double grad_check(const std::function<double(const ParamStore&)>& loss_fn,
                  const ParamStore& analytic_grads, const ParamStore& params,
                  double h, std::uint64_t seed, std::size_t max_coords) {
  if (!(h > 0.0)) fail(ErrorKind::contract, "grad_check: h must be positive");
  check_finite_loss(loss_fn(params));

  // Flatten addresses of every trainable coordinate in traversal order.
  ParamStore work = params;
  std::vector<double*> slots;
  for_each_trainable(work, [&](std::vector<double>& a) {
    for (double& v : a) slots.push_back(&v);
  });
  std::vector<double> analytic;
  analytic.reserve(slots.size());
  for_each_trainable(analytic_grads, [&](const std::vector<double>& a) {
    analytic.insert(analytic.end(), a.begin(), a.end());
  });
  if (analytic.size() != slots.size())
    fail(ErrorKind::dimension, "grad_check: gradient store shape mismatch");

  double grad_scale = 0.0;
  for (double a : analytic) grad_scale = std::max(grad_scale, std::fabs(a));

  double worst = 0.0;
  for (std::size_t idx : sample_coords(slots.size(), max_coords, seed)) {
    const double saved = *slots[idx];
    *slots[idx] = saved + h;
    const double up = loss_fn(work);
    *slots[idx] = saved - h;
    const double down = loss_fn(work);
    *slots[idx] = saved;
    check_finite_loss(up);
    check_finite_loss(down);
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic[idx], numeric, grad_scale));
  }
  return worst;
}

double grad_check_matrix(const std::function<double(const Matrix&)>& loss_fn,
                         const Matrix& analytic_grad, const Matrix& point,
                         double h, std::uint64_t seed, std::size_t max_coords) {
  if (!(h > 0.0)) fail(ErrorKind::contract, "grad_check: h must be positive");
  require_same_shape(analytic_grad, point, "grad_check_matrix");
  check_finite_loss(loss_fn(point));

  double grad_scale = 0.0;
  for (double a : analytic_grad.values) grad_scale = std::max(grad_scale, std::fabs(a));

  Matrix work = point;
  double worst = 0.0;
  for (std::size_t idx : sample_coords(work.values.size(), max_coords, seed)) {
    const double saved = work.values[idx];
    work.values[idx] = saved + h;
    const double up = loss_fn(work);
    work.values[idx] = saved - h;
    const double down = loss_fn(work);
    work.values[idx] = saved;
    check_finite_loss(up);
    check_finite_loss(down);
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic_grad.values[idx], numeric, grad_scale));
  }
  return worst;
}

}  // namespace tssl::nn
