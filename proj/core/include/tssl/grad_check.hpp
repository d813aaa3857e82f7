#pragma once

#include <functional>

#include "tssl/nn.hpp"

namespace tssl::nn {

/// Central-difference gradient check over a sampled subset of trainable
/// coordinates (200, or all of them when fewer exist). Returns the maximum
/// relative error between the analytic gradient and (f(p+h)-f(p-h))/2h,
/// where the per-coordinate denominator is floored at 1e-3 of the gradient's
/// infinity norm so near-zero coordinates are judged against the gradient's
/// own scale. A non-finite loss raises a numeric error.
double grad_check(const std::function<double(const ParamStore&)>& loss_fn,
                  const ParamStore& analytic_grads, const ParamStore& params,
                  double h, std::uint64_t seed = 0, std::size_t max_coords = 200);

/// Same check for a loss of a single matrix argument (input gradients).
double grad_check_matrix(const std::function<double(const Matrix&)>& loss_fn,
                         const Matrix& analytic_grad, const Matrix& point,
                         double h, std::uint64_t seed = 0,
                         std::size_t max_coords = 200);

}  // namespace tssl::nn
