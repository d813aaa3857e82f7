#include "tssl/augment.hpp"

#include <cmath>
#include <numeric>

namespace tssl::augment {

namespace {

void require_pools(const Matrix& batch, const data::EmpiricalMarginals& marginals,
                   const char* op) {
  if (marginals.dim() != batch.cols)
    fail(ErrorKind::dimension, op, ": marginals cover ", marginals.dim(),
         " features, batch has ", batch.cols);
}

}  // namespace

Matrix scarf_corrupt(const Matrix& batch, const data::EmpiricalMarginals& marginals,
                     double c, Rng& rng) {
  if (!(c >= 0.0 && c <= 1.0))
    fail(ErrorKind::contract, "scarf_corrupt: c must lie in [0,1], got ", c);
  require_pools(batch, marginals, "scarf_corrupt");

  const std::size_t d = batch.cols;
  const auto per_row = static_cast<std::size_t>(
      std::lround(c * static_cast<double>(d)));
  Matrix out = batch;
  if (per_row == 0) return out;

  std::vector<std::size_t> order(d);
  for (std::size_t n = 0; n < batch.rows; ++n) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: the first per_row entries are a uniform subset.
    for (std::size_t i = 0; i < per_row; ++i) {
      const std::size_t j = i + rng.index(d - i);
      std::swap(order[i], order[j]);
      out(n, order[i]) = marginals.draw(order[i], rng);
    }
  }
  return out;
}

std::pair<Matrix, MaskMatrix> vime_corrupt(const Matrix& batch,
                                           const data::EmpiricalMarginals& marginals,
                                           double p_m, Rng& rng) {
  if (!(p_m >= 0.0 && p_m <= 1.0))
    fail(ErrorKind::contract, "vime_corrupt: p_m must lie in [0,1], got ", p_m);
  require_pools(batch, marginals, "vime_corrupt");

  Matrix out = batch;
  MaskMatrix mask(batch.rows, batch.cols);
  for (std::size_t n = 0; n < batch.rows; ++n)
    for (std::size_t j = 0; j < batch.cols; ++j)
      if (rng.bernoulli(p_m)) {
        mask(n, j) = 1;
        out(n, j) = marginals.draw(j, rng);
      }
  return {std::move(out), std::move(mask)};
}

}  // namespace tssl::augment
