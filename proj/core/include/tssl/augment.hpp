#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tssl/data.hpp"
#include "tssl/matrix.hpp"
#include "tssl/rng.hpp"

namespace tssl::augment {

struct CorruptionConfig {
  double corruption_fraction = 0.3;  // SCARF c
  double mask_probability = 0.3;     // VIME p_m
  std::uint64_t seed = 0;
};

struct MaskMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> values;  // row-major, entries in {0,1}

  MaskMatrix() = default;
  MaskMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0) {}
  std::uint8_t& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  std::uint8_t operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// SCARF view: per example, exactly round(c·d) feature indices chosen
/// uniformly without replacement, each replaced by a uniform draw from that
/// feature's marginal pool. Unchosen features are bit-identical to the input.
Matrix scarf_corrupt(const Matrix& batch, const data::EmpiricalMarginals& marginals,
                     double c, Rng& rng);

/// VIME view: independent Bernoulli(p_m) mask; masked entries resampled from
/// the marginal pools. Returns the corrupted batch and the mask actually
/// applied.
std::pair<Matrix, MaskMatrix> vime_corrupt(const Matrix& batch,
                                           const data::EmpiricalMarginals& marginals,
                                           double p_m, Rng& rng);

}  // namespace tssl::augment
