#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tssl/augment.hpp"

using namespace tssl;
using namespace tssl::augment;

namespace {

data::DataTable random_table(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  data::DataTable table;
  table.features = Matrix(n, d);
  for (double& v : table.features.values) v = rng.normal();
  for (std::size_t j = 0; j < d; ++j)
    table.feature_names.push_back("f" + std::to_string(j));
  return table;
}

bool in_pool(const data::EmpiricalMarginals& pools, std::size_t feature, double v) {
  const auto& pool = pools.pools[feature];
  return std::find(pool.begin(), pool.end(), v) != pool.end();
}

}  // namespace

TEST_CASE("scarf_corrupt: c=0 is the identity") {
  const auto table = random_table(6, 5, 1);
  const auto pools = data::marginals(table);
  Rng rng(2);
  const Matrix out = scarf_corrupt(table.features, pools, 0.0, rng);
  CHECK(out.values == table.features.values);
}

TEST_CASE("scarf_corrupt: c=1 makes every entry a pool member") {
  const auto table = random_table(8, 4, 3);
  const auto pools = data::marginals(table);
  Rng rng(4);
  const Matrix out = scarf_corrupt(table.features, pools, 1.0, rng);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) CHECK(in_pool(pools, j, out(i, j)));
}

TEST_CASE("scarf_corrupt replaces exactly round(c*d) features per row") {
  // d=4, c=0.3: round(1.2) = 1 replaced feature per example.
  const auto table = random_table(50, 4, 5);
  const auto pools = data::marginals(table);
  Rng rng(6);
  const Matrix out = scarf_corrupt(table.features, pools, 0.3, rng);
  for (std::size_t i = 0; i < out.rows; ++i) {
    std::size_t changed = 0;
    for (std::size_t j = 0; j < out.cols; ++j)
      if (out(i, j) != table.features(i, j)) ++changed;
    // A replacement may coincide with the original value by chance, so the
    // observed count never exceeds the drawn count.
    CHECK(changed <= 1);
  }

  // With continuous data a pool draw almost surely differs, so most rows
  // show exactly one changed feature.
  std::size_t rows_changed = 0;
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j)
      if (out(i, j) != table.features(i, j)) {
        ++rows_changed;
        break;
      }
  CHECK(rows_changed >= 40);
}

TEST_CASE("scarf_corrupt is deterministic for a fixed seed") {
  const auto table = random_table(10, 6, 7);
  const auto pools = data::marginals(table);
  Rng a(42), b(42);
  const Matrix out_a = scarf_corrupt(table.features, pools, 0.5, a);
  const Matrix out_b = scarf_corrupt(table.features, pools, 0.5, b);
  CHECK(out_a.values == out_b.values);
}

TEST_CASE("vime_corrupt: p_m=0 gives an all-zero mask and the input back") {
  const auto table = random_table(5, 5, 8);
  const auto pools = data::marginals(table);
  Rng rng(9);
  const auto [out, mask] = vime_corrupt(table.features, pools, 0.0, rng);
  CHECK(out.values == table.features.values);
  for (auto m : mask.values) CHECK(m == 0);
}

TEST_CASE("vime_corrupt: p_m=1 masks everything with pool members") {
  const auto table = random_table(5, 5, 10);
  const auto pools = data::marginals(table);
  Rng rng(11);
  const auto [out, mask] = vime_corrupt(table.features, pools, 1.0, rng);
  for (auto m : mask.values) CHECK(m == 1);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) CHECK(in_pool(pools, j, out(i, j)));
}

TEST_CASE("vime_corrupt: empirical mask rate concentrates around p_m") {
  const auto table = random_table(10000, 8, 12);
  const auto pools = data::marginals(table);
  Rng rng(13);
  const auto [out, mask] = vime_corrupt(table.features, pools, 0.3, rng);
  double rate = 0.0;
  for (auto m : mask.values) rate += m;
  rate /= static_cast<double>(mask.values.size());
  CHECK(std::fabs(rate - 0.3) <= 0.02);
}

TEST_CASE("vime_corrupt: the returned mask is the mask actually applied") {
  const auto table = random_table(30, 7, 14);
  const auto pools = data::marginals(table);
  Rng rng(15);
  const auto [out, mask] = vime_corrupt(table.features, pools, 0.4, rng);
  for (std::size_t i = 0; i < out.rows; ++i)
    for (std::size_t j = 0; j < out.cols; ++j) {
      if (mask(i, j) == 0) {
        CHECK(out(i, j) == table.features(i, j));  // bit-identical
      } else {
        CHECK(in_pool(pools, j, out(i, j)));
      }
    }
}

TEST_CASE("corruption propagates dimension mismatches") {
  const auto table = random_table(4, 3, 16);
  const auto pools = data::marginals(random_table(4, 5, 17));
  Rng rng(18);
  CHECK_THROWS_AS(scarf_corrupt(table.features, pools, 0.3, rng), Error);
  CHECK_THROWS_AS(vime_corrupt(table.features, pools, 0.3, rng), Error);
}
