#include "tssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "tssl/checkpoint.hpp"

namespace tssl::data {

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.index(i)]);
}

std::vector<std::vector<std::size_t>> rows_by_class(const DataTable& table) {
  std::vector<std::vector<std::size_t>> by_class(table.n_classes());
  for (std::size_t i = 0; i < table.labels.size(); ++i)
    by_class[static_cast<std::size_t>(table.labels[i])].push_back(i);
  return by_class;
}

// Largest-remainder allocation of n items to quotas n*fractions[k]; the
// result sums to n and every bucket is within 1 of its exact quota.
std::vector<std::size_t> largest_remainder(std::size_t n,
                                           std::span<const double> fractions) {
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const double quota = static_cast<double>(n) * fractions[k];
    counts[k] = static_cast<std::size_t>(std::floor(quota));
    assigned += counts[k];
    remainders.emplace_back(quota - std::floor(quota), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned)
    counts[remainders[i % remainders.size()].second] += 1;
  return counts;
}

}  // namespace

DataTable DataTable::select_rows(std::span<const std::size_t> rows) const {
  DataTable out;
  out.features = Matrix(rows.size(), dim());
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(features.row_ptr(rows[r]), dim(), out.features.row_ptr(r));
  if (has_labels()) {
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) out.labels.push_back(labels[r]);
  }
  out.feature_names = feature_names;
  out.class_names = class_names;
  return out;
}

void SplitPlan::validate() const {
  auto in_unit = [](double f) { return f > 0.0 && f < 1.0; };
  if (!in_unit(pretrain_fraction) || !in_unit(finetune_fraction) ||
      !in_unit(test_fraction))
    fail(ErrorKind::contract, "SplitPlan: fractions must lie in (0,1)");
  const double total = pretrain_fraction + finetune_fraction + test_fraction;
  if (std::fabs(total - 1.0) > 1e-9)
    fail(ErrorKind::contract, "SplitPlan: fractions sum to ", total, ", expected 1");
  if (!in_unit(validation_fraction))
    fail(ErrorKind::contract, "SplitPlan: validation fraction must lie in (0,1)");
}

DataTable load_csv(const std::string& path,
                   const std::optional<std::string>& label_column) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open: ", path);

  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::schema, path, ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      header.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }

  std::size_t label_idx = header.size();
  if (label_column) {
    const auto it = std::find(header.begin(), header.end(), *label_column);
    if (it == header.end())
      fail(ErrorKind::schema, path, ": no column named '", *label_column, "'");
    label_idx = static_cast<std::size_t>(it - header.begin());
  }

  DataTable table;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != label_idx) table.feature_names.push_back(header[j]);
  const std::size_t d = table.feature_names.size();
  if (d == 0) fail(ErrorKind::schema, path, ": no feature columns");

  std::vector<double> values;
  std::vector<std::string> raw_labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    std::size_t start = 0, col = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string cell = line.substr(start, comma - start);
      if (col >= header.size())
        fail(ErrorKind::schema, path, ": row ", row, " has more cells than the header");
      if (col == label_idx) {
        raw_labels.push_back(cell);
      } else {
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str() || *end != '\0' || !std::isfinite(v))
          fail(ErrorKind::numeric, path, ": non-numeric cell '", cell, "' at row ",
               row, ", column '", header[col], "'");
        values.push_back(v);
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
      ++col;
    }
    if (col + 1 != header.size())
      fail(ErrorKind::schema, path, ": row ", row, " has ", col + 1,
           " cells, header has ", header.size());
  }
  if (row == 0) fail(ErrorKind::schema, path, ": no data rows");

  table.features = Matrix(row, d);
  table.features.values = std::move(values);

  if (label_column) {
    std::unordered_map<std::string, int> index_of;
    table.labels.reserve(raw_labels.size());
    for (const auto& name : raw_labels) {
      auto [it, inserted] = index_of.emplace(name, static_cast<int>(table.class_names.size()));
      if (inserted) table.class_names.push_back(name);
      table.labels.push_back(it->second);
    }
  }
  return table;
}

std::pair<DataTable, PreprocessStats> preprocess(const DataTable& table,
                                                 bool log2_transform) {
  PreprocessStats stats;
  stats.log2_transform = log2_transform;
  const std::size_t n = table.size(), d = table.dim();
  if (n == 0) fail(ErrorKind::contract, "preprocess: empty table");

  Matrix logged = table.features;
  if (log2_transform) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double v = logged(i, j);
        if (v < 0.0)
          fail(ErrorKind::numeric, "preprocess: negative count ", v, " at row ", i,
               ", column '", table.feature_names[j], "' with log transform enabled");
        logged(i, j) = std::log2(v + 1.0);
      }
  }

  stats.mean.assign(d, 0.0);
  stats.stddev.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += logged(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = logged(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    stats.mean[j] = mean;
    stats.stddev[j] = std::sqrt(var);
    if (stats.stddev[j] == 0.0) stats.zero_variance_features.push_back(j);
  }
  return {apply_preprocess(table, stats), stats};
}

DataTable apply_preprocess(const DataTable& table, const PreprocessStats& stats) {
  if (stats.mean.size() != table.dim())
    fail(ErrorKind::dimension, "apply_preprocess: stats cover ", stats.mean.size(),
         " features, table has ", table.dim());
  DataTable out = table;
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < out.dim(); ++j) {
      double v = out.features(i, j);
      if (stats.log2_transform) {
        if (v < 0.0)
          fail(ErrorKind::numeric, "apply_preprocess: negative count ", v,
               " at row ", i, ", column '", table.feature_names[j], "'");
        v = std::log2(v + 1.0);
      }
      out.features(i, j) =
          stats.stddev[j] == 0.0 ? 0.0 : (v - stats.mean[j]) / stats.stddev[j];
    }
  return out;
}

Split stratified_split(const DataTable& table, const SplitPlan& plan) {
  plan.validate();
  if (!table.has_labels())
    fail(ErrorKind::contract, "stratified_split: table has no labels");

  const double fractions[3] = {plan.pretrain_fraction, plan.finetune_fraction,
                               plan.test_fraction};
  auto by_class = rows_by_class(table);
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (by_class[c].size() < 3)
      fail(ErrorKind::split, "stratified_split: class '", table.class_names[c],
           "' has ", by_class[c].size(), " examples, need at least 3");

  Rng rng(seed_mix(plan.seed, "stratified_split"));
  SplitIndices idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    shuffle_indices(rows, rng);
    const auto counts = largest_remainder(rows.size(), fractions);
    std::size_t cursor = 0;
    auto take = [&](std::vector<std::size_t>& dst, std::size_t k) {
      for (std::size_t i = 0; i < k; ++i) dst.push_back(rows[cursor++]);
    };
    take(idx.pretrain, counts[0]);
    take(idx.finetune, counts[1]);
    take(idx.test, counts[2]);
  }
  std::sort(idx.pretrain.begin(), idx.pretrain.end());
  std::sort(idx.finetune.begin(), idx.finetune.end());
  std::sort(idx.test.begin(), idx.test.end());

  Split split;
  split.pretrain = table.select_rows(idx.pretrain);
  split.finetune = table.select_rows(idx.finetune);
  split.test = table.select_rows(idx.test);
  split.indices = std::move(idx);
  return split;
}

DataTable subsample_fraction(const DataTable& table, double p, std::uint64_t seed,
                             bool stratified) {
  if (!(p > 0.0 && p <= 1.0))
    fail(ErrorKind::contract, "subsample_fraction: p must lie in (0,1], got ", p);
  const std::size_t n = table.size();
  const auto target =
      static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  Rng rng(seed_mix(seed, "subsample"));

  std::vector<std::size_t> chosen;
  if (stratified) {
    if (!table.has_labels())
      fail(ErrorKind::contract, "subsample_fraction: stratified mode needs labels");
    auto by_class = rows_by_class(table);
    // Strip classes absent from this table but keep index mapping.
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < by_class.size(); ++c)
      if (!by_class[c].empty()) present.push_back(c);
    if (target < present.size())
      fail(ErrorKind::split, "subsample_fraction: ", target,
           " rows cannot cover ", present.size(), " classes");
    std::vector<double> fractions;
    fractions.reserve(present.size());
    for (std::size_t c : present)
      fractions.push_back(static_cast<double>(by_class[c].size()) /
                          static_cast<double>(n));
    const auto counts = largest_remainder(target, fractions);
    for (std::size_t k = 0; k < present.size(); ++k) {
      auto& rows = by_class[present[k]];
      shuffle_indices(rows, rng);
      const std::size_t take = std::min(counts[k], rows.size());
      chosen.insert(chosen.end(), rows.begin(), rows.begin() + take);
    }
  } else {
    chosen.resize(n);
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    shuffle_indices(chosen, rng);
    chosen.resize(target);
  }
  std::sort(chosen.begin(), chosen.end());
  return table.select_rows(chosen);
}

std::pair<DataTable, DataTable> split_off_fraction(const DataTable& table,
                                                   double fraction,
                                                   std::uint64_t seed,
                                                   bool stratified) {
  if (!(fraction > 0.0 && fraction < 1.0))
    fail(ErrorKind::contract, "split_off_fraction: fraction must lie in (0,1)");
  const std::size_t n = table.size();
  Rng rng(seed_mix(seed, "split_off"));
  std::vector<std::size_t> carved, rest;

  if (stratified && table.has_labels()) {
    const double fractions[2] = {1.0 - fraction, fraction};
    auto by_class = rows_by_class(table);
    for (auto& rows : by_class) {
      if (rows.empty()) continue;
      shuffle_indices(rows, rng);
      const auto counts = largest_remainder(rows.size(), fractions);
      rest.insert(rest.end(), rows.begin(), rows.begin() + counts[0]);
      carved.insert(carved.end(), rows.begin() + counts[0], rows.end());
    }
  } else {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    shuffle_indices(idx, rng);
    const double fractions[2] = {1.0 - fraction, fraction};
    const auto counts = largest_remainder(n, fractions);
    rest.assign(idx.begin(), idx.begin() + counts[0]);
    carved.assign(idx.begin() + counts[0], idx.end());
  }
  std::sort(rest.begin(), rest.end());
  std::sort(carved.begin(), carved.end());
  return {table.select_rows(rest), table.select_rows(carved)};
}

std::pair<DataTable, DataTable> common_features(const DataTable& a,
                                                const DataTable& b) {
  std::unordered_map<std::string, std::size_t> b_index;
  for (std::size_t j = 0; j < b.feature_names.size(); ++j)
    b_index.emplace(b.feature_names[j], j);

  std::vector<std::size_t> a_cols, b_cols;
  for (std::size_t j = 0; j < a.feature_names.size(); ++j) {
    const auto it = b_index.find(a.feature_names[j]);
    if (it != b_index.end()) {
      a_cols.push_back(j);
      b_cols.push_back(it->second);
    }
  }
  if (a_cols.empty())
    fail(ErrorKind::schema, "common_features: feature name sets are disjoint");

  auto project = [](const DataTable& t, std::span<const std::size_t> cols) {
    DataTable out;
    out.features = Matrix(t.size(), cols.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t k = 0; k < cols.size(); ++k)
        out.features(i, k) = t.features(i, cols[k]);
    for (std::size_t k : cols) out.feature_names.push_back(t.feature_names[k]);
    out.labels = t.labels;
    out.class_names = t.class_names;
    return out;
  };
  return {project(a, a_cols), project(b, b_cols)};
}

EmpiricalMarginals marginals(const DataTable& table) {
  if (table.size() == 0) fail(ErrorKind::contract, "marginals: empty table");
  EmpiricalMarginals m;
  m.pools.resize(table.dim());
  for (std::size_t j = 0; j < table.dim(); ++j) {
    auto& pool = m.pools[j];
    pool.reserve(table.size());
    for (std::size_t i = 0; i < table.size(); ++i)
      pool.push_back(table.features(i, j));
  }
  return m;
}

DataTable synthetic_corpus(const SyntheticSpec& spec) {
  if (spec.n_features < spec.n_classes)
    fail(ErrorKind::contract, "synthetic_corpus: need n_features >= n_classes");
  if (spec.n_redundant_groups == 0 || spec.n_redundant_groups > spec.n_features)
    fail(ErrorKind::contract,
         "synthetic_corpus: n_redundant_groups must lie in [1, n_features]");

  Rng rng(seed_mix(spec.seed, "synthetic_corpus"));
  const std::size_t g = spec.n_redundant_groups;

  // Even partition of features into redundant groups.
  std::vector<std::size_t> group_of(spec.n_features);
  for (std::size_t f = 0; f < spec.n_features; ++f)
    group_of[f] = f * g / spec.n_features;

  // Affine copy coefficients per feature.
  std::vector<double> slope(spec.n_features), offset(spec.n_features);
  for (std::size_t f = 0; f < spec.n_features; ++f) {
    slope[f] = rng.uniform(0.8, 1.2);
    offset[f] = rng.normal(0.0, 0.25);
  }

  // Per-class latent means per group.
  std::vector<std::vector<double>> class_mean(spec.n_classes,
                                              std::vector<double>(g));
  for (auto& row : class_mean)
    for (double& v : row) v = rng.normal(0.0, spec.class_spread);

  const std::size_t n = spec.n_classes * spec.samples_per_class;
  DataTable table;
  table.features = Matrix(n, spec.n_features);
  table.labels.reserve(n);
  std::vector<double> latent(g);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
      const std::size_t row = c * spec.samples_per_class + s;
      for (std::size_t k = 0; k < g; ++k)
        latent[k] = class_mean[c][k] + rng.normal(0.0, 1.0);
      for (std::size_t f = 0; f < spec.n_features; ++f)
        table.features(row, f) = slope[f] * latent[group_of[f]] + offset[f] +
                                 rng.normal(0.0, spec.feature_noise);
      table.labels.push_back(static_cast<int>(c));
    }
  }
  table.feature_names.reserve(spec.n_features);
  for (std::size_t f = 0; f < spec.n_features; ++f)
    table.feature_names.push_back("g" + std::to_string(f));
  table.class_names.reserve(spec.n_classes);
  for (std::size_t c = 0; c < spec.n_classes; ++c)
    table.class_names.push_back("class" + std::to_string(c));
  return table;
}

namespace {
constexpr char kTableMagic[4] = {'T', 'S', 'S', 'T'};
constexpr std::uint16_t kTableVersion = 1;
}  // namespace

void save_table(const std::string& path, const DataTable& table) {
  ByteWriter payload;
  payload.u64(table.size());
  payload.u64(table.dim());
  payload.u8(table.has_labels() ? 1 : 0);
  for (const auto& name : table.feature_names) payload.str(name);
  if (table.has_labels()) {
    payload.u32(static_cast<std::uint32_t>(table.class_names.size()));
    for (const auto& name : table.class_names) payload.str(name);
    payload.u64(table.labels.size());
    for (int label : table.labels) payload.u32(static_cast<std::uint32_t>(label));
  }
  payload.f64_array(table.features.values);

  ByteWriter w;
  for (char c : kTableMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kTableVersion);
  auto bytes = w.take();
  const auto& body = payload.bytes();
  bytes.insert(bytes.end(), body.begin(), body.end());
  const std::uint64_t checksum = fnv1a64(body.data(), body.size());
  for (std::size_t i = 0; i < 8; ++i)
    bytes.push_back(static_cast<unsigned char>((checksum >> (8 * i)) & 0xff));
  write_file(path, bytes);
}

DataTable load_table(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 14 || std::memcmp(bytes.data(), kTableMagic, 4) != 0)
    fail(ErrorKind::schema, path, ": not a TSSL table cache");
  ByteReader header(bytes.data() + 4, 2);
  if (header.u16() != kTableVersion)
    fail(ErrorKind::schema, path, ": unsupported table version");
  const std::size_t payload_size = bytes.size() - 4 - 2 - 8;
  const unsigned char* payload = bytes.data() + 6;
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
  if (stored != fnv1a64(payload, payload_size))
    fail(ErrorKind::schema, path, ": table checksum mismatch");

  ByteReader r(payload, payload_size);
  DataTable table;
  const std::uint64_t n = r.u64();
  const std::uint64_t d = r.u64();
  const bool labeled = r.u8() != 0;
  table.feature_names.reserve(d);
  for (std::uint64_t j = 0; j < d; ++j) table.feature_names.push_back(r.str());
  if (labeled) {
    const std::uint32_t n_classes = r.u32();
    table.class_names.reserve(n_classes);
    for (std::uint32_t c = 0; c < n_classes; ++c) table.class_names.push_back(r.str());
    const std::uint64_t n_labels = r.u64();
    table.labels.reserve(n_labels);
    for (std::uint64_t i = 0; i < n_labels; ++i)
      table.labels.push_back(static_cast<int>(r.u32()));
  }
  table.features = Matrix(n, d);
  table.features.values = r.f64_array();
  if (table.features.values.size() != n * d)
    fail(ErrorKind::schema, path, ": feature payload length mismatch");
  return table;
}

}  // namespace tssl::data
