#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tssl/matrix.hpp"
#include "tssl/rng.hpp"

namespace tssl::data {

/// N×d feature table with optional dense integer labels. Immutable after
/// construction by convention; operations return new tables.
struct DataTable {
  Matrix features;
  std::vector<int> labels;  // empty when unlabeled
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;

  bool has_labels() const { return !labels.empty(); }
  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
  std::size_t n_classes() const { return class_names.size(); }

  DataTable select_rows(std::span<const std::size_t> rows) const;
};

struct SplitPlan {
  double pretrain_fraction = 0.8;
  double finetune_fraction = 0.1;
  double test_fraction = 0.1;
  double validation_fraction = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Row indices of each partition, recorded in the ingest sidecar.
struct SplitIndices {
  std::vector<std::size_t> pretrain, finetune, test;
};

struct Split {
  DataTable pretrain, finetune, test;
  SplitIndices indices;
};

struct PreprocessStats {
  bool log2_transform = true;
  std::vector<double> mean, stddev;
  std::vector<std::size_t> zero_variance_features;  // warning record
};

/// Per-feature value pools over the pretraining partition; the resampling
/// source for SCARF and VIME corruptions.
struct EmpiricalMarginals {
  std::vector<std::vector<double>> pools;  // pools[j] = column j as a multiset

  std::size_t dim() const { return pools.size(); }
  double draw(std::size_t feature, Rng& rng) const {
    return pools[feature][rng.index(pools[feature].size())];
  }
};

/// CSV with a header row; numeric feature cells; optional label column mapped
/// to dense class indices in first-appearance order.
DataTable load_csv(const std::string& path,
                   const std::optional<std::string>& label_column = std::nullopt);

/// Fit-transform: optional log2(x+1), then per-feature standardization with
/// population statistics. Zero-variance features standardize to 0 and are
/// listed in the returned stats.
std::pair<DataTable, PreprocessStats> preprocess(const DataTable& table,
                                                 bool log2_transform = true);

/// Apply previously fitted statistics (fine-tune/test partitions); never refits.
DataTable apply_preprocess(const DataTable& table, const PreprocessStats& stats);

/// Per-class shuffle + largest-remainder allocation into three partitions.
/// Deterministic for a fixed plan.seed; per-class counts within ±1 of exact
/// proportionality.
Split stratified_split(const DataTable& table, const SplitPlan& plan);

/// ceil(p·N) rows; stratified mode keeps class proportions within ±1.
DataTable subsample_fraction(const DataTable& table, double p, std::uint64_t seed,
                             bool stratified);

/// Split off a held-out fraction (validation carve). Returns (rest, carved).
std::pair<DataTable, DataTable> split_off_fraction(const DataTable& table,
                                                   double fraction,
                                                   std::uint64_t seed,
                                                   bool stratified);

/// Restrict both tables to the intersection of their feature names, columns
/// aligned to a's order.
std::pair<DataTable, DataTable> common_features(const DataTable& a,
                                                const DataTable& b);

EmpiricalMarginals marginals(const DataTable& table);

struct SyntheticSpec {
  std::size_t n_classes = 10;
  std::size_t n_features = 512;
  std::size_t n_redundant_groups = 64;
  std::size_t samples_per_class = 100;
  double class_spread = 0.7;   // stddev of per-class latent means
  double feature_noise = 0.22; // stddev of per-feature noise around the latent
  std::uint64_t seed = 0;
};

/// Class-conditional Gaussian clusters on group latents; features within a
/// redundant group are noisy affine copies of the group latent (pairwise
/// correlation >= 0.9 in expectation). Values are log-scale expression-like,
/// so downstream preprocessing should skip the log transform.
DataTable synthetic_corpus(const SyntheticSpec& spec);

/// Compact binary table cache (same byte conventions as checkpoints:
/// little-endian, length prefixes, trailing checksum; 64-bit payload).
void save_table(const std::string& path, const DataTable& table);
DataTable load_table(const std::string& path);

}  // namespace tssl::data
