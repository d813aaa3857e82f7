#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tssl/data.hpp"
#include "tssl/finetune.hpp"
#include "tssl/pretext.hpp"

namespace tssl::eval {

struct SweepGrid {
  std::vector<double> proportions;  // strictly increasing, in (0,1]
  std::size_t seeds_per_point = 5;

  void validate() const;
};

/// lo, lo+step, ..., hi (inclusive within rounding); values rounded to 1e-9.
std::vector<double> make_grid(double lo, double hi, double step);

struct AccuracyCurve {
  std::string method;
  std::vector<double> proportions;
  std::vector<std::vector<double>> accuracies;  // per proportion, per seed
  std::vector<double> mean;
  std::vector<double> stddev;  // sample standard deviation
};

/// Trapezoidal integral of the mean accuracy over grid points inside
/// [lo, hi]; needs at least two in-range points.
double aupc(const AccuracyCurve& curve, double lo, double hi);

/// aupc(m1) - aupc(m2); the curves must share a grid.
double gain(const AccuracyCurve& m1, const AccuracyCurve& m2, double lo, double hi);

/// C = (1/N) Σ (z_i - z̄)(z_i - z̄)ᵀ, divisor N; exactly symmetric output.
Matrix embedding_covariance(const Matrix& embeddings);

struct CollapseReport {
  std::vector<double> singular_values;  // sorted descending, length = dim
  std::size_t dim = 0;
  std::size_t collapsed_count = 0;
  double tolerance = 0.0;
  std::vector<double> log_spectrum;  // log10, floored, for plotting
};

/// Eigen-spectrum of a symmetric PSD matrix (singular values coincide);
/// collapsed_count counts values below max(rel_tol * sigma_1, abs_floor).
CollapseReport singular_spectrum(const Matrix& covariance, double rel_tol = 1e-6,
                                 double abs_floor = 1e-12);

// ---------------------------------------------------------------------------
// Sweep machinery. Cells are independent jobs keyed by
// hash(master_seed, method, p or q, repeat index) and may run concurrently.

/// One encoder column of a sweep: a pretrained parameter set, or a fresh
/// random encoder per cell when pretrained is null (the baseline).
struct EncoderSource {
  std::string label;
  nn::MlpSpec spec;
  const nn::ParamStore* pretrained = nullptr;
};

struct CellResult {
  std::string method;
  finetune::FitMode mode = finetune::FitMode::unfrozen;
  double proportion = 0.0;  // p for proportion sweeps, q for size sweeps
  std::size_t seed_index = 0;
  double accuracy = 0.0;
  std::size_t stop_epoch = 0;
  double wall_ms = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepOptions {
  finetune::FitMode mode = finetune::FitMode::unfrozen;
  finetune::FitConfig fit;
  std::uint64_t master_seed = 0;
  std::size_t jobs = 1;
};

/// Persistence hooks so an orchestrator can make sweeps resumable. try_load
/// returning true means the cell was already computed; store is called after
/// each fresh cell. stop_after_cells simulates interruption in tests.
struct SweepHooks {
  std::function<bool(const std::string& key, CellResult&)> try_load;
  std::function<void(const std::string& key, const CellResult&)> store;
  std::function<bool(const std::string& key, nn::MlpModule&)> try_load_encoder;
  std::function<void(const std::string& key, const nn::MlpModule&)> store_encoder;
  std::size_t stop_after_cells = static_cast<std::size_t>(-1);
};

std::string cell_key(const std::string& method, finetune::FitMode mode, double p,
                     std::size_t seed_index);

/// Single fit cell: stratified subsample of fraction p from the pool, fresh
/// head (fresh encoder too when source.pretrained is null), fit with early
/// stopping, accuracy on the test set.
CellResult run_fit_cell(const EncoderSource& source, const data::DataTable& pool,
                        const data::DataTable& validation,
                        const data::DataTable& test, double p,
                        std::size_t seed_index, const SweepOptions& options);

/// Label-fraction sweep over every source × grid point × seed.
std::vector<CellResult> proportion_sweep(const std::vector<EncoderSource>& sources,
                                         const data::DataTable& pool,
                                         const data::DataTable& validation,
                                         const data::DataTable& test,
                                         const SweepGrid& grid,
                                         const SweepOptions& options,
                                         const SweepHooks& hooks = {});

AccuracyCurve curve_from_cells(const std::vector<CellResult>& cells,
                               const std::string& method, const SweepGrid& grid);

/// Default pretraining-size grid: 0.01..0.05 step 0.01 union 0.05..1
/// step 0.05, deduplicated (24 points, 0.05 kept once).
std::vector<double> default_pretrain_size_grid();

struct PretrainSizeOptions {
  pretext::PretextConfig pretext_template;
  nn::MlpSpec encoder_spec;
  double fixed_p = 0.1;
  SweepOptions sweep;
  std::size_t seeds_per_point = 5;
};

/// Per (method, q): pretrain on a stratification-free random fraction q of
/// the pretraining pool, fine-tune at proportion fixed_p, record accuracy.
/// Baseline rows are q-independent (computed once, emitted with q = 0).
std::vector<CellResult> pretrain_size_sweep(
    const std::vector<pretext::PretextMethod>& methods,
    const data::DataTable& pretrain_pool, const data::DataTable& finetune_pool,
    const data::DataTable& validation, const data::DataTable& test,
    const std::vector<double>& q_grid, const PretrainSizeOptions& options,
    const SweepHooks& hooks = {});

struct ArchitectureCell {
  std::size_t depth = 0;
  std::size_t width = 0;
  std::string method;
  double gain_value = 0.0;
  CollapseReport spectrum;
};

struct ArchitectureSweepResult {
  std::vector<CellResult> fit_cells;  // labels carry the [dD wW] suffix
  std::vector<ArchitectureCell> cells;
};

struct ArchitectureSweepOptions {
  pretext::PretextConfig pretext_template;
  std::vector<std::size_t> depths;
  std::vector<std::size_t> widths;
  SweepGrid grid;                 // fine-tuning label fractions
  double gain_lo = 0.02, gain_hi = 0.3;
  SweepOptions sweep;
  double collapse_rel_tol = 1e-6;
  double collapse_abs_floor = 1e-12;
};

/// Per (depth, width, method): unfrozen gain against the matching baseline
/// plus the collapse spectrum of validation-set embeddings (encoder in eval
/// mode).
ArchitectureSweepResult architecture_sweep(
    const std::vector<pretext::PretextMethod>& methods,
    const data::DataTable& pretrain_pool, const data::DataTable& pretrain_val,
    const data::DataTable& finetune_pool, const data::DataTable& validation,
    const data::DataTable& test, const ArchitectureSweepOptions& options,
    const SweepHooks& hooks = {});

}  // namespace tssl::eval
