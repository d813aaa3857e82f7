#include "tssl/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

namespace tssl::eval {

namespace {

double round_grid_value(double v) { return std::round(v * 1e9) / 1e9; }

std::uint64_t proportion_key(double p) {
  return static_cast<std::uint64_t>(std::llround(p * 1e6));
}

}  // namespace

void SweepGrid::validate() const {
  if (proportions.empty()) fail(ErrorKind::config, "sweep grid is empty");
  if (seeds_per_point == 0)
    fail(ErrorKind::config, "sweep grid needs at least one seed per point");
  for (std::size_t i = 0; i < proportions.size(); ++i) {
    if (!(proportions[i] > 0.0 && proportions[i] <= 1.0))
      fail(ErrorKind::config, "sweep proportion ", proportions[i],
           " outside (0,1]");
    if (i > 0 && proportions[i] <= proportions[i - 1])
      fail(ErrorKind::config, "sweep proportions must be strictly increasing");
  }
}

std::vector<double> make_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo))
    fail(ErrorKind::config, "bad grid bounds ", lo, ":", hi, ":", step);
  std::vector<double> grid;
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  for (std::size_t i = 0; i <= count; ++i)
    grid.push_back(round_grid_value(lo + static_cast<double>(i) * step));
  return grid;
}

double aupc(const AccuracyCurve& curve, double lo, double hi) {
  std::vector<std::pair<double, double>> points;
  for (std::size_t i = 0; i < curve.proportions.size(); ++i) {
    const double p = curve.proportions[i];
    // Grid points with no surviving cells carry NaN means: missing, skipped.
    if (p >= lo - 1e-12 && p <= hi + 1e-12 && std::isfinite(curve.mean[i]))
      points.emplace_back(p, curve.mean[i]);
  }
  if (points.size() < 2)
    fail(ErrorKind::contract, "aupc: need at least 2 grid points inside [", lo,
         ", ", hi, "], found ", points.size());
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += 0.5 * (points[i].second + points[i - 1].second) *
            (points[i].first - points[i - 1].first);
  return area;
}

double gain(const AccuracyCurve& m1, const AccuracyCurve& m2, double lo, double hi) {
  if (m1.proportions.size() != m2.proportions.size())
    fail(ErrorKind::contract, "gain: curves have different grids");
  for (std::size_t i = 0; i < m1.proportions.size(); ++i)
    if (std::fabs(m1.proportions[i] - m2.proportions[i]) > 1e-12)
      fail(ErrorKind::contract, "gain: curves have different grids");
  return aupc(m1, lo, hi) - aupc(m2, lo, hi);
}

Matrix embedding_covariance(const Matrix& embeddings) {
  const std::size_t n = embeddings.rows, d = embeddings.cols;
  if (n < 2) fail(ErrorKind::contract, "embedding_covariance: need N >= 2, got ", n);

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = embeddings.row_ptr(i);
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      centered(i, j) = embeddings(i, j) - mean[j];

  Matrix cov = matmul_tn(centered, centered);
  const double inv_n = 1.0 / static_cast<double>(n);
  // Symmetrize exactly; blocked products can leave last-bit asymmetry.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      const double v = 0.5 * (cov(i, j) + cov(j, i)) * inv_n;
      cov(i, j) = v;
      cov(j, i) = v;
    }
  return cov;
}

CollapseReport singular_spectrum(const Matrix& covariance, double rel_tol,
                                 double abs_floor) {
  const std::size_t d = covariance.rows;
  if (d != covariance.cols)
    fail(ErrorKind::dimension, "singular_spectrum: matrix is ", covariance.rows,
         "x", covariance.cols, ", expected square");
  double scale = 0.0, asym = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      scale = std::max(scale, std::fabs(covariance(i, j)));
      asym = std::max(asym, std::fabs(covariance(i, j) - covariance(j, i)));
    }
  if (asym > 1e-8 * std::max(scale, 1.0))
    fail(ErrorKind::contract, "singular_spectrum: input asymmetric beyond tolerance");

  Eigen::MatrixXd sym(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      sym(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          covariance(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success)
    fail(ErrorKind::numeric, "singular_spectrum: eigendecomposition failed");

  CollapseReport report;
  report.dim = d;
  report.singular_values.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    // Ascending eigenvalues; reverse and clamp the PSD noise floor.
    const double v = solver.eigenvalues()(static_cast<Eigen::Index>(d - 1 - k));
    report.singular_values[k] = v > 0.0 ? v : 0.0;
  }
  const double sigma1 = report.singular_values.front();
  report.tolerance = std::max(rel_tol * sigma1, abs_floor);
  report.collapsed_count = 0;
  report.log_spectrum.resize(d);
  for (std::size_t k = 0; k < d; ++k) {
    if (report.singular_values[k] < report.tolerance) ++report.collapsed_count;
    report.log_spectrum[k] = std::log10(std::max(report.singular_values[k], abs_floor));
  }
  return report;
}

std::string cell_key(const std::string& method, finetune::FitMode mode, double p,
                     std::size_t seed_index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "|%s|p%.6f|s%zu", finetune::mode_name(mode), p,
                seed_index);
  return method + buf;
}

CellResult run_fit_cell(const EncoderSource& source, const data::DataTable& pool,
                        const data::DataTable& validation,
                        const data::DataTable& test, double p,
                        std::size_t seed_index, const SweepOptions& options) {
  CellResult result;
  result.method = source.label;
  result.mode = options.mode;
  result.proportion = p;
  result.seed_index = seed_index;

  const auto t0 = std::chrono::steady_clock::now();
  try {
    const std::uint64_t cell_seed = seed_mix(options.master_seed, source.label,
                                             proportion_key(p), seed_index);
    const data::DataTable subset =
        data::subsample_fraction(pool, p, seed_mix(cell_seed, "subsample"), true);

    nn::MlpModule encoder;
    encoder.spec = source.spec;
    if (source.pretrained) {
      encoder.params = *source.pretrained;
    } else {
      Rng init_rng(seed_mix(cell_seed, "baseline_encoder"));
      encoder.params = nn::init_params(source.spec, init_rng);
    }

    finetune::Classifier clf = finetune::attach_head(
        encoder, pool.n_classes(), seed_mix(cell_seed, "head"), options.mode);
    finetune::FitConfig fit_config = options.fit;
    fit_config.seed = seed_mix(cell_seed, "fit");

    const finetune::FitReport report = finetune::fit(clf, subset, validation, fit_config);
    result.accuracy = finetune::evaluate_accuracy(clf, test);
    result.stop_epoch = report.stop_epoch;
  } catch (const Error& e) {
    result.failed = true;
    result.error = e.what();
  }
  result.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return result;
}

namespace {

/// Runs fn(i) for i in [0, n) on options.jobs worker threads.
void parallel_cells(std::size_t n, std::size_t jobs,
                    const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace

std::vector<CellResult> proportion_sweep(const std::vector<EncoderSource>& sources,
                                         const data::DataTable& pool,
                                         const data::DataTable& validation,
                                         const data::DataTable& test,
                                         const SweepGrid& grid,
                                         const SweepOptions& options,
                                         const SweepHooks& hooks) {
  grid.validate();
  if (!pool.has_labels())
    fail(ErrorKind::contract, "proportion_sweep: fine-tune pool must be labeled");

  struct Job {
    const EncoderSource* source;
    double p;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (const auto& source : sources)
    for (double p : grid.proportions)
      for (std::size_t s = 0; s < grid.seeds_per_point; ++s)
        jobs.push_back({&source, p, s});

  const std::size_t limit = std::min(jobs.size(), hooks.stop_after_cells);
  std::vector<CellResult> results(limit);
  std::mutex store_mutex;
  parallel_cells(limit, options.jobs, [&](std::size_t i) {
    const Job& job = jobs[i];
    const std::string key =
        cell_key(job.source->label, options.mode, job.p, job.seed_index);
    CellResult cached;
    if (hooks.try_load && hooks.try_load(key, cached)) {
      results[i] = cached;
      return;
    }
    results[i] = run_fit_cell(*job.source, pool, validation, test, job.p,
                              job.seed_index, options);
    if (hooks.store) {
      std::lock_guard lock(store_mutex);
      hooks.store(key, results[i]);
    }
  });
  return results;
}

AccuracyCurve curve_from_cells(const std::vector<CellResult>& cells,
                               const std::string& method, const SweepGrid& grid) {
  AccuracyCurve curve;
  curve.method = method;
  curve.proportions = grid.proportions;
  curve.accuracies.resize(grid.proportions.size());
  for (const auto& cell : cells) {
    if (cell.method != method || cell.failed) continue;
    for (std::size_t i = 0; i < grid.proportions.size(); ++i)
      if (std::fabs(grid.proportions[i] - cell.proportion) < 1e-12)
        curve.accuracies[i].push_back(cell.accuracy);
  }
  curve.mean.resize(curve.accuracies.size(),
                    std::numeric_limits<double>::quiet_NaN());
  curve.stddev.resize(curve.accuracies.size(), 0.0);
  for (std::size_t i = 0; i < curve.accuracies.size(); ++i) {
    const auto& accs = curve.accuracies[i];
    if (accs.empty()) continue;  // missing point, not fabricated
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    curve.mean[i] = mean;
    if (accs.size() > 1) {
      double ss = 0.0;
      for (double a : accs) ss += (a - mean) * (a - mean);
      curve.stddev[i] = std::sqrt(ss / static_cast<double>(accs.size() - 1));
    }
  }
  return curve;
}

std::vector<double> default_pretrain_size_grid() {
  std::vector<double> grid = make_grid(0.01, 0.05, 0.01);
  for (double q : make_grid(0.05, 1.0, 0.05)) grid.push_back(q);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end(),
                         [](double a, double b) { return std::fabs(a - b) < 1e-12; }),
             grid.end());
  return grid;
}

std::vector<CellResult> pretrain_size_sweep(
    const std::vector<pretext::PretextMethod>& methods,
    const data::DataTable& pretrain_pool, const data::DataTable& finetune_pool,
    const data::DataTable& validation, const data::DataTable& test,
    const std::vector<double>& q_grid, const PretrainSizeOptions& options,
    const SweepHooks& hooks) {
  if (q_grid.empty()) fail(ErrorKind::config, "pretrain_size_sweep: empty q grid");
  for (double q : q_grid)
    if (!(q > 0.0 && q <= 1.0))
      fail(ErrorKind::config, "pretrain_size_sweep: q ", q, " outside (0,1]");

  std::vector<CellResult> results;
  auto cached_fit = [&](const EncoderSource& source, double reported_q,
                        std::size_t seed_index) {
    const std::string key = cell_key(source.label, options.sweep.mode,
                                     reported_q, seed_index);
    CellResult cell;
    if (hooks.try_load && hooks.try_load(key, cell)) return cell;
    cell = run_fit_cell(source, finetune_pool, validation, test,
                        options.fixed_p, seed_index, options.sweep);
    cell.proportion = reported_q;  // the swept variable for this protocol
    if (hooks.store) hooks.store(key, cell);
    return cell;
  };

  // Baseline is independent of q: one fit per seed, emitted with q = 0.
  EncoderSource baseline{"baseline", options.encoder_spec, nullptr};
  for (std::size_t s = 0; s < options.seeds_per_point; ++s)
    results.push_back(cached_fit(baseline, 0.0, s));

  for (const auto method : methods) {
    for (double q : q_grid) {
      const std::string enc_key =
          std::string("size|") + pretext::method_name(method) + "|q" +
          std::to_string(proportion_key(q));
      nn::MlpModule encoder;
      bool loaded = hooks.try_load_encoder && hooks.try_load_encoder(enc_key, encoder);
      if (!loaded) {
        const std::uint64_t sub_seed =
            seed_mix(options.sweep.master_seed, "pretrain_subset",
                     pretext::method_name(method), proportion_key(q));
        const data::DataTable subset =
            data::subsample_fraction(pretrain_pool, q, sub_seed, false);
        pretext::PretextConfig cfg = options.pretext_template;
        cfg.method = method;
        cfg.seed = seed_mix(options.sweep.master_seed, "pretrain",
                            pretext::method_name(method), proportion_key(q));
        encoder = pretext::pretrain(subset, options.encoder_spec, cfg).encoder;
        if (hooks.store_encoder) hooks.store_encoder(enc_key, encoder);
      }

      EncoderSource source{pretext::method_name(method), encoder.spec,
                           &encoder.params};
      for (std::size_t s = 0; s < options.seeds_per_point; ++s)
        results.push_back(cached_fit(source, q, s));
    }
  }
  return results;
}

ArchitectureSweepResult architecture_sweep(
    const std::vector<pretext::PretextMethod>& methods,
    const data::DataTable& pretrain_pool, const data::DataTable& pretrain_val,
    const data::DataTable& finetune_pool, const data::DataTable& validation,
    const data::DataTable& test, const ArchitectureSweepOptions& options,
    const SweepHooks& hooks) {
  if (options.depths.empty() || options.widths.empty())
    fail(ErrorKind::config, "architecture_sweep: empty depth/width grid");
  options.grid.validate();

  ArchitectureSweepResult out;
  for (std::size_t depth : options.depths) {
    for (std::size_t width : options.widths) {
      nn::MlpSpec spec{pretrain_pool.dim(),
                       std::vector<std::size_t>(depth, width), true,
                       nn::Activation::relu, false};
      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), "[d%zuw%zu]", depth, width);

      std::vector<nn::MlpModule> encoders;
      encoders.reserve(methods.size());
      std::vector<EncoderSource> sources;
      for (const auto method : methods) {
        const std::string enc_key = std::string("arch|") +
                                    pretext::method_name(method) + suffix;
        nn::MlpModule encoder;
        bool loaded =
            hooks.try_load_encoder && hooks.try_load_encoder(enc_key, encoder);
        if (!loaded) {
          pretext::PretextConfig cfg = options.pretext_template;
          cfg.method = method;
          cfg.seed = seed_mix(options.sweep.master_seed, "arch_pretrain",
                              pretext::method_name(method), depth, width);
          encoder = pretext::pretrain(pretrain_pool, spec, cfg).encoder;
          if (hooks.store_encoder) hooks.store_encoder(enc_key, encoder);
        }
        encoders.push_back(std::move(encoder));
      }
      for (std::size_t m = 0; m < methods.size(); ++m)
        sources.push_back({std::string(pretext::method_name(methods[m])) + suffix,
                           spec, &encoders[m].params});
      sources.push_back({std::string("baseline") + suffix, spec, nullptr});

      auto cells = proportion_sweep(sources, finetune_pool, validation, test,
                                    options.grid, options.sweep, hooks);
      const AccuracyCurve baseline_curve = curve_from_cells(
          cells, std::string("baseline") + suffix, options.grid);

      for (std::size_t m = 0; m < methods.size(); ++m) {
        const AccuracyCurve method_curve =
            curve_from_cells(cells, sources[m].label, options.grid);
        ArchitectureCell cell;
        cell.depth = depth;
        cell.width = width;
        cell.method = pretext::method_name(methods[m]);
        try {
          cell.gain_value =
              gain(method_curve, baseline_curve, options.gain_lo, options.gain_hi);
        } catch (const Error&) {
          // Too few surviving cells to integrate: missing, not fabricated.
          cell.gain_value = std::numeric_limits<double>::quiet_NaN();
        }
        const Matrix embeddings = nn::mlp_infer(encoders[m].spec, encoders[m].params,
                                                pretrain_val.features);
        cell.spectrum = singular_spectrum(embedding_covariance(embeddings),
                                          options.collapse_rel_tol,
                                          options.collapse_abs_floor);
        out.cells.push_back(std::move(cell));
      }
      out.fit_cells.insert(out.fit_cells.end(), cells.begin(), cells.end());
    }
  }
  return out;
}

}  // namespace tssl::eval
