#include "tssl/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "tssl/checkpoint.hpp"

namespace tssl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const fs::path& path) {
  const auto bytes = read_file(path.string());
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open for writing: ", path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "write failed: ", path.string());
}

void write_json(const fs::path& path, const json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open: ", path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(ErrorKind::schema, path.string(), ": invalid JSON: ", e.what());
  }
  return doc;
}

/// Run manifest: written with status "running" before any compute and
/// finalized afterwards; every output file must be listed.
class Manifest {
 public:
  Manifest(const CommandContext& ctx, const std::string& command)
      : path_(ctx.out_dir / ("manifest_" + command + ".json")) {
    doc_["command"] = command;
    doc_["status"] = "running";
    doc_["library_version"] = std::string(kLibraryVersion);
    doc_["config"] = ctx.config.snapshot();
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::array();
    write_json(path_, doc_);
  }

  void add_input(const fs::path& file) {
    doc_["inputs"][file.string()] = file_digest(file);
  }
  void add_output(const fs::path& file) { doc_["outputs"].push_back(file.string()); }
  void note(const std::string& key, const json& value) { doc_[key] = value; }

  void finalize(bool ok) {
    doc_["status"] = ok ? "complete" : "failed";
    write_json(path_, doc_);
  }

 private:
  fs::path path_;
  json doc_;
};

struct Partitions {
  data::DataTable pretrain, pretrain_val, finetune_pool, finetune_val, test;
};

fs::path data_dir(const CommandContext& ctx) { return ctx.out_dir / "data"; }

Partitions load_partitions(const CommandContext& ctx) {
  const fs::path dir = data_dir(ctx);
  auto need = [&](const char* name) {
    const fs::path p = dir / name;
    if (!fs::exists(p))
      fail(ErrorKind::io, p.string(), " missing; run the ingest command first");
    return data::load_table(p.string());
  };
  Partitions parts;
  parts.pretrain = need("pretrain.tsst");
  parts.pretrain_val = need("pretrain_val.tsst");
  parts.finetune_pool = need("finetune.tsst");
  parts.finetune_val = need("finetune_val.tsst");
  parts.test = need("test.tsst");
  return parts;
}

std::string format_double(double v, const char* fmt = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

fs::path default_checkpoint(const CommandContext& ctx) {
  return ctx.out_dir / "encoders" /
         (ctx.config.str("pretext.method") + ".tssl");
}

void write_loss_csv(const fs::path& path, const pretext::PretrainReport& report,
                    bool vime) {
  std::string text = vime ? "epoch,loss,mask_loss,feature_loss\n" : "epoch,loss\n";
  for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
    text += std::to_string(e) + "," + format_double(report.epoch_loss[e]);
    if (vime)
      text += "," + format_double(report.epoch_mask_loss[e]) + "," +
              format_double(report.epoch_feature_loss[e]);
    text += "\n";
  }
  write_text(path, text);
}

}  // namespace

std::string error_record(const std::string& command, const Error& error) {
  json doc;
  doc["error"] = {{"command", command},
                  {"kind", error.kind_name()},
                  {"message", error.what()}};
  return doc.dump();
}

namespace {

// Conditional defaults resolved into the config before any manifest snapshot,
// so a snapshot fed back in reproduces identical outputs. Synthetic corpora
// are already log-scale: the log transform defaults off for them.
CommandContext resolve_context(const CommandContext& raw) {
  CommandContext ctx = raw;
  if (!ctx.config.was_set("preprocess.log2"))
    ctx.config.set("preprocess.log2", !ctx.config.boolean("data.synthetic"));
  return ctx;
}

}  // namespace

int cmd_ingest(const CommandContext& raw_ctx) {
  const CommandContext ctx = resolve_context(raw_ctx);
  const bool synthetic = ctx.config.boolean("data.synthetic");
  const bool log2 = ctx.config.boolean("preprocess.log2");
  Manifest manifest(ctx, "ingest");

  data::DataTable raw;
  if (synthetic) {
    data::SyntheticSpec spec;
    spec.n_classes = static_cast<std::size_t>(ctx.config.integer("synth.classes"));
    spec.n_features = static_cast<std::size_t>(ctx.config.integer("synth.features"));
    spec.n_redundant_groups =
        static_cast<std::size_t>(ctx.config.integer("synth.redundant_groups"));
    spec.samples_per_class =
        static_cast<std::size_t>(ctx.config.integer("synth.samples_per_class"));
    spec.class_spread = ctx.config.real("synth.class_spread");
    spec.feature_noise = ctx.config.real("synth.feature_noise");
    spec.seed = ctx.config.master_seed();
    raw = data::synthetic_corpus(spec);
    manifest.note("generator_seed", spec.seed);
  } else {
    const std::string input = ctx.config.str("data.input");
    if (input.empty())
      fail(ErrorKind::config, "ingest: data.input is empty and data.synthetic is off");
    const std::string label = ctx.config.str("data.label_column");
    if (label.empty())
      fail(ErrorKind::config,
           "ingest: stratified splitting needs data.label_column");
    raw = data::load_csv(input, label);
    manifest.add_input(input);
  }

  data::SplitPlan plan;
  plan.pretrain_fraction = ctx.config.real("split.pretrain");
  plan.finetune_fraction = ctx.config.real("split.finetune");
  plan.test_fraction = ctx.config.real("split.test");
  plan.validation_fraction = ctx.config.real("split.validation");
  plan.seed = ctx.config.master_seed();
  data::Split split = data::stratified_split(raw, plan);

  // Standardization statistics come from the pretraining partition only.
  auto [pretrain_pp, stats] = data::preprocess(split.pretrain, log2);
  const data::DataTable finetune_pp = data::apply_preprocess(split.finetune, stats);
  const data::DataTable test_pp = data::apply_preprocess(split.test, stats);

  const std::uint64_t seed = ctx.config.master_seed();
  auto [pretrain_main, pretrain_val] = data::split_off_fraction(
      pretrain_pp, plan.validation_fraction, seed_mix(seed, "pretrain_val"), true);
  auto [finetune_pool, finetune_val] = data::split_off_fraction(
      finetune_pp, plan.validation_fraction, seed_mix(seed, "finetune_val"), true);

  const fs::path dir = data_dir(ctx);
  fs::create_directories(dir);
  auto save = [&](const char* name, const data::DataTable& table) {
    const fs::path p = dir / name;
    data::save_table(p.string(), table);
    manifest.add_output(p);
  };
  save("pretrain.tsst", pretrain_main);
  save("pretrain_val.tsst", pretrain_val);
  save("finetune.tsst", finetune_pool);
  save("finetune_val.tsst", finetune_val);
  save("test.tsst", test_pp);

  json stats_doc;
  stats_doc["log2_transform"] = stats.log2_transform;
  stats_doc["mean"] = stats.mean;
  stats_doc["stddev"] = stats.stddev;
  stats_doc["zero_variance_features"] = stats.zero_variance_features;
  write_json(dir / "stats.json", stats_doc);
  manifest.add_output(dir / "stats.json");

  json sidecar;
  sidecar["pretrain"] = split.indices.pretrain;
  sidecar["finetune"] = split.indices.finetune;
  sidecar["test"] = split.indices.test;
  sidecar["seed"] = seed;
  write_json(dir / "splits.json", sidecar);
  manifest.add_output(dir / "splits.json");

  manifest.finalize(true);
  return 0;
}

int cmd_pretrain(const CommandContext& raw_ctx) {
  const CommandContext ctx = resolve_context(raw_ctx);
  Manifest manifest(ctx, "pretrain");
  const Partitions parts = load_partitions(ctx);

  pretext::PretextConfig cfg = ctx.config.pretext_config();
  const nn::MlpSpec spec = ctx.config.encoder_spec(parts.pretrain.dim());
  const pretext::PretrainResult result = pretext::pretrain(parts.pretrain, spec, cfg);

  const fs::path ckpt = default_checkpoint(ctx);
  fs::create_directories(ckpt.parent_path());
  save_encoder(ckpt.string(), result.encoder.spec, result.encoder.params);
  manifest.add_output(ckpt);

  const fs::path loss_csv =
      ctx.out_dir / ("loss_" + std::string(pretext::method_name(cfg.method)) + ".csv");
  write_loss_csv(loss_csv, result.report, cfg.method == pretext::PretextMethod::vime);
  manifest.add_output(loss_csv);

  manifest.note("method", pretext::method_name(cfg.method));
  manifest.note("epochs", cfg.epochs);
  manifest.note("encoder_checksum", hex64(result.report.encoder_checksum));
  manifest.note("wall_seconds", result.report.wall_seconds);
  manifest.finalize(true);
  return 0;
}

int cmd_finetune(const CommandContext& raw_ctx) {
  const CommandContext ctx = resolve_context(raw_ctx);
  Manifest manifest(ctx, "finetune");
  const Partitions parts = load_partitions(ctx);
  const std::uint64_t seed = ctx.config.master_seed();

  nn::MlpModule encoder;
  const bool from_scratch = ctx.config.boolean("finetune.from_scratch");
  if (from_scratch) {
    encoder.spec = ctx.config.encoder_spec(parts.finetune_pool.dim());
    Rng rng(seed_mix(seed, "scratch_encoder"));
    encoder.params = nn::init_params(encoder.spec, rng);
  } else {
    const std::string configured = ctx.config.str("finetune.checkpoint");
    const fs::path ckpt =
        configured.empty() ? default_checkpoint(ctx) : fs::path(configured);
    manifest.add_input(ckpt);
    auto [spec, params] = load_encoder(ckpt.string());
    if (spec.input_dim != parts.finetune_pool.dim())
      fail(ErrorKind::schema, "checkpoint expects ", spec.input_dim,
           " features, fine-tune data has ", parts.finetune_pool.dim());
    encoder.spec = std::move(spec);
    encoder.params = std::move(params);
  }

  const double proportion = ctx.config.real("finetune.proportion");
  data::DataTable train = data::subsample_fraction(
      parts.finetune_pool, proportion, seed_mix(seed, "finetune_subsample"), true);

  const finetune::FitMode mode = ctx.config.boolean("finetune.frozen")
                                     ? finetune::FitMode::frozen
                                     : finetune::FitMode::unfrozen;
  finetune::Classifier clf = finetune::attach_head(
      encoder, parts.finetune_pool.n_classes(), seed_mix(seed, "head"), mode);
  finetune::FitConfig fit_cfg = ctx.config.fit_config(seed_mix(seed, "fit"));
  finetune::FitReport report = finetune::fit(clf, train, parts.finetune_val, fit_cfg);
  report.test_accuracy = finetune::evaluate_accuracy(clf, parts.test);

  json doc;
  doc["mode"] = finetune::mode_name(mode);
  doc["from_scratch"] = from_scratch;
  doc["proportion"] = proportion;
  doc["train_loss"] = report.train_loss;
  doc["val_loss"] = report.val_loss;
  doc["stop_epoch"] = report.stop_epoch;
  doc["restored_best"] = report.restored_best;
  doc["test_accuracy"] = report.test_accuracy;
  const fs::path out = ctx.out_dir / "fit_report.json";
  write_json(out, doc);
  manifest.add_output(out);
  manifest.finalize(true);
  return 0;
}

void write_results_csv(const fs::path& path, std::vector<eval::CellResult> cells,
                       bool redact_timing) {
  std::sort(cells.begin(), cells.end(),
            [](const eval::CellResult& a, const eval::CellResult& b) {
              if (a.method != b.method) return a.method < b.method;
              if (a.mode != b.mode) return a.mode < b.mode;
              if (a.proportion != b.proportion) return a.proportion < b.proportion;
              return a.seed_index < b.seed_index;
            });
  std::string text = "method,mode,proportion,seed,accuracy,stop_epoch,wall_ms\n";
  for (const auto& cell : cells) {
    if (cell.failed) continue;  // missing, not fabricated
    text += cell.method;
    text += ",";
    text += finetune::mode_name(cell.mode);
    text += ",";
    text += format_double(cell.proportion, "%.6g");
    text += ",";
    text += std::to_string(cell.seed_index);
    text += ",";
    text += format_double(cell.accuracy);
    text += ",";
    text += std::to_string(cell.stop_epoch);
    text += ",";
    text += redact_timing ? "0" : format_double(cell.wall_ms, "%.3f");
    text += "\n";
  }
  write_text(path, text);
}

namespace {

json cell_to_json(const eval::CellResult& cell) {
  return json{{"method", cell.method},
              {"mode", finetune::mode_name(cell.mode)},
              {"proportion", cell.proportion},
              {"seed", cell.seed_index},
              {"accuracy", cell.accuracy},
              {"stop_epoch", cell.stop_epoch},
              {"wall_ms", cell.wall_ms},
              {"failed", cell.failed},
              {"error", cell.error}};
}

eval::CellResult cell_from_json(const json& doc) {
  eval::CellResult cell;
  cell.method = doc.at("method").get<std::string>();
  cell.mode = doc.at("mode").get<std::string>() == "frozen"
                  ? finetune::FitMode::frozen
                  : finetune::FitMode::unfrozen;
  cell.proportion = doc.at("proportion").get<double>();
  cell.seed_index = doc.at("seed").get<std::size_t>();
  cell.accuracy = doc.at("accuracy").get<double>();
  cell.stop_epoch = doc.at("stop_epoch").get<std::size_t>();
  cell.wall_ms = doc.at("wall_ms").get<double>();
  cell.failed = doc.at("failed").get<bool>();
  cell.error = doc.at("error").get<std::string>();
  return cell;
}

/// Collects every cache file a sweep touches so the manifest can list it.
struct CacheLedger {
  std::mutex mutex;
  std::vector<fs::path> files;
  void record(const fs::path& p) {
    std::lock_guard lock(mutex);
    files.push_back(p);
  }
};

/// File-backed sweep hooks: one JSON per completed cell under out/cells/,
/// one checkpoint per pretrained encoder under out/encoders/. Keys carry the
/// master seed so resumed runs never mix seed streams.
eval::SweepHooks file_hooks(const CommandContext& ctx, std::uint64_t master_seed,
                            CacheLedger* ledger) {
  const fs::path cells = ctx.out_dir / "cells";
  const fs::path encoders = ctx.out_dir / "encoders";
  fs::create_directories(cells);
  fs::create_directories(encoders);

  eval::SweepHooks hooks;
  auto cell_path = [cells, master_seed](const std::string& key) {
    return cells / (hex64(fnv1a64(key, fnv1a64("cell", master_seed))) + ".json");
  };
  hooks.try_load = [cell_path, ledger](const std::string& key,
                                       eval::CellResult& out) {
    const fs::path p = cell_path(key);
    if (!fs::exists(p)) return false;
    const json doc = read_json(p);
    if (doc.at("key").get<std::string>() != key) return false;
    out = cell_from_json(doc.at("cell"));
    ledger->record(p);
    return true;
  };
  hooks.store = [cell_path, ledger](const std::string& key,
                                    const eval::CellResult& cell) {
    const fs::path p = cell_path(key);
    write_json(p, json{{"key", key}, {"cell", cell_to_json(cell)}});
    ledger->record(p);
  };
  auto encoder_path = [encoders, master_seed](const std::string& key) {
    return encoders / (hex64(fnv1a64(key, fnv1a64("encoder", master_seed))) + ".tssl");
  };
  hooks.try_load_encoder = [encoder_path, ledger](const std::string& key,
                                                  nn::MlpModule& out) {
    const fs::path p = encoder_path(key);
    if (!fs::exists(p)) return false;
    auto [spec, params] = load_encoder(p.string());
    out.spec = std::move(spec);
    out.params = std::move(params);
    ledger->record(p);
    return true;
  };
  hooks.store_encoder = [encoder_path, ledger](const std::string& key,
                                               const nn::MlpModule& encoder) {
    const fs::path p = encoder_path(key);
    save_encoder(p.string(), encoder.spec, encoder.params);
    ledger->record(p);
  };
  return hooks;
}

void write_gain_csv(const fs::path& path,
                    const std::vector<std::tuple<std::size_t, std::size_t,
                                                 std::string, double>>& rows) {
  std::string text = "depth,width,method,gain\n";
  for (const auto& [depth, width, method, value] : rows) {
    if (!std::isfinite(value)) continue;  // missing, not fabricated
    text += std::to_string(depth) + "," + std::to_string(width) + "," + method +
            "," + format_double(value) + "\n";
  }
  write_text(path, text);
}

void write_spectra_csv(const fs::path& path,
                       const std::vector<eval::ArchitectureCell>& cells) {
  std::string text = "depth,width,method,k,sigma_k\n";
  for (const auto& cell : cells)
    for (std::size_t k = 0; k < cell.spectrum.singular_values.size(); ++k)
      text += std::to_string(cell.depth) + "," + std::to_string(cell.width) + "," +
              cell.method + "," + std::to_string(k) + "," +
              format_double(cell.spectrum.singular_values[k], "%.12g") + "\n";
  write_text(path, text);
}

int run_sweep(const CommandContext& raw_ctx, std::size_t stop_after_cells) {
  const CommandContext ctx = resolve_context(raw_ctx);
  Manifest manifest(ctx, "sweep");
  const Partitions parts = load_partitions(ctx);
  const std::uint64_t master_seed = ctx.config.master_seed();
  const std::string kind = ctx.config.str("sweep.kind");

  eval::SweepOptions sweep;
  sweep.mode = ctx.config.boolean("finetune.frozen") ? finetune::FitMode::frozen
                                                     : finetune::FitMode::unfrozen;
  sweep.fit = ctx.config.fit_config(0);  // per-cell seeds are derived downstream
  sweep.master_seed = master_seed;
  sweep.jobs = ctx.jobs;

  CacheLedger cache_ledger;
  eval::SweepHooks hooks = file_hooks(ctx, master_seed, &cache_ledger);
  hooks.stop_after_cells = stop_after_cells;

  std::vector<pretext::PretextMethod> methods;
  for (const auto& name : ctx.config.string_list("sweep.methods"))
    methods.push_back(pretext::method_from_string(name));

  const bool redact = ctx.config.boolean("report.redact_timing");
  std::vector<eval::CellResult> cells;
  std::vector<std::tuple<std::size_t, std::size_t, std::string, double>> gain_rows;
  std::vector<eval::ArchitectureCell> arch_cells;

  if (kind == "proportion") {
    eval::SweepGrid grid;
    grid.proportions = parse_grid(ctx.config.str("sweep.grid"));
    grid.seeds_per_point =
        static_cast<std::size_t>(ctx.config.integer("sweep.seeds_per_point"));
    grid.validate();

    const nn::MlpSpec spec = ctx.config.encoder_spec(parts.pretrain.dim());
    std::vector<nn::MlpModule> encoders;
    encoders.reserve(methods.size());
    for (const auto method : methods) {
      const std::string key = std::string("prop|") + pretext::method_name(method);
      nn::MlpModule encoder;
      if (!(hooks.try_load_encoder && hooks.try_load_encoder(key, encoder))) {
        pretext::PretextConfig cfg = ctx.config.pretext_config();
        cfg.method = method;
        cfg.seed = seed_mix(master_seed, "sweep_pretrain", pretext::method_name(method));
        encoder = pretext::pretrain(parts.pretrain, spec, cfg).encoder;
        hooks.store_encoder(key, encoder);
      }
      encoders.push_back(std::move(encoder));
    }
    std::vector<eval::EncoderSource> sources;
    for (std::size_t m = 0; m < methods.size(); ++m)
      sources.push_back({pretext::method_name(methods[m]), spec, &encoders[m].params});
    sources.push_back({"baseline", spec, nullptr});

    cells = eval::proportion_sweep(sources, parts.finetune_pool, parts.finetune_val,
                                   parts.test, grid, sweep, hooks);

    const double lo = ctx.config.real("sweep.gain_lo");
    const double hi = ctx.config.real("sweep.gain_hi");
    const bool interrupted = stop_after_cells < sources.size() *
                                                    grid.proportions.size() *
                                                    grid.seeds_per_point;
    const bool complete =
        !interrupted && std::none_of(cells.begin(), cells.end(),
                                     [](const auto& c) { return c.failed; });
    if (complete) {
      const auto baseline = eval::curve_from_cells(cells, "baseline", grid);
      for (const auto method : methods) {
        const auto curve =
            eval::curve_from_cells(cells, pretext::method_name(method), grid);
        gain_rows.emplace_back(spec.hidden_dims.size(), spec.output_dim(),
                               pretext::method_name(method),
                               eval::gain(curve, baseline, lo, hi));
      }
    }
  } else if (kind == "pretrain_size") {
    eval::PretrainSizeOptions options;
    options.pretext_template = ctx.config.pretext_config();
    options.encoder_spec = ctx.config.encoder_spec(parts.pretrain.dim());
    options.fixed_p = ctx.config.real("sweep.fixed_p");
    options.sweep = sweep;
    options.seeds_per_point =
        static_cast<std::size_t>(ctx.config.integer("sweep.seeds_per_point"));
    const std::vector<double> q_grid = parse_grid(ctx.config.str("sweep.q_grid"));
    cells = eval::pretrain_size_sweep(methods, parts.pretrain, parts.finetune_pool,
                                      parts.finetune_val, parts.test, q_grid,
                                      options, hooks);
  } else if (kind == "architecture") {
    eval::ArchitectureSweepOptions options;
    options.pretext_template = ctx.config.pretext_config();
    for (const auto d : ctx.config.int_list("sweep.depths"))
      options.depths.push_back(static_cast<std::size_t>(d));
    for (const auto w : ctx.config.int_list("sweep.widths"))
      options.widths.push_back(static_cast<std::size_t>(w));
    options.grid.proportions = parse_grid(ctx.config.str("sweep.grid"));
    options.grid.seeds_per_point =
        static_cast<std::size_t>(ctx.config.integer("sweep.seeds_per_point"));
    options.gain_lo = ctx.config.real("sweep.gain_lo");
    options.gain_hi = ctx.config.real("sweep.gain_hi");
    options.sweep = sweep;
    options.collapse_rel_tol = ctx.config.real("collapse.rel_tol");
    options.collapse_abs_floor = ctx.config.real("collapse.abs_floor");
    eval::ArchitectureSweepResult result = eval::architecture_sweep(
        methods, parts.pretrain, parts.pretrain_val, parts.finetune_pool,
        parts.finetune_val, parts.test, options, hooks);
    cells = std::move(result.fit_cells);
    arch_cells = std::move(result.cells);
    for (const auto& cell : arch_cells)
      gain_rows.emplace_back(cell.depth, cell.width, cell.method, cell.gain_value);
  } else {
    fail(ErrorKind::config, "sweep.kind must be proportion|pretrain_size|architecture, got '",
         kind, "'");
  }

  const fs::path results_path = ctx.out_dir / "results.csv";
  write_results_csv(results_path, cells, redact);
  manifest.add_output(results_path);
  if (!gain_rows.empty()) {
    const fs::path gain_path = ctx.out_dir / "gain.csv";
    write_gain_csv(gain_path, gain_rows);
    manifest.add_output(gain_path);
  }
  if (!arch_cells.empty()) {
    const fs::path spectra_path = ctx.out_dir / "spectra.csv";
    write_spectra_csv(spectra_path, arch_cells);
    manifest.add_output(spectra_path);
  }

  for (const auto& cached : cache_ledger.files) manifest.add_output(cached);

  std::size_t failed = 0;
  json failures = json::array();
  for (const auto& cell : cells)
    if (cell.failed) {
      ++failed;
      failures.push_back(cell_to_json(cell));
    }
  manifest.note("kind", kind);
  manifest.note("cells_completed", cells.size() - failed);
  manifest.note("cells_failed", failures);
  manifest.finalize(failed == 0);
  return failed == 0 ? 0 : 1;
}

}  // namespace

int cmd_sweep(const CommandContext& ctx) {
  return run_sweep(ctx, static_cast<std::size_t>(-1));
}

int cmd_sweep_partial(const CommandContext& ctx, std::size_t stop_after_cells) {
  return run_sweep(ctx, stop_after_cells);
}

int cmd_collapse(const CommandContext& raw_ctx) {
  const CommandContext ctx = resolve_context(raw_ctx);
  Manifest manifest(ctx, "collapse");
  const fs::path val_path = data_dir(ctx) / "pretrain_val.tsst";
  if (!fs::exists(val_path))
    fail(ErrorKind::io, val_path.string(), " missing; run the ingest command first");
  const data::DataTable validation = data::load_table(val_path.string());

  const std::string configured = ctx.config.str("finetune.checkpoint");
  const fs::path ckpt =
      configured.empty() ? default_checkpoint(ctx) : fs::path(configured);
  manifest.add_input(ckpt);
  auto [spec, params] = load_encoder(ckpt.string());
  if (spec.input_dim != validation.dim())
    fail(ErrorKind::schema, "checkpoint expects ", spec.input_dim,
         " features, validation data has ", validation.dim());

  const Matrix embeddings = nn::mlp_infer(spec, params, validation.features);
  const Matrix covariance = eval::embedding_covariance(embeddings);
  const eval::CollapseReport report = eval::singular_spectrum(
      covariance, ctx.config.real("collapse.rel_tol"),
      ctx.config.real("collapse.abs_floor"));

  std::string text = "k,sigma_k,log10_sigma\n";
  for (std::size_t k = 0; k < report.singular_values.size(); ++k)
    text += std::to_string(k) + "," +
            format_double(report.singular_values[k], "%.12g") + "," +
            format_double(report.log_spectrum[k], "%.6f") + "\n";
  const fs::path spectrum_path = ctx.out_dir / "spectrum.csv";
  write_text(spectrum_path, text);
  manifest.add_output(spectrum_path);

  json doc;
  doc["dim"] = report.dim;
  doc["collapsed_count"] = report.collapsed_count;
  doc["tolerance"] = report.tolerance;
  doc["sigma_1"] = report.singular_values.front();
  const fs::path report_path = ctx.out_dir / "collapse.json";
  write_json(report_path, doc);
  manifest.add_output(report_path);
  manifest.finalize(true);
  return 0;
}

namespace {

json csv_to_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open: ", path.string());
  std::string line;
  if (!std::getline(in, line)) return json::array();
  std::vector<std::string> header;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    header.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  json rows = json::array();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row;
    std::size_t cell_start = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      const std::size_t comma = line.find(',', cell_start);
      row[header[c]] = line.substr(cell_start, comma - cell_start);
      cell_start = comma == std::string::npos ? line.size() + 1 : comma + 1;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

int cmd_report(const CommandContext& raw_ctx) {
  const CommandContext ctx = resolve_context(raw_ctx);
  Manifest manifest(ctx, "report");
  json doc;
  doc["library_version"] = std::string(kLibraryVersion);
  for (const char* name : {"results.csv", "gain.csv", "spectra.csv", "spectrum.csv"}) {
    const fs::path p = ctx.out_dir / name;
    if (fs::exists(p)) {
      std::string key = name;
      key = key.substr(0, key.find('.'));
      doc[key] = csv_to_json(p);
      manifest.add_input(p);
    }
  }
  for (const char* name : {"fit_report.json", "collapse.json"}) {
    const fs::path p = ctx.out_dir / name;
    if (fs::exists(p)) {
      std::string key = name;
      key = key.substr(0, key.find('.'));
      doc[key] = read_json(p);
      manifest.add_input(p);
    }
  }
  const fs::path out = ctx.out_dir / "report.json";
  write_json(out, doc);
  manifest.add_output(out);
  manifest.finalize(true);
  return 0;
}

}  // namespace tssl::cli
