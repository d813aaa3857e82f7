// tssl — self-supervised pretraining and benchmarking for tabular data.

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "tssl/runner.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string out_dir = "tssl_out";
  std::size_t jobs = 1;
  long long seed = -1;  // -1 = keep the config value
  std::vector<std::string> overrides;
};

tssl::cli::CommandContext make_context(const GlobalArgs& args) {
  tssl::cli::CommandContext ctx;
  ctx.config = args.config_path.empty()
                   ? tssl::cli::RunConfig()
                   : tssl::cli::RunConfig::from_file(args.config_path);
  for (const auto& kv : args.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      tssl::fail(tssl::ErrorKind::config, "--set expects key=value, got '", kv, "'");
    ctx.config.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed >= 0)
    ctx.config.set("seed", static_cast<std::int64_t>(args.seed));
  ctx.out_dir = args.out_dir;
  ctx.jobs = args.jobs == 0 ? 1 : args.jobs;
  return ctx;
}

void add_global_options(CLI::App* cmd, GlobalArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--jobs", args.jobs, "worker threads for sweep cells");
  cmd->add_option("--seed", args.seed, "master seed (overrides config)");
  cmd->add_option("--set", args.overrides, "config override key=value")
      ->take_all();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised pretraining, fine-tuning and benchmark sweeps "
               "for high-dimensional tabular data"};
  app.require_subcommand(1);
  GlobalArgs args;

  auto* ingest = app.add_subcommand("ingest", "load, preprocess and split a corpus");
  add_global_options(ingest, args);
  bool synthetic = false;
  ingest->add_flag("--synthetic", synthetic, "generate a synthetic corpus");

  auto* pretrain = app.add_subcommand("pretrain", "run a pretext task on the "
                                                  "pretraining partition");
  add_global_options(pretrain, args);
  std::string method;
  pretrain->add_option("--method", method, "scarf | vime | byol");

  auto* finetune = app.add_subcommand("finetune", "fit a classification head "
                                                  "(optionally frozen)");
  add_global_options(finetune, args);
  bool frozen = false, from_scratch = false;
  double proportion = -1.0;
  std::string checkpoint;
  finetune->add_flag("--frozen", frozen, "freeze the encoder");
  finetune->add_flag("--from-scratch", from_scratch, "ignore any checkpoint");
  finetune->add_option("--proportion", proportion, "label fraction p");
  finetune->add_option("--checkpoint", checkpoint, "encoder checkpoint path");

  auto* sweep = app.add_subcommand("sweep", "label-fraction / pretrain-size / "
                                            "architecture sweeps");
  add_global_options(sweep, args);
  std::string grid, kind;
  bool redact = false;
  sweep->add_option("--grid", grid, "label-fraction grid lo:hi:step[,...]");
  sweep->add_option("--kind", kind, "proportion | pretrain_size | architecture");
  sweep->add_flag("--redact-timing", redact, "write wall_ms as 0 for "
                                             "bit-reproducible output");

  auto* collapse = app.add_subcommand("collapse", "singular-value spectrum of "
                                                  "validation embeddings");
  add_global_options(collapse, args);
  std::string collapse_ckpt;
  collapse->add_option("--checkpoint", collapse_ckpt, "encoder checkpoint path");

  auto* report = app.add_subcommand("report", "mirror all CSV outputs into one "
                                              "JSON report");
  add_global_options(report, args);

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    tssl::cli::CommandContext ctx = make_context(args);
    if (ingest->parsed()) {
      if (synthetic) ctx.config.set("data.synthetic", true);
      return tssl::cli::cmd_ingest(ctx);
    }
    if (pretrain->parsed()) {
      if (!method.empty()) ctx.config.set("pretext.method", method);
      return tssl::cli::cmd_pretrain(ctx);
    }
    if (finetune->parsed()) {
      if (frozen) ctx.config.set("finetune.frozen", true);
      if (from_scratch) ctx.config.set("finetune.from_scratch", true);
      if (proportion >= 0.0) ctx.config.set("finetune.proportion", proportion);
      if (!checkpoint.empty()) ctx.config.set("finetune.checkpoint", checkpoint);
      return tssl::cli::cmd_finetune(ctx);
    }
    if (sweep->parsed()) {
      if (!grid.empty()) ctx.config.set("sweep.grid", grid);
      if (!kind.empty()) ctx.config.set("sweep.kind", kind);
      if (redact) ctx.config.set("report.redact_timing", true);
      return tssl::cli::cmd_sweep(ctx);
    }
    if (collapse->parsed()) {
      if (!collapse_ckpt.empty()) ctx.config.set("finetune.checkpoint", collapse_ckpt);
      return tssl::cli::cmd_collapse(ctx);
    }
    if (report->parsed()) return tssl::cli::cmd_report(ctx);
  } catch (const tssl::Error& e) {
    std::fprintf(stderr, "%s\n", tssl::cli::error_record(command, e).c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "{\"error\":{\"command\":\"%s\",\"kind\":\"internal\",\"message\":\"%s\"}}\n",
                 command.c_str(), e.what());
    return 1;
  }
  return 0;
}
