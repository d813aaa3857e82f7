#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tssl/config.hpp"
#include "tssl/eval.hpp"

namespace tssl::cli {

struct CommandContext {
  RunConfig config;
  std::filesystem::path out_dir = "tssl_out";
  std::size_t jobs = 1;
};

/// Subcommand entry points. Each writes a manifest before doing work and
/// finalizes it afterwards; returns a process exit status (0 iff everything
/// requested completed).
int cmd_ingest(const CommandContext& ctx);
int cmd_pretrain(const CommandContext& ctx);
int cmd_finetune(const CommandContext& ctx);
int cmd_sweep(const CommandContext& ctx);
int cmd_collapse(const CommandContext& ctx);
int cmd_report(const CommandContext& ctx);

/// Sorted results CSV (method, mode, proportion, seed, accuracy, stop_epoch,
/// wall_ms). Failed cells are omitted: missing, never fabricated.
void write_results_csv(const std::filesystem::path& path,
                       std::vector<eval::CellResult> cells, bool redact_timing);

/// Test hook: like cmd_sweep but stops after the given number of cells, as
/// an interrupted run would. Resuming afterwards must reproduce the full CSV.
int cmd_sweep_partial(const CommandContext& ctx, std::size_t stop_after_cells);

/// Machine-readable error record emitted on every CLI error path.
std::string error_record(const std::string& command, const Error& error);

}  // namespace tssl::cli
