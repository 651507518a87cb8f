#pragma once

#include <string>
#include <vector>

#include "prunekit/config.hpp"

namespace prunekit {

// The CLI subcommands, in documentation order.
const std::vector<std::string>& command_names();

// Runs one subcommand against a resolved config. Commands communicate through
// checkpoints in cfg.out_dir (model.prnk -> pruned.prnk -> finetuned.prnk /
// looped.prnk -> sparse.prnk); each refuses to run when its input checkpoint
// is missing. Artifacts are written to temporary names and renamed into place
// only when the whole command has succeeded, so a failed run leaves no
// partial outputs behind. Throws the toolkit error types; ContractError for
// an unknown command name.
void run_command(const std::string& name, const ExperimentConfig& cfg);

// Short machine-readable tag for an error's category ("config", "io", ...),
// used by the CLI's JSON error lines.
std::string error_kind(const Error& e);

}  // namespace prunekit
