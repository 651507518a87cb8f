// prunekit command-line tool. Every subcommand takes the same config surface:
// an optional JSON file plus --set overrides, with CLI flags taking the last
// word. Errors come out as a single JSON line on stderr and a nonzero exit.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prunekit/commands.hpp"

namespace {

std::vector<double> parse_rates(const std::string& csv) {
  std::vector<double> rates;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    const std::size_t comma = csv.find(',', pos);
    const std::string item = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    try {
      std::size_t used = 0;
      rates.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw prunekit::ConfigError("--rates expects comma-separated numbers, got '" + csv + "'");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return rates;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"magnitude pruning toolkit for toy transformers"};
  app.fallthrough();  // global options may appear after the subcommand

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::string rates_csv;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", sets, "KEY=VALUE config override (repeatable, dotted keys)");
  app.add_option("--out", out_dir, "output directory for run artifacts");
  app.add_option("--seed", seeds, "random seed (repeatable)");
  app.add_option("--rates", rates_csv, "comma-separated pruning rates for sweep");

  app.add_subcommand("train", "train a dense model and write model.prnk");
  app.add_subcommand("prune", "build and apply a magnitude pruning mask");
  app.add_subcommand("finetune", "finetune a pruned model under its mask");
  app.add_subcommand("loop", "run the iterative prune-finetune schedule");
  app.add_subcommand("eval", "score the most refined checkpoint on the held-out split");
  app.add_subcommand("sweep", "prune-finetune-eval across rates and seeds");
  app.add_subcommand("export", "write the masked model as a sparse CSR checkpoint");
  app.add_subcommand("report", "regenerate markdown tables from run CSVs");
  app.require_subcommand(1);

  CLI11_PARSE(app, argc, argv);

  try {
    prunekit::CliOverlay overlay;
    if (!config_path.empty()) overlay.config_path = config_path;
    overlay.sets = sets;
    if (!out_dir.empty()) overlay.out_dir = out_dir;
    overlay.seeds = seeds;
    if (!rates_csv.empty()) overlay.rates = parse_rates(rates_csv);

    const prunekit::ExperimentConfig cfg = prunekit::resolve_config(overlay);
    prunekit::run_command(app.get_subcommands().front()->get_name(), cfg);
    return 0;
  } catch (const prunekit::Error& e) {
    const nlohmann::json err = {{"error", prunekit::error_kind(e)}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    const nlohmann::json err = {{"error", "internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  }
}
