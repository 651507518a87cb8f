#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "prunekit/model.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/schedule.hpp"
#include "prunekit/trainer.hpp"

namespace prunekit {

// Synthetic corpus settings ("corpus" section).
struct CorpusSettings {
  std::uint64_t seed = 1234;
  int vocab_size = 64;
  int order = 2;
  std::int64_t length = 240000;
  double holdout = 0.05;

  void validate() const;
};

// Optimization settings; the "train" and "finetune" sections share this shape.
// lambda_l1 only takes effect while training under a mask.
struct TrainSettings {
  double learning_rate = 0.7;
  int epochs = 3;
  int batch_size = 4;
  std::optional<double> grad_clip = 5.0;  // JSON null disables clipping
  double lambda_l1 = 0.0;

  void validate() const;
  TrainConfig to_train_config(std::uint64_t seed) const;
};

// One-shot pruning settings ("prune" section).
struct PruneSettings {
  double rate = 0.5;
  std::string scope = "global";            // global | per_layer
  std::string rate_basis = "of_original";  // of_original | of_remaining
  // When set, prune by absolute threshold instead of by rate.
  std::optional<double> threshold_override;

  void validate() const;
  PruneScope scope_enum() const;
};

// Iterative schedule settings ("schedule" section).
struct ScheduleSettings {
  std::string kind = "constant";
  double start_sparsity = 0.0;
  double final_sparsity = 0.5;
  int iterations = 3;
  double alpha = 3.0;

  void validate() const;
  Schedule to_schedule() const;
};

// Metric-suite sizing ("eval" section).
struct EvalSettings {
  int last_token_examples = 800;
  int cloze_items = 400;
  int context_len = 12;      // context length for both example kinds
  int continuation_len = 4;  // cloze continuation length

  void validate() const;
};

struct ModelSettings {
  int vocab_size = 64;
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;
  int d_ff = 128;
  int context_len = 16;
  std::uint64_t seed = 42;

  ModelConfig to_model_config() const;
};

// The full experiment document. Field defaults here are the config defaults;
// a config file and --set/--seed/--rates/--out overrides are layered on top
// (command line beats file beats defaults).
struct ExperimentConfig {
  ModelSettings model;
  CorpusSettings corpus;
  TrainSettings train;
  // Recovery after pruning runs cooler and shorter than base training.
  TrainSettings finetune{0.2, 1, 4, 5.0, 0.0};
  PruneSettings prune;
  ScheduleSettings schedule;
  EvalSettings eval;
  std::vector<std::uint64_t> seeds = {42};
  std::vector<double> rates = {0.1, 0.3, 0.5};
  std::string out_dir;  // empty: $PRUNEKIT_OUT if set, else "runs"

  // Validates every section plus cross-section constraints.
  void validate() const;
};

// Command-line surface that feeds config resolution.
struct CliOverlay {
  std::optional<std::string> config_path;
  std::vector<std::string> sets;  // dotted KEY=VALUE pairs
  std::optional<std::string> out_dir;
  std::vector<std::uint64_t> seeds;
  std::optional<std::vector<double>> rates;
};

// Defaults -> config file -> --set/--seed/--rates/--out, in that order.
// Unknown keys anywhere are a ConfigError naming the offending key; so are
// type mismatches and out-of-range values.
ExperimentConfig resolve_config(const CliOverlay& overlay);

// The fully resolved document, suitable for echoing next to run artifacts.
nlohmann::json to_json(const ExperimentConfig& cfg);

}  // namespace prunekit
