#include "prunekit/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "prunekit/checkpoint.hpp"
#include "prunekit/eval.hpp"

namespace prunekit {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Collects artifacts under temporary names and renames them into place only
// on commit, so a failing command never leaves partial outputs behind.
class ArtifactStage {
 public:
  explicit ArtifactStage(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory '" + dir_.string() + "'");
  }

  ArtifactStage(const ArtifactStage&) = delete;
  ArtifactStage& operator=(const ArtifactStage&) = delete;

  ~ArtifactStage() {
    for (const Entry& e : staged_) {
      std::error_code ec;
      fs::remove(e.tmp, ec);  // best effort; only uncommitted temps remain
    }
  }

  fs::path stage(const std::string& filename) {
    Entry e{dir_ / (filename + ".tmp"), dir_ / filename};
    staged_.push_back(e);
    return staged_.back().tmp;
  }

  void write_text(const std::string& filename, const std::string& content) {
    const fs::path p = stage(filename);
    std::ofstream os(p);
    if (!os) throw IoError("cannot open '" + p.string() + "' for writing");
    os << content;
    if (!os) throw IoError("failed while writing '" + p.string() + "'");
  }

  void commit() {
    for (const Entry& e : staged_) {
      std::error_code ec;
      fs::rename(e.tmp, e.final, ec);
      if (ec) throw IoError("cannot move '" + e.tmp.string() + "' into place");
    }
    staged_.clear();
  }

 private:
  struct Entry {
    fs::path tmp;
    fs::path final;
  };
  fs::path dir_;
  std::vector<Entry> staged_;
};

void echo_config(ArtifactStage& stage, const ExperimentConfig& cfg) {
  stage.write_text("config.resolved.json", to_json(cfg).dump(2) + "\n");
}

SyntheticCorpus build_corpus(const ExperimentConfig& cfg) {
  return generate_corpus(cfg.corpus.seed, cfg.corpus.vocab_size, cfg.corpus.order,
                         static_cast<std::size_t>(cfg.corpus.length), cfg.corpus.holdout);
}

// Offsets derive independent streams from the corpus seed: one for the
// distractor chain's structure, one for its continuation draws.
constexpr std::uint64_t kDistractorSeedOffset = 7919;
constexpr std::uint64_t kClozeSeedOffset = 104729;

EvalSuite build_suite(const ExperimentConfig& cfg, const SyntheticCorpus& corpus) {
  EvalSuite suite;
  suite.held_tokens = corpus.held_tokens;
  suite.last_token_examples = make_last_token_examples(
      corpus.held_tokens, static_cast<std::size_t>(cfg.eval.last_token_examples),
      static_cast<std::size_t>(cfg.eval.context_len));
  const MarkovChain distractor = MarkovChain::random(cfg.corpus.seed + kDistractorSeedOffset,
                                                     cfg.corpus.vocab_size, cfg.corpus.order);
  suite.cloze_items = make_cloze_items(
      corpus.held_tokens, static_cast<std::size_t>(cfg.eval.cloze_items),
      static_cast<std::size_t>(cfg.eval.context_len),
      static_cast<std::size_t>(cfg.eval.continuation_len), distractor,
      cfg.corpus.seed + kClozeSeedOffset);
  return suite;
}

// The pipeline convention: each command consumes the most refined checkpoint
// present. Returns an empty path when none of the candidates exists.
fs::path find_checkpoint(const fs::path& dir, const std::vector<std::string>& candidates) {
  for (const std::string& name : candidates) {
    const fs::path p = dir / name;
    if (fs::exists(p)) return p;
  }
  return {};
}

LoadedCheckpoint load_pipeline_checkpoint(const ExperimentConfig& cfg,
                                          const std::vector<std::string>& candidates,
                                          const std::string& hint) {
  const fs::path p = find_checkpoint(cfg.out_dir, candidates);
  if (p.empty()) {
    throw InputError("no checkpoint found in '" + cfg.out_dir + "' (looked for " +
                     [&] {
                       std::string names;
                       for (const auto& c : candidates) {
                         if (!names.empty()) names += ", ";
                         names += c;
                       }
                       return names;
                     }() +
                     "); " + hint);
  }
  return load_checkpoint(p.string());
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream os;
  history.write_csv(os);
  return os.str();
}

const char* kEvalCsvHeader =
    "checkpoint,perplexity,last_token_accuracy,cloze_accuracy,sparsity,nonzero_params,"
    "total_params,corpus_entropy_rate";

std::string eval_report_csv(const std::string& checkpoint, const EvalReport& r,
                            double entropy_rate) {
  std::ostringstream os;
  os << kEvalCsvHeader << '\n'
     << checkpoint << ',' << fmt_double(r.perplexity) << ','
     << fmt_double(r.last_token_accuracy) << ',' << fmt_double(r.cloze_accuracy) << ','
     << fmt_double(r.sparsity) << ',' << r.nonzero_params << ',' << r.total_params << ','
     << fmt_double(entropy_rate) << '\n';
  return os.str();
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string eval_report_markdown(const std::string& checkpoint, const EvalReport& r,
                                 double entropy_rate) {
  std::ostringstream os;
  os << "| checkpoint | perplexity | last_token (acc) | cloze (acc) | sparsity | nonzero params "
        "|\n";
  os << "|------------|------------|------------------|-------------|----------|----------------"
        "|\n";
  os << "| " << checkpoint << " | " << fmt_fixed(r.perplexity, 4) << " | "
     << fmt_fixed(r.last_token_accuracy, 4) << " | " << fmt_fixed(r.cloze_accuracy, 4) << " | "
     << fmt_fixed(r.sparsity, 4) << " | " << r.nonzero_params << " |\n";
  os << "\ncorpus entropy rate: " << fmt_fixed(entropy_rate, 4)
     << " nats/token (perplexity floor exp(H) = " << fmt_fixed(std::exp(entropy_rate), 4)
     << ")\n";
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      cols.push_back(line.substr(pos));
      return cols;
    }
    cols.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
}

double parse_double_field(const std::string& s, const std::string& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("malformed numeric field '" + s + "' in " + file);
  }
}

long long parse_count_field(const std::string& s, const std::string& file) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("malformed count field '" + s + "' in " + file);
  }
}

// Rebuilds just enough of a SweepResult from sweep.csv to regenerate the
// markdown table: the baseline row and the per-rate medians.
SweepResult parse_sweep_csv(std::istream& is, const std::string& file) {
  SweepResult result;
  std::string line;
  if (!std::getline(is, line) ||
      line != "model,kind,rate,seed,phase,perplexity,last_token_accuracy,cloze_accuracy,"
              "sparsity,n_params,n_params_effective") {
    throw FormatError("unrecognized header in " + file);
  }
  auto row_for_rate = [&result](double rate) -> SweepRow& {
    for (SweepRow& row : result.rows) {
      if (row.rate == rate) return row;
    }
    result.rows.push_back(SweepRow{rate, 0, {}, {}});
    return result.rows.back();
  };
  bool saw_baseline = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_csv_line(line);
    if (cols.size() != 11) throw FormatError("wrong column count in " + file);
    EvalReport report;
    report.perplexity = parse_double_field(cols[5], file);
    report.last_token_accuracy = parse_double_field(cols[6], file);
    report.cloze_accuracy = parse_double_field(cols[7], file);
    report.sparsity = parse_double_field(cols[8], file);
    report.nonzero_params = parse_count_field(cols[9], file);
    if (cols[1] == "baseline") {
      result.model_name = cols[0];
      result.baseline = report;
      result.baseline_params = parse_count_field(cols[10], file);
      saw_baseline = true;
    } else if (cols[1] == "median") {
      SweepRow& row = row_for_rate(parse_double_field(cols[2], file));
      row.n_params_effective = parse_count_field(cols[10], file);
      if (cols[4] == "after_prune") {
        row.median_after_prune = report;
      } else if (cols[4] == "after_finetune") {
        row.median_after_finetune = report;
      } else {
        throw FormatError("unknown phase '" + cols[4] + "' in " + file);
      }
    } else if (cols[1] != "cell") {
      throw FormatError("unknown row kind '" + cols[1] + "' in " + file);
    }
  }
  if (!saw_baseline) throw FormatError("no baseline row in " + file);
  return result;
}

void cmd_train(const ExperimentConfig& cfg, ArtifactStage& stage) {
  const SyntheticCorpus corpus = build_corpus(cfg);
  TransformerModel model(cfg.model.to_model_config());
  const TrainHistory history =
      train(model, corpus.train_tokens, cfg.train.to_train_config(cfg.seeds.front()));
  save_checkpoint(model, stage.stage("model.prnk").string());
  stage.write_text("train_history.csv", history_csv(history));
}

void cmd_prune(const ExperimentConfig& cfg, ArtifactStage& stage) {
  LoadedCheckpoint ckpt = load_pipeline_checkpoint(
      cfg, {"looped.prnk", "finetuned.prnk", "pruned.prnk", "model.prnk"},
      "run the train command first");
  const PruningMask* existing = ckpt.mask.has_value() ? &*ckpt.mask : nullptr;

  PruningMask mask = [&] {
    if (cfg.prune.threshold_override.has_value()) {
      return build_mask_by_threshold(ckpt.model, *cfg.prune.threshold_override,
                                     cfg.prune.scope_enum(), existing);
    }
    // of_original targets an overall sparsity; of_remaining removes a
    // fraction of whatever currently survives.
    const double fraction =
        cfg.prune.rate_basis == "of_original"
            ? iteration_prune_fraction(existing != nullptr ? existing->sparsity() : 0.0,
                                       cfg.prune.rate)
            : cfg.prune.rate;
    return build_mask(ckpt.model, fraction, cfg.prune.scope_enum(), existing);
  }();
  apply_mask(ckpt.model, mask);

  save_checkpoint(ckpt.model, stage.stage("pruned.prnk").string(), &mask);
  const ParamReport report = ckpt.model.param_report(&mask);
  std::ostringstream os;
  os << "total_params,prunable_params,nonzero_params,sparsity\n"
     << report.total_params << ',' << report.prunable_params << ',' << report.nonzero_params
     << ',' << fmt_double(report.sparsity) << '\n';
  stage.write_text("param_report.csv", os.str());
}

void cmd_finetune(const ExperimentConfig& cfg, ArtifactStage& stage) {
  LoadedCheckpoint ckpt =
      load_pipeline_checkpoint(cfg, {"pruned.prnk"}, "run the prune command first");
  if (!ckpt.mask.has_value()) {
    throw InputError("checkpoint has no pruning mask; run the prune command first");
  }
  const SyntheticCorpus corpus = build_corpus(cfg);
  const TrainHistory history = finetune(ckpt.model, *ckpt.mask, corpus.train_tokens,
                                        cfg.finetune.to_train_config(cfg.seeds.front()));
  save_checkpoint(ckpt.model, stage.stage("finetuned.prnk").string(), &*ckpt.mask);
  stage.write_text("finetune_history.csv", history_csv(history));
}

void cmd_loop(const ExperimentConfig& cfg, ArtifactStage& stage) {
  LoadedCheckpoint ckpt =
      load_pipeline_checkpoint(cfg, {"model.prnk"}, "run the train command first");
  const SyntheticCorpus corpus = build_corpus(cfg);
  const LoopResult result =
      prune_finetune_loop(ckpt.model, corpus.train_tokens, cfg.schedule.to_schedule(),
                          cfg.prune.scope_enum(), cfg.finetune.to_train_config(cfg.seeds.front()));
  save_checkpoint(ckpt.model, stage.stage("looped.prnk").string(), &result.mask);
  stage.write_text("loop_history.csv", history_csv(result.history));
  std::ostringstream os;
  os << "iteration,target_sparsity,achieved_sparsity\n";
  for (std::size_t t = 0; t < result.target_sparsity.size(); ++t) {
    os << t << ',' << fmt_double(result.target_sparsity[t]) << ','
       << fmt_double(result.achieved_sparsity[t]) << '\n';
  }
  stage.write_text("loop_trajectory.csv", os.str());
}

void cmd_eval(const ExperimentConfig& cfg, ArtifactStage& stage) {
  const fs::path p = find_checkpoint(
      cfg.out_dir, {"looped.prnk", "finetuned.prnk", "pruned.prnk", "model.prnk"});
  if (p.empty()) {
    throw InputError("no checkpoint to evaluate in '" + cfg.out_dir +
                     "'; run the train command first");
  }
  LoadedCheckpoint ckpt = load_checkpoint(p.string());
  const SyntheticCorpus corpus = build_corpus(cfg);
  const EvalSuite suite = build_suite(cfg, corpus);
  const EvalReport report =
      evaluate(ckpt.model, suite, ckpt.mask.has_value() ? &*ckpt.mask : nullptr);
  const std::string name = p.filename().string();
  stage.write_text("eval_report.csv", eval_report_csv(name, report, corpus.entropy_rate));
  stage.write_text("eval_report.md", eval_report_markdown(name, report, corpus.entropy_rate));
}

void cmd_export(const ExperimentConfig& cfg, ArtifactStage& stage) {
  LoadedCheckpoint ckpt = load_pipeline_checkpoint(
      cfg, {"looped.prnk", "finetuned.prnk", "pruned.prnk"}, "run the prune command first");
  if (!ckpt.mask.has_value()) {
    throw InputError("checkpoint has no pruning mask; run the prune command first");
  }
  const SparseExportResult result =
      export_sparse(ckpt.model, *ckpt.mask, stage.stage("sparse.prnk").string());
  std::ostringstream os;
  os << "sparse_bytes,dense_bytes,compression_ratio\n"
     << result.sparse_bytes << ',' << result.dense_bytes << ','
     << fmt_double(result.compression_ratio) << '\n';
  stage.write_text("export_report.csv", os.str());
}

void cmd_sweep(const ExperimentConfig& cfg, ArtifactStage& stage) {
  const SyntheticCorpus corpus = build_corpus(cfg);
  const EvalSuite suite = build_suite(cfg, corpus);

  // Reuse an existing base model; otherwise train one here so a sweep is
  // reproducible from a bare directory.
  const fs::path base_path = find_checkpoint(cfg.out_dir, {"model.prnk"});
  TransformerModel base = [&] {
    if (!base_path.empty()) return std::move(load_checkpoint(base_path.string()).model);
    TransformerModel model(cfg.model.to_model_config());
    train(model, corpus.train_tokens, cfg.train.to_train_config(cfg.seeds.front()));
    save_checkpoint(model, stage.stage("model.prnk").string());
    return model;
  }();

  const SweepResult result = sweep(base, cfg.rates, cfg.seeds, cfg.prune.scope_enum(),
                                   cfg.finetune.to_train_config(0), corpus.train_tokens, suite);
  std::ostringstream csv;
  write_sweep_csv(result, csv);
  stage.write_text("sweep.csv", csv.str());
  std::ostringstream md;
  write_sweep_markdown(result, md);
  stage.write_text("sweep.md", md.str());
}

void cmd_report(const ExperimentConfig& cfg, ArtifactStage& stage) {
  bool found = false;
  const fs::path sweep_csv = fs::path(cfg.out_dir) / "sweep.csv";
  if (fs::exists(sweep_csv)) {
    std::ifstream is(sweep_csv);
    if (!is) throw IoError("cannot open '" + sweep_csv.string() + "' for reading");
    const SweepResult result = parse_sweep_csv(is, sweep_csv.string());
    std::ostringstream md;
    write_sweep_markdown(result, md);
    stage.write_text("sweep.md", md.str());
    found = true;
  }
  const fs::path eval_csv = fs::path(cfg.out_dir) / "eval_report.csv";
  if (fs::exists(eval_csv)) {
    std::ifstream is(eval_csv);
    if (!is) throw IoError("cannot open '" + eval_csv.string() + "' for reading");
    std::string header;
    std::string row;
    if (!std::getline(is, header) || header != kEvalCsvHeader || !std::getline(is, row)) {
      throw FormatError("unrecognized header in " + eval_csv.string());
    }
    const std::vector<std::string> cols = split_csv_line(row);
    if (cols.size() != 8) throw FormatError("wrong column count in " + eval_csv.string());
    EvalReport report;
    report.perplexity = parse_double_field(cols[1], eval_csv.string());
    report.last_token_accuracy = parse_double_field(cols[2], eval_csv.string());
    report.cloze_accuracy = parse_double_field(cols[3], eval_csv.string());
    report.sparsity = parse_double_field(cols[4], eval_csv.string());
    report.nonzero_params = parse_count_field(cols[5], eval_csv.string());
    report.total_params = parse_count_field(cols[6], eval_csv.string());
    const double entropy = parse_double_field(cols[7], eval_csv.string());
    stage.write_text("eval_report.md", eval_report_markdown(cols[0], report, entropy));
    found = true;
  }
  if (!found) {
    throw InputError("nothing to report on in '" + cfg.out_dir +
                     "'; run the eval or sweep command first");
  }
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"train", "prune", "finetune", "loop",
                                                 "eval",  "sweep", "export",   "report"};
  return names;
}

void run_command(const std::string& name, const ExperimentConfig& cfg) {
  cfg.validate();
  ArtifactStage stage{fs::path(cfg.out_dir)};
  echo_config(stage, cfg);
  if (name == "train") {
    cmd_train(cfg, stage);
  } else if (name == "prune") {
    cmd_prune(cfg, stage);
  } else if (name == "finetune") {
    cmd_finetune(cfg, stage);
  } else if (name == "loop") {
    cmd_loop(cfg, stage);
  } else if (name == "eval") {
    cmd_eval(cfg, stage);
  } else if (name == "sweep") {
    cmd_sweep(cfg, stage);
  } else if (name == "export") {
    cmd_export(cfg, stage);
  } else if (name == "report") {
    cmd_report(cfg, stage);
  } else {
    throw ContractError("unknown command '" + name + "'");
  }
  stage.commit();
}

std::string error_kind(const Error& e) {
  if (dynamic_cast<const DimensionError*>(&e) != nullptr) return "dimension";
  if (dynamic_cast<const ContractError*>(&e) != nullptr) return "contract";
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return "config";
  if (dynamic_cast<const InputError*>(&e) != nullptr) return "input";
  if (dynamic_cast<const IndexError*>(&e) != nullptr) return "index";
  if (dynamic_cast<const FormatError*>(&e) != nullptr) return "format";
  if (dynamic_cast<const VersionError*>(&e) != nullptr) return "version";
  if (dynamic_cast<const CorruptionError*>(&e) != nullptr) return "corruption";
  if (dynamic_cast<const IoError*>(&e) != nullptr) return "io";
  return "error";
}

}  // namespace prunekit
