#include "prunekit/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace prunekit {

namespace {

using nlohmann::json;

// Recursive merge: objects merge key by key, everything else (scalars,
// arrays, nulls) replaces. Unlike RFC 7386 merge-patch, an explicit null is
// kept as a value — "grad_clip": null must mean "disable", not "unset".
void merge_into(json& base, const json& overlay) {
  if (base.is_object() && overlay.is_object()) {
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
      merge_into(base[it.key()], it.value());
    }
  } else {
    base = overlay;
  }
}

void reject_unknown_keys(const json& doc, const json& schema, const std::string& prefix) {
  if (!doc.is_object() || !schema.is_object()) return;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    reject_unknown_keys(it.value(), schema.at(it.key()), path);
  }
}

const json* navigate(const json& doc, const std::string& dotted) {
  const json* cur = &doc;
  std::size_t pos = 0;
  while (pos <= dotted.size()) {
    const std::size_t dot = dotted.find('.', pos);
    const std::string key = dotted.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &cur->at(key);
    if (dot == std::string::npos) return cur;
    pos = dot + 1;
  }
  return nullptr;
}

json* navigate_mut(json& doc, const std::string& dotted) {
  return const_cast<json*>(navigate(const_cast<const json&>(doc), dotted));
}

// Typed extraction helpers. Every failure names the full dotted key.

[[noreturn]] void type_error(const std::string& key, const char* expected) {
  throw ConfigError("config key '" + key + "' must be " + expected);
}

double get_double(const json& doc, const std::string& key) {
  const json* v = navigate(doc, key);
  if (v == nullptr || !v->is_number()) type_error(key, "a number");
  return v->get<double>();
}

int get_int(const json& doc, const std::string& key) {
  const json* v = navigate(doc, key);
  if (v == nullptr || !v->is_number_integer()) type_error(key, "an integer");
  return v->get<int>();
}

std::int64_t get_int64(const json& doc, const std::string& key) {
  const json* v = navigate(doc, key);
  if (v == nullptr || !v->is_number_integer()) type_error(key, "an integer");
  return v->get<std::int64_t>();
}

std::uint64_t get_seed(const json& doc, const std::string& key) {
  const json* v = navigate(doc, key);
  if (v == nullptr || !v->is_number_integer() ||
      (v->is_number_integer() && !v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
    type_error(key, "a non-negative integer");
  }
  return v->get<std::uint64_t>();
}

std::string get_string(const json& doc, const std::string& key) {
  const json* v = navigate(doc, key);
  if (v == nullptr || !v->is_string()) type_error(key, "a string");
  return v->get<std::string>();
}

std::optional<double> get_optional_double(const json& doc, const std::string& key) {
  const json* v = navigate(doc, key);
  if (v == nullptr || (!v->is_null() && !v->is_number())) type_error(key, "a number or null");
  if (v->is_null()) return std::nullopt;
  return v->get<double>();
}

}  // namespace

void CorpusSettings::validate() const {
  if (vocab_size < 2) {
    throw ConfigError("corpus.vocab_size must be >= 2, got " + std::to_string(vocab_size));
  }
  if (order < 0) {
    throw ConfigError("corpus.order must be >= 0, got " + std::to_string(order));
  }
  if (length < 2) {
    throw ConfigError("corpus.length must be >= 2, got " + std::to_string(length));
  }
  if (!(holdout >= 0.0 && holdout < 1.0)) {
    throw ConfigError("corpus.holdout must lie in [0,1), got " + std::to_string(holdout));
  }
}

void TrainSettings::validate() const { to_train_config(0).validate(); }

TrainConfig TrainSettings::to_train_config(std::uint64_t seed) const {
  TrainConfig cfg;
  cfg.learning_rate = learning_rate;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.grad_clip = grad_clip;
  cfg.lambda_l1 = lambda_l1;
  cfg.seed = seed;
  return cfg;
}

void PruneSettings::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError("prune.rate must satisfy 0 <= rate <= 1, got " + std::to_string(rate));
  }
  if (scope != "global" && scope != "per_layer") {
    throw ConfigError("prune.scope must be 'global' or 'per_layer', got '" + scope + "'");
  }
  if (rate_basis != "of_original" && rate_basis != "of_remaining") {
    throw ConfigError("prune.rate_basis must be 'of_original' or 'of_remaining', got '" +
                      rate_basis + "'");
  }
  if (threshold_override.has_value() && !(*threshold_override >= 0.0)) {
    throw ConfigError("prune.threshold_override must be non-negative, got " +
                      std::to_string(*threshold_override));
  }
}

PruneScope PruneSettings::scope_enum() const {
  return scope == "per_layer" ? PruneScope::kPerLayer : PruneScope::kGlobal;
}

void ScheduleSettings::validate() const { to_schedule().validate(); }

Schedule ScheduleSettings::to_schedule() const {
  Schedule s;
  s.kind = schedule_kind_from_string(kind);
  s.start_sparsity = start_sparsity;
  s.final_sparsity = final_sparsity;
  s.iterations = iterations;
  s.alpha = alpha;
  return s;
}

void EvalSettings::validate() const {
  if (last_token_examples < 0) {
    throw ConfigError("eval.last_token_examples must be >= 0");
  }
  if (cloze_items < 0) throw ConfigError("eval.cloze_items must be >= 0");
  if (context_len < 1) throw ConfigError("eval.context_len must be >= 1");
  if (continuation_len < 1) throw ConfigError("eval.continuation_len must be >= 1");
}

ModelConfig ModelSettings::to_model_config() const {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = d_model;
  cfg.n_heads = n_heads;
  cfg.n_layers = n_layers;
  cfg.d_ff = d_ff;
  cfg.context_len = context_len;
  cfg.seed = seed;
  return cfg;
}

void ExperimentConfig::validate() const {
  model.to_model_config().validate();
  corpus.validate();
  train.validate();
  finetune.validate();
  prune.validate();
  schedule.validate();
  eval.validate();
  if (seeds.empty()) throw ConfigError("seeds must contain at least one entry");
  if (rates.empty()) throw ConfigError("rates must contain at least one entry");
  for (double r : rates) {
    if (!(r >= 0.0 && r < 1.0)) {
      throw ConfigError("rates entries must lie in [0,1), got " + std::to_string(r));
    }
  }
  // Cross-section constraints: the corpus must fit the model's vocabulary and
  // the eval examples must fit its context window.
  if (corpus.vocab_size > model.vocab_size) {
    throw ConfigError("corpus.vocab_size (" + std::to_string(corpus.vocab_size) +
                      ") exceeds model.vocab_size (" + std::to_string(model.vocab_size) + ")");
  }
  if (eval.context_len > model.context_len) {
    throw ConfigError("eval.context_len exceeds model.context_len");
  }
  if (eval.context_len + eval.continuation_len > model.context_len) {
    throw ConfigError("eval.context_len + eval.continuation_len exceeds model.context_len");
  }
  if (corpus.order > eval.context_len) {
    throw ConfigError("corpus.order exceeds eval.context_len; cloze distractors need at least "
                      "one full context");
  }
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["model"] = {{"vocab_size", cfg.model.vocab_size}, {"d_model", cfg.model.d_model},
                  {"n_heads", cfg.model.n_heads},       {"n_layers", cfg.model.n_layers},
                  {"d_ff", cfg.model.d_ff},             {"context_len", cfg.model.context_len},
                  {"seed", cfg.model.seed}};
  doc["corpus"] = {{"seed", cfg.corpus.seed},
                   {"vocab_size", cfg.corpus.vocab_size},
                   {"order", cfg.corpus.order},
                   {"length", cfg.corpus.length},
                   {"holdout", cfg.corpus.holdout}};
  const auto train_section = [](const TrainSettings& t) {
    return json{{"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"grad_clip", t.grad_clip.has_value() ? json(*t.grad_clip) : json(nullptr)},
                {"lambda_l1", t.lambda_l1}};
  };
  doc["train"] = train_section(cfg.train);
  doc["finetune"] = train_section(cfg.finetune);
  doc["prune"] = {{"rate", cfg.prune.rate},
                  {"scope", cfg.prune.scope},
                  {"rate_basis", cfg.prune.rate_basis},
                  {"threshold_override", cfg.prune.threshold_override.has_value()
                                             ? json(*cfg.prune.threshold_override)
                                             : json(nullptr)}};
  doc["schedule"] = {{"kind", cfg.schedule.kind},
                     {"start_sparsity", cfg.schedule.start_sparsity},
                     {"final_sparsity", cfg.schedule.final_sparsity},
                     {"iterations", cfg.schedule.iterations},
                     {"alpha", cfg.schedule.alpha}};
  doc["eval"] = {{"last_token_examples", cfg.eval.last_token_examples},
                 {"cloze_items", cfg.eval.cloze_items},
                 {"context_len", cfg.eval.context_len},
                 {"continuation_len", cfg.eval.continuation_len}};
  doc["seeds"] = cfg.seeds;
  doc["rates"] = cfg.rates;
  doc["out_dir"] = cfg.out_dir;
  return doc;
}

ExperimentConfig resolve_config(const CliOverlay& overlay) {
  const json defaults = to_json(ExperimentConfig{});
  json doc = defaults;

  if (overlay.config_path.has_value()) {
    std::ifstream is(*overlay.config_path);
    if (!is) throw IoError("cannot open config file '" + *overlay.config_path + "'");
    std::stringstream buffer;
    buffer << is.rdbuf();
    json file_doc;
    try {
      // nlohmann reports line and column in the exception message.
      file_doc = json::parse(buffer.str());
    } catch (const json::parse_error& e) {
      throw ConfigError("config file '" + *overlay.config_path + "': " + e.what());
    }
    if (!file_doc.is_object()) {
      throw ConfigError("config file '" + *overlay.config_path + "' must hold a JSON object");
    }
    reject_unknown_keys(file_doc, defaults, "");
    merge_into(doc, file_doc);
  }

  for (const std::string& set : overlay.sets) {
    const std::size_t eq = set.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects KEY=VALUE, got '" + set + "'");
    }
    const std::string key = set.substr(0, eq);
    const std::string raw = set.substr(eq + 1);
    json* slot = navigate_mut(doc, key);
    if (slot == nullptr) throw ConfigError("unknown config key '" + key + "'");
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;  // unquoted strings are taken verbatim
    }
    *slot = std::move(value);
  }

  if (!overlay.seeds.empty()) doc["seeds"] = overlay.seeds;
  if (overlay.rates.has_value()) doc["rates"] = *overlay.rates;
  if (overlay.out_dir.has_value()) doc["out_dir"] = *overlay.out_dir;

  ExperimentConfig cfg;
  cfg.model.vocab_size = get_int(doc, "model.vocab_size");
  cfg.model.d_model = get_int(doc, "model.d_model");
  cfg.model.n_heads = get_int(doc, "model.n_heads");
  cfg.model.n_layers = get_int(doc, "model.n_layers");
  cfg.model.d_ff = get_int(doc, "model.d_ff");
  cfg.model.context_len = get_int(doc, "model.context_len");
  cfg.model.seed = get_seed(doc, "model.seed");
  cfg.corpus.seed = get_seed(doc, "corpus.seed");
  cfg.corpus.vocab_size = get_int(doc, "corpus.vocab_size");
  cfg.corpus.order = get_int(doc, "corpus.order");
  cfg.corpus.length = get_int64(doc, "corpus.length");
  cfg.corpus.holdout = get_double(doc, "corpus.holdout");
  const auto read_train = [&doc](TrainSettings& t, const std::string& section) {
    t.learning_rate = get_double(doc, section + ".learning_rate");
    t.epochs = get_int(doc, section + ".epochs");
    t.batch_size = get_int(doc, section + ".batch_size");
    t.grad_clip = get_optional_double(doc, section + ".grad_clip");
    t.lambda_l1 = get_double(doc, section + ".lambda_l1");
  };
  read_train(cfg.train, "train");
  read_train(cfg.finetune, "finetune");
  cfg.prune.rate = get_double(doc, "prune.rate");
  cfg.prune.scope = get_string(doc, "prune.scope");
  cfg.prune.rate_basis = get_string(doc, "prune.rate_basis");
  cfg.prune.threshold_override = get_optional_double(doc, "prune.threshold_override");
  cfg.schedule.kind = get_string(doc, "schedule.kind");
  cfg.schedule.start_sparsity = get_double(doc, "schedule.start_sparsity");
  cfg.schedule.final_sparsity = get_double(doc, "schedule.final_sparsity");
  cfg.schedule.iterations = get_int(doc, "schedule.iterations");
  cfg.schedule.alpha = get_double(doc, "schedule.alpha");
  cfg.eval.last_token_examples = get_int(doc, "eval.last_token_examples");
  cfg.eval.cloze_items = get_int(doc, "eval.cloze_items");
  cfg.eval.context_len = get_int(doc, "eval.context_len");
  cfg.eval.continuation_len = get_int(doc, "eval.continuation_len");

  const json* seeds = navigate(doc, "seeds");
  if (seeds == nullptr || !seeds->is_array()) type_error("seeds", "an array of integers");
  cfg.seeds.clear();
  for (std::size_t i = 0; i < seeds->size(); ++i) {
    const json& v = (*seeds)[i];
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      type_error("seeds[" + std::to_string(i) + "]", "a non-negative integer");
    }
    cfg.seeds.push_back(v.get<std::uint64_t>());
  }
  const json* rates = navigate(doc, "rates");
  if (rates == nullptr || !rates->is_array()) type_error("rates", "an array of numbers");
  cfg.rates.clear();
  for (std::size_t i = 0; i < rates->size(); ++i) {
    const json& v = (*rates)[i];
    if (!v.is_number()) type_error("rates[" + std::to_string(i) + "]", "a number");
    cfg.rates.push_back(v.get<double>());
  }
  cfg.out_dir = get_string(doc, "out_dir");

  if (cfg.out_dir.empty()) {
    const char* env = std::getenv("PRUNEKIT_OUT");
    cfg.out_dir = (env != nullptr && env[0] != '\0') ? env : "runs";
  }

  cfg.validate();
  return cfg;
}

}  // namespace prunekit
