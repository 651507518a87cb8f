#include "prunekit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>

#include "prunekit/rng.hpp"

namespace prunekit {

namespace {

constexpr std::size_t kMaxTransitionEntries = std::size_t{1} << 23;

// %.17g round-trips doubles exactly, keeping CSV output bit-stable.
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

long long median_of(std::vector<long long> values) {
  std::sort(values.begin(), values.end());
  return values[values.size() / 2];
}

EvalReport median_report(const std::vector<EvalReport>& reports) {
  auto field = [&](double EvalReport::* f) {
    std::vector<double> v;
    for (const EvalReport& r : reports) v.push_back(r.*f);
    return median_of(std::move(v));
  };
  auto count_field = [&](long long EvalReport::* f) {
    std::vector<long long> v;
    for (const EvalReport& r : reports) v.push_back(r.*f);
    return median_of(std::move(v));
  };
  EvalReport m;
  m.perplexity = field(&EvalReport::perplexity);
  m.last_token_accuracy = field(&EvalReport::last_token_accuracy);
  m.cloze_accuracy = field(&EvalReport::cloze_accuracy);
  m.sparsity = field(&EvalReport::sparsity);
  m.nonzero_params = count_field(&EvalReport::nonzero_params);
  m.total_params = count_field(&EvalReport::total_params);
  return m;
}

void check_tokens_in_vocab(std::span<const int> tokens, int vocab, const char* what) {
  for (int t : tokens) {
    if (t < 0 || t >= vocab) {
      throw InputError(std::string(what) + ": token " + std::to_string(t) +
                       " out of range [0," + std::to_string(vocab) + ")");
    }
  }
}

// Rate column drops the leading zero: 0.1 prints as ".1".
std::string fmt_rate(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", rate);
  std::string s = buf;
  if (s.size() > 1 && s[0] == '0' && s[1] == '.') s.erase(0, 1);
  return s;
}

}  // namespace

MarkovChain MarkovChain::random(std::uint64_t seed, int vocab, int order) {
  if (vocab < 2) throw InputError("markov chain vocab must be >= 2, got " + std::to_string(vocab));
  if (order < 0) throw InputError("markov chain order must be >= 0, got " + std::to_string(order));
  std::size_t contexts = 1;
  for (int i = 0; i < order; ++i) {
    contexts *= static_cast<std::size_t>(vocab);
    if (contexts > kMaxTransitionEntries / static_cast<std::size_t>(vocab)) {
      throw InputError("markov chain transition table vocab^order x vocab too large");
    }
  }

  MarkovChain chain;
  chain.vocab_ = vocab;
  chain.order_ = order;
  chain.rows_.assign(contexts * static_cast<std::size_t>(vocab), 0.0);

  Rng rng(seed);
  const int favored = std::min(4, vocab);
  const double base_weights[4] = {0.6, 0.25, 0.1, 0.05};
  double weight_sum = 0.0;
  for (int j = 0; j < favored; ++j) weight_sum += base_weights[j];
  // Uniform floor keeps every transition strictly positive, so entropy terms
  // are finite and the context process is ergodic.
  const double floor_mass = std::min(1e-3 * vocab, 0.5);

  std::vector<int> successors(static_cast<std::size_t>(vocab));
  for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
    for (int i = 0; i < vocab; ++i) successors[static_cast<std::size_t>(i)] = i;
    // Partial Fisher-Yates: the first `favored` entries become a random
    // draw without replacement.
    for (int j = 0; j < favored; ++j) {
      const std::size_t pick =
          static_cast<std::size_t>(j) +
          static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(vocab - j)));
      std::swap(successors[static_cast<std::size_t>(j)], successors[pick]);
    }
    double* row = chain.rows_.data() + ctx * static_cast<std::size_t>(vocab);
    for (int j = 0; j < favored; ++j) {
      row[successors[static_cast<std::size_t>(j)]] = base_weights[j] / weight_sum;
    }
    for (int c = 0; c < vocab; ++c) {
      row[c] = (1.0 - floor_mass) * row[c] + floor_mass / static_cast<double>(vocab);
    }
  }
  return chain;
}

double MarkovChain::transition(std::size_t context, int next) const {
  if (context >= context_count()) {
    throw IndexError("markov context " + std::to_string(context) + " out of range");
  }
  if (next < 0 || next >= vocab_) {
    throw IndexError("markov token " + std::to_string(next) + " out of range");
  }
  return rows_[context * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(next)];
}

std::size_t MarkovChain::push_token(std::size_t context, int token) const {
  return (context * static_cast<std::size_t>(vocab_) + static_cast<std::size_t>(token)) %
         context_count();
}

int MarkovChain::draw(std::size_t context, Rng& rng) const {
  const double* row = rows_.data() + context * static_cast<std::size_t>(vocab_);
  const double u = rng.uniform();
  double acc = 0.0;
  for (int c = 0; c < vocab_; ++c) {
    acc += row[c];
    if (u < acc) return c;
  }
  return vocab_ - 1;  // guards against accumulated rounding in the row sum
}

double MarkovChain::entropy_rate() const {
  const std::size_t contexts = context_count();
  const std::size_t v = static_cast<std::size_t>(vocab_);
  // Stationary distribution of the context process by power iteration. All
  // transitions are positive, so the chain is ergodic and this converges to
  // the unique fixed point.
  std::vector<double> pi(contexts, 1.0 / static_cast<double>(contexts));
  std::vector<double> next(contexts);
  const double tol = 1e-13 * static_cast<double>(contexts);
  for (int iter = 0; iter < 200000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
      const double p = pi[ctx];
      const double* row = rows_.data() + ctx * v;
      for (std::size_t c = 0; c < v; ++c) {
        next[push_token(ctx, static_cast<int>(c))] += p * row[c];
      }
    }
    double total = 0.0;
    for (double x : next) total += x;
    double delta = 0.0;
    for (std::size_t i = 0; i < contexts; ++i) {
      next[i] /= total;
      delta += std::abs(next[i] - pi[i]);
    }
    pi.swap(next);
    if (delta < tol) break;
  }

  double h = 0.0;
  for (std::size_t ctx = 0; ctx < contexts; ++ctx) {
    const double* row = rows_.data() + ctx * v;
    double row_h = 0.0;
    for (std::size_t c = 0; c < v; ++c) row_h -= row[c] * std::log(row[c]);
    h += pi[ctx] * row_h;
  }
  return h;
}

std::vector<int> MarkovChain::sample(std::uint64_t seed, std::size_t length,
                                     std::size_t burn_in) const {
  Rng rng(seed);
  std::size_t ctx = static_cast<std::size_t>(rng.below(context_count()));
  for (std::size_t i = 0; i < burn_in; ++i) ctx = push_token(ctx, draw(ctx, rng));
  std::vector<int> out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    const int t = draw(ctx, rng);
    out.push_back(t);
    ctx = push_token(ctx, t);
  }
  return out;
}

std::vector<int> MarkovChain::continue_from(std::span<const int> prefix, std::size_t length,
                                            Rng& rng) const {
  if (prefix.size() < static_cast<std::size_t>(order_)) {
    throw InputError("continue_from: prefix of " + std::to_string(prefix.size()) +
                     " tokens is shorter than the chain order " + std::to_string(order_));
  }
  check_tokens_in_vocab(prefix, vocab_, "continue_from");
  std::size_t ctx = 0;
  for (std::size_t i = prefix.size() - static_cast<std::size_t>(order_); i < prefix.size(); ++i) {
    ctx = push_token(ctx, prefix[i]);
  }
  std::vector<int> out;
  out.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    const int t = draw(ctx, rng);
    out.push_back(t);
    ctx = push_token(ctx, t);
  }
  return out;
}

SyntheticCorpus generate_corpus(std::uint64_t seed, int vocab, int order, std::size_t length,
                                double holdout) {
  if (length < 2) throw InputError("corpus length must be >= 2, got " + std::to_string(length));
  if (!(holdout >= 0.0 && holdout < 1.0)) {
    throw InputError("holdout fraction must lie in [0,1), got " + std::to_string(holdout));
  }
  SyntheticCorpus corpus;
  corpus.seed = seed;
  corpus.chain = MarkovChain::random(seed, vocab, order);
  // Distinct stream for sampling so chain structure and token draws never
  // alias each other.
  const std::uint64_t sample_seed = seed * 6364136223846793005ULL + 1442695040888963407ULL;
  std::vector<int> tokens = corpus.chain.sample(sample_seed, length);
  const std::size_t held = static_cast<std::size_t>(std::floor(holdout * static_cast<double>(length)));
  corpus.train_tokens.assign(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(held));
  corpus.held_tokens.assign(tokens.end() - static_cast<std::ptrdiff_t>(held), tokens.end());
  corpus.entropy_rate = corpus.chain.entropy_rate();
  return corpus;
}

double perplexity(const TransformerModel& model, std::span<const int> tokens) {
  if (tokens.size() < 2) {
    throw InputError("perplexity needs at least 2 tokens, got " + std::to_string(tokens.size()));
  }
  check_tokens_in_vocab(tokens, model.config().vocab_size, "perplexity");
  NoGradGuard no_grad;
  const std::size_t w = static_cast<std::size_t>(model.config().context_len);
  double total_nats = 0.0;
  std::size_t total_predictions = 0;
  std::size_t start = 0;
  while (start + w + 1 <= tokens.size()) {
    Tensor ce = cross_entropy(model.forward(tokens.subspan(start, w)), tokens.subspan(start + 1, w));
    total_nats += ce.item() * static_cast<double>(w);
    total_predictions += w;
    start += w;
  }
  if (total_predictions == 0) {
    const std::size_t len = tokens.size() - 1;
    Tensor ce = cross_entropy(model.forward(tokens.subspan(0, len)), tokens.subspan(1, len));
    total_nats = ce.item() * static_cast<double>(len);
    total_predictions = len;
  }
  return std::exp(total_nats / static_cast<double>(total_predictions));
}

double last_token_accuracy(const TransformerModel& model,
                           const std::vector<LastTokenExample>& examples) {
  if (examples.empty()) {
    std::cerr << "warning: last_token_accuracy called with no examples\n";
    return 0.0;
  }
  NoGradGuard no_grad;
  const int v = model.config().vocab_size;
  std::size_t correct = 0;
  for (const LastTokenExample& ex : examples) {
    if (ex.target < 0 || ex.target >= v) {
      throw InputError("last_token_accuracy: target " + std::to_string(ex.target) +
                       " out of range [0," + std::to_string(v) + ")");
    }
    Tensor logits = model.forward(ex.context);
    const std::size_t last = ex.context.size() - 1;
    const double* row = logits.data().data() + last * static_cast<std::size_t>(v);
    int best = 0;
    for (int c = 1; c < v; ++c) {
      if (row[c] > row[best]) best = c;  // ties keep the lowest token id
    }
    if (best == ex.target) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

namespace {

// Summed log-probability of `continuation` following `context`, scored with
// one forward pass over the concatenation.
double continuation_logprob(const TransformerModel& model, const std::vector<int>& context,
                            const std::vector<int>& continuation) {
  const int v = model.config().vocab_size;
  std::vector<int> seq = context;
  seq.insert(seq.end(), continuation.begin(), continuation.end());
  Tensor logits = model.forward(seq);
  double total = 0.0;
  for (std::size_t j = 0; j < continuation.size(); ++j) {
    const std::size_t pos = context.size() - 1 + j;
    const double* row = logits.data().data() + pos * static_cast<std::size_t>(v);
    double mx = row[0];
    for (int c = 1; c < v; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < v; ++c) denom += std::exp(row[c] - mx);
    total += row[continuation[j]] - mx - std::log(denom);
  }
  return total;
}

}  // namespace

double cloze_accuracy(const TransformerModel& model, const std::vector<ClozeItem>& items) {
  if (items.empty()) {
    std::cerr << "warning: cloze_accuracy called with no items\n";
    return 0.0;
  }
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (const ClozeItem& item : items) {
    if (item.context.empty() || item.correct.empty() || item.distractor.empty()) {
      throw InputError("cloze item with an empty context or continuation");
    }
    const double s_correct = continuation_logprob(model, item.context, item.correct);
    const double s_distractor = continuation_logprob(model, item.context, item.distractor);
    if (s_correct > s_distractor) ++correct;  // exact ties count as incorrect
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

std::vector<LastTokenExample> make_last_token_examples(std::span<const int> tokens,
                                                       std::size_t count,
                                                       std::size_t context_len) {
  std::vector<LastTokenExample> out;
  if (count == 0 || context_len == 0 || tokens.size() < context_len + 1) return out;
  const std::size_t available = tokens.size() - context_len;
  const std::size_t n = std::min(count, available);
  const std::size_t stride = available / n;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t s = j * stride;
    LastTokenExample ex;
    ex.context.assign(tokens.begin() + static_cast<std::ptrdiff_t>(s),
                      tokens.begin() + static_cast<std::ptrdiff_t>(s + context_len));
    ex.target = tokens[s + context_len];
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<ClozeItem> make_cloze_items(std::span<const int> tokens, std::size_t count,
                                        std::size_t context_len, std::size_t continuation_len,
                                        const MarkovChain& distractor_chain, std::uint64_t seed) {
  std::vector<ClozeItem> out;
  if (count == 0 || context_len == 0 || continuation_len == 0) return out;
  if (tokens.size() < context_len + continuation_len) return out;
  const std::size_t available = tokens.size() - context_len - continuation_len + 1;
  const std::size_t n = std::min(count, available);
  const std::size_t stride = available / n;
  Rng rng(seed);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t s = j * stride;
    ClozeItem item;
    item.context.assign(tokens.begin() + static_cast<std::ptrdiff_t>(s),
                        tokens.begin() + static_cast<std::ptrdiff_t>(s + context_len));
    item.correct.assign(tokens.begin() + static_cast<std::ptrdiff_t>(s + context_len),
                        tokens.begin() + static_cast<std::ptrdiff_t>(s + context_len +
                                                                     continuation_len));
    item.distractor = distractor_chain.continue_from(item.context, continuation_len, rng);
    out.push_back(std::move(item));
  }
  return out;
}

EvalReport evaluate(const TransformerModel& model, const EvalSuite& suite,
                    const PruningMask* mask) {
  EvalReport report;
  report.perplexity = perplexity(model, suite.held_tokens);
  report.last_token_accuracy = last_token_accuracy(model, suite.last_token_examples);
  report.cloze_accuracy = cloze_accuracy(model, suite.cloze_items);
  const ParamReport params = model.param_report(mask);
  report.sparsity = params.sparsity;
  report.nonzero_params = params.nonzero_params;
  report.total_params = params.total_params;
  return report;
}

SweepResult sweep(const TransformerModel& base, const std::vector<double>& rates,
                  const std::vector<std::uint64_t>& seeds, PruneScope scope,
                  const TrainConfig& finetune_cfg, std::span<const int> train_tokens,
                  const EvalSuite& suite) {
  if (seeds.empty()) throw ContractError("sweep requires at least one seed");
  if (rates.empty()) throw ContractError("sweep requires at least one pruning rate");
  std::vector<double> sorted_rates = rates;
  for (double r : sorted_rates) {
    if (!(r >= 0.0 && r < 1.0)) {
      throw ContractError("sweep rates must lie in [0,1), got " + std::to_string(r));
    }
  }
  std::sort(sorted_rates.begin(), sorted_rates.end());
  sorted_rates.erase(std::unique(sorted_rates.begin(), sorted_rates.end()), sorted_rates.end());

  SweepResult result;
  const ModelConfig& mc = base.config();
  result.model_name = "tiny-gpt-" + std::to_string(mc.d_model) + "d" +
                      std::to_string(mc.n_layers) + "L";
  result.baseline = evaluate(base, suite);
  result.baseline_params = result.baseline.total_params;

  for (double rate : sorted_rates) {
    std::vector<EvalReport> prune_reports;
    std::vector<EvalReport> finetune_reports;
    for (std::uint64_t seed : seeds) {
      TransformerModel model = base.clone();
      PruningMask mask = build_mask(model, rate, scope);
      apply_mask(model, mask);
      SweepCell cell;
      cell.rate = rate;
      cell.seed = seed;
      cell.after_prune = evaluate(model, suite, &mask);
      TrainConfig cfg = finetune_cfg;
      cfg.seed = seed;
      finetune(model, mask, train_tokens, cfg);
      cell.after_finetune = evaluate(model, suite, &mask);
      prune_reports.push_back(cell.after_prune);
      finetune_reports.push_back(cell.after_finetune);
      result.cells.push_back(std::move(cell));
    }
    SweepRow row;
    row.rate = rate;
    row.n_params_effective = effective_param_count(result.baseline_params, rate);
    row.median_after_prune = median_report(prune_reports);
    row.median_after_finetune = median_report(finetune_reports);
    result.rows.push_back(std::move(row));
  }
  return result;
}

namespace {

void write_report_fields(std::ostream& os, const EvalReport& r, long long effective) {
  os << fmt_double(r.perplexity) << ',' << fmt_double(r.last_token_accuracy) << ','
     << fmt_double(r.cloze_accuracy) << ',' << fmt_double(r.sparsity) << ',' << r.nonzero_params
     << ',' << effective << '\n';
}

}  // namespace

void write_sweep_csv(const SweepResult& result, std::ostream& os) {
  os << "model,kind,rate,seed,phase,perplexity,last_token_accuracy,cloze_accuracy,sparsity,"
        "n_params,n_params_effective\n";
  os << result.model_name << ",baseline,,,dense,";
  write_report_fields(os, result.baseline, result.baseline_params);
  for (const SweepCell& cell : result.cells) {
    os << result.model_name << ",cell," << fmt_double(cell.rate) << ',' << cell.seed
       << ",after_prune,";
    write_report_fields(os, cell.after_prune,
                        effective_param_count(result.baseline_params, cell.rate));
    os << result.model_name << ",cell," << fmt_double(cell.rate) << ',' << cell.seed
       << ",after_finetune,";
    write_report_fields(os, cell.after_finetune,
                        effective_param_count(result.baseline_params, cell.rate));
  }
  for (const SweepRow& row : result.rows) {
    os << result.model_name << ",median," << fmt_double(row.rate) << ",,after_prune,";
    write_report_fields(os, row.median_after_prune, row.n_params_effective);
    os << result.model_name << ",median," << fmt_double(row.rate) << ",,after_finetune,";
    write_report_fields(os, row.median_after_finetune, row.n_params_effective);
  }
}

void write_sweep_markdown(const SweepResult& result, std::ostream& os) {
  os << "| Model | pr% | n_params | perplexity | last_token (acc) | cloze (acc) |\n";
  os << "|-------|-----|----------|------------|------------------|-------------|\n";
  os << "| " << result.model_name << " | - | " << result.baseline_params << " | "
     << fmt_fixed(result.baseline.perplexity, 4) << " | "
     << fmt_fixed(result.baseline.last_token_accuracy, 4) << " | "
     << fmt_fixed(result.baseline.cloze_accuracy, 4) << " |\n";
  for (const SweepRow& row : result.rows) {
    const EvalReport& r = row.median_after_finetune;
    os << "| " << result.model_name << " (pruned) | " << fmt_rate(row.rate) << " | "
       << row.n_params_effective << " | " << fmt_fixed(r.perplexity, 4) << " | "
       << fmt_fixed(r.last_token_accuracy, 4) << " | " << fmt_fixed(r.cloze_accuracy, 4)
       << " |\n";
  }
}

}  // namespace prunekit
