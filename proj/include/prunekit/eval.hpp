#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "prunekit/model.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/trainer.hpp"

namespace prunekit {

// Order-k Markov chain over a token alphabet, with every transition
// probability strictly positive. Contexts are encoded base-vocab, most
// recent token last.
class MarkovChain {
 public:
  // A randomly structured chain: each context gets a handful of preferred
  // successors with sharply peaked probabilities, then the whole row is mixed
  // with a uniform floor so no transition has probability zero.
  static MarkovChain random(std::uint64_t seed, int vocab, int order);

  int vocab() const { return vocab_; }
  int order() const { return order_; }
  std::size_t context_count() const { return rows_.size() / static_cast<std::size_t>(vocab_); }

  // P(next = c | context), contexts encoded base-vocab.
  double transition(std::size_t context, int next) const;

  // Asymptotic entropy in nats per token: sum_ctx pi(ctx) * H(row(ctx)),
  // with pi the stationary distribution of the context process (computed by
  // power iteration; the chain is ergodic because all probabilities are
  // positive, so the limit is unique).
  double entropy_rate() const;

  // `length` tokens after discarding `burn_in` draws from a random start.
  std::vector<int> sample(std::uint64_t seed, std::size_t length, std::size_t burn_in = 500) const;

  // `length` tokens continuing the given prefix (which must be at least
  // `order` tokens long).
  std::vector<int> continue_from(std::span<const int> prefix, std::size_t length, Rng& rng) const;

 private:
  int vocab_ = 0;
  int order_ = 0;
  std::vector<double> rows_;  // [context_count x vocab], rows sum to 1

  int draw(std::size_t context, Rng& rng) const;
  std::size_t push_token(std::size_t context, int token) const;
};

// Token stream with a known generating process, split into train and held-out
// halves. The entropy rate gives an information-theoretic floor for any
// model's perplexity on the held-out part.
struct SyntheticCorpus {
  MarkovChain chain;
  std::vector<int> train_tokens;
  std::vector<int> held_tokens;
  double entropy_rate = 0.0;
  std::uint64_t seed = 0;
};

// Samples `length` tokens from a fresh random chain and splits off the final
// `holdout` fraction. vocab >= 2, order >= 0, length >= 2, holdout in [0,1).
SyntheticCorpus generate_corpus(std::uint64_t seed, int vocab, int order, std::size_t length,
                                double holdout = 0.2);

// exp(mean next-token cross-entropy) over non-overlapping context-length
// windows of `tokens`. A corpus shorter than one full window is evaluated as
// a single shorter window. Never mutates the model. InputError on fewer than
// 2 tokens or out-of-vocabulary tokens.
double perplexity(const TransformerModel& model, std::span<const int> tokens);

struct LastTokenExample {
  std::vector<int> context;
  int target = 0;
};

struct ClozeItem {
  std::vector<int> context;
  std::vector<int> correct;
  std::vector<int> distractor;
};

// Fraction of examples whose greedy (argmax, lowest index on ties) next-token
// prediction equals the target. An empty example list warns and returns 0.
double last_token_accuracy(const TransformerModel& model,
                           const std::vector<LastTokenExample>& examples);

// Fraction of items where the summed log-probability of the correct
// continuation beats the distractor's. Exact ties count as incorrect. An
// empty item list warns and returns 0.
double cloze_accuracy(const TransformerModel& model, const std::vector<ClozeItem>& items);

// Deterministic example builders over a held-out stream. Positions are spread
// evenly; fewer than `count` examples come back when the stream is short.
std::vector<LastTokenExample> make_last_token_examples(std::span<const int> tokens,
                                                       std::size_t count,
                                                       std::size_t context_len);
std::vector<ClozeItem> make_cloze_items(std::span<const int> tokens, std::size_t count,
                                        std::size_t context_len, std::size_t continuation_len,
                                        const MarkovChain& distractor_chain, std::uint64_t seed);

// Everything needed to score one model.
struct EvalSuite {
  std::vector<int> held_tokens;
  std::vector<LastTokenExample> last_token_examples;
  std::vector<ClozeItem> cloze_items;
};

struct EvalReport {
  double perplexity = 0.0;
  double last_token_accuracy = 0.0;
  double cloze_accuracy = 0.0;
  double sparsity = 0.0;
  long long nonzero_params = 0;
  long long total_params = 0;
};

// Runs the full metric suite. Pure: the model is never modified.
EvalReport evaluate(const TransformerModel& model, const EvalSuite& suite,
                    const PruningMask* mask = nullptr);

// One (rate, seed) sweep cell, scored right after pruning and again after
// finetuning.
struct SweepCell {
  double rate = 0.0;
  std::uint64_t seed = 0;
  EvalReport after_prune;
  EvalReport after_finetune;
};

struct SweepRow {
  double rate = 0.0;
  long long n_params_effective = 0;
  EvalReport median_after_prune;
  EvalReport median_after_finetune;
};

struct SweepResult {
  EvalReport baseline;
  long long baseline_params = 0;
  std::string model_name;
  std::vector<SweepRow> rows;  // rates strictly increasing
  std::vector<SweepCell> cells;
};

// For each rate and seed: clone the trained base model, one-shot prune at the
// rate, evaluate, finetune under the mask (the cell seed drives the finetune
// shuffling), evaluate again. Rows hold per-metric medians across seeds.
// Rates must lie in [0,1); duplicates are collapsed and rows come back
// sorted. At least one seed is required.
SweepResult sweep(const TransformerModel& base, const std::vector<double>& rates,
                  const std::vector<std::uint64_t>& seeds, PruneScope scope,
                  const TrainConfig& finetune_cfg, std::span<const int> train_tokens,
                  const EvalSuite& suite);

// CSV columns: kind,rate,seed,phase,perplexity,last_token_accuracy,
// cloze_accuracy,sparsity,n_params,n_params_effective. kind is baseline,
// cell, or median (median rows leave seed empty).
void write_sweep_csv(const SweepResult& result, std::ostream& os);

// Markdown table: one row for the dense baseline, one per rate with the
// post-finetune medians.
void write_sweep_markdown(const SweepResult& result, std::ostream& os);

}  // namespace prunekit
