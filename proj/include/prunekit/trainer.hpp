#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "prunekit/model.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/schedule.hpp"

namespace prunekit {

// Optimization settings shared by train() and finetune().
struct TrainConfig {
  double learning_rate = 0.7;
  int epochs = 3;
  int batch_size = 4;
  // Global-norm gradient clip; unset disables clipping. The default is wide
  // enough to pass typical batch gradients untouched and only damp spikes.
  std::optional<double> grad_clip = 5.0;
  // L1 penalty on surviving prunable weights. Only active while finetuning
  // under a mask; plain training ignores it. Zero adds no penalty term.
  double lambda_l1 = 0.0;
  // Seeds windowing shuffles (model init has its own seed).
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainStep {
  long long step = 0;
  double loss = 0.0;  // mean cross-entropy per token, nats
  double sparsity = 0.0;
  double wall_ms = 0.0;  // elapsed since the run started
};

struct TrainHistory {
  std::vector<TrainStep> steps;

  // CSV with header: step,loss,sparsity,wall_ms
  void write_csv(std::ostream& os) const;
};

// SGD update w -= learning_rate * grad for every parameter, then re-zeroes
// pruned positions when a mask is given. ContractError if any parameter is
// missing its gradient.
void sgd_step(TransformerModel& model, double learning_rate, const PruningMask* mask = nullptr);

// Scales all gradients by max_norm/norm when the global L2 norm exceeds
// max_norm. Returns the pre-clip norm.
double clip_gradients(TransformerModel& model, double max_norm);

// L1 penalty graph node: lambda * sum of |w| over surviving prunable weights.
Tensor l1_penalty(const TransformerModel& model, const PruningMask& mask, double lambda);

// Dense training on next-token prediction over non-overlapping context-length
// windows of the corpus. Mutates the model in place and returns the loss
// history. InputError when the corpus has fewer than 2 tokens or contains
// tokens outside the model's vocabulary.
TrainHistory train(TransformerModel& model, std::span<const int> corpus, const TrainConfig& cfg);

// Same loop with a fixed mask: pruned weights are held at zero through every
// update, and lambda_l1 > 0 adds the L1 penalty to the objective.
TrainHistory finetune(TransformerModel& model, const PruningMask& mask,
                      std::span<const int> corpus, const TrainConfig& cfg);

struct LoopResult {
  PruningMask mask;
  TrainHistory history;  // concatenated finetune history of all iterations
  // Target and achieved sparsity after each schedule step 0..T.
  std::vector<double> target_sparsity;
  std::vector<double> achieved_sparsity;
};

// Iterative magnitude pruning: walks the schedule, and at each iteration
// prunes the still-surviving weights down to the scheduled sparsity (ranking
// by current magnitudes) and then finetunes under the accumulated mask. Masks
// only ever grow. A nonzero start_sparsity is applied before the first
// finetune. Iteration i shifts the shuffle seed to cfg.seed + i so the data
// order differs across iterations.
LoopResult prune_finetune_loop(TransformerModel& model, std::span<const int> corpus,
                               const Schedule& schedule, PruneScope scope,
                               const TrainConfig& cfg);

}  // namespace prunekit
