#include "prunekit/trainer.hpp"

#include <chrono>
#include <cmath>

#include "prunekit/rng.hpp"

namespace prunekit {

namespace {

struct Window {
  std::size_t start;
  std::size_t len;  // number of predictions (inputs == targets == len tokens)
};

// Non-overlapping windows of context_len inputs. A corpus too short for one
// full window falls back to a single shorter window.
std::vector<Window> training_windows(std::size_t corpus_size, std::size_t context_len) {
  std::vector<Window> windows;
  std::size_t start = 0;
  while (start + context_len + 1 <= corpus_size) {
    windows.push_back({start, context_len});
    start += context_len;
  }
  // The trailing partial stretch is dropped, matching the evaluation split,
  // unless nothing fit at all.
  if (windows.empty() && corpus_size >= 2) windows.push_back({0, corpus_size - 1});
  return windows;
}

void check_corpus(const TransformerModel& model, std::span<const int> corpus) {
  if (corpus.size() < 2) {
    throw InputError("corpus must contain at least 2 tokens to form a training window, got " +
                     std::to_string(corpus.size()));
  }
  const int v = model.config().vocab_size;
  for (int t : corpus) {
    if (t < 0 || t >= v) {
      throw InputError("corpus token " + std::to_string(t) + " out of range [0," +
                       std::to_string(v) + ")");
    }
  }
}

TrainHistory run_training(TransformerModel& model, std::span<const int> corpus,
                          const TrainConfig& cfg, const PruningMask* mask,
                          long long first_step = 0) {
  cfg.validate();
  check_corpus(model, corpus);
  if (mask != nullptr) mask->require_match(model);

  auto windows =
      training_windows(corpus.size(), static_cast<std::size_t>(model.config().context_len));
  const double sparsity = mask != nullptr ? mask->sparsity() : 0.0;
  Rng rng(cfg.seed);
  TrainHistory history;
  long long step = first_step;
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(windows);
    for (std::size_t i = 0; i < windows.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t batch_end =
          std::min(windows.size(), i + static_cast<std::size_t>(cfg.batch_size));
      model.zero_grad();
      Tensor loss_sum;
      for (std::size_t w = i; w < batch_end; ++w) {
        const Window& win = windows[w];
        std::span<const int> inputs = corpus.subspan(win.start, win.len);
        std::span<const int> targets = corpus.subspan(win.start + 1, win.len);
        Tensor ce = cross_entropy(model.forward(inputs), targets);
        loss_sum = loss_sum.defined() ? add(loss_sum, ce) : ce;
      }
      Tensor loss = scale(loss_sum, 1.0 / static_cast<double>(batch_end - i));
      Tensor objective = loss;
      if (mask != nullptr && cfg.lambda_l1 > 0.0) {
        objective = add(loss, l1_penalty(model, *mask, cfg.lambda_l1));
      }
      backward(objective);
      if (cfg.grad_clip.has_value()) clip_gradients(model, *cfg.grad_clip);
      sgd_step(model, cfg.learning_rate, mask);

      const double wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      history.steps.push_back({step, loss.item(), sparsity, wall_ms});
      ++step;
    }
  }
  return history;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ConfigError("train.learning_rate must be positive, got " +
                      std::to_string(learning_rate));
  }
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 1) {
    throw ConfigError("train.batch_size must be >= 1, got " + std::to_string(batch_size));
  }
  if (grad_clip.has_value() && !(*grad_clip > 0.0)) {
    throw ConfigError("train.grad_clip must be positive when set, got " +
                      std::to_string(*grad_clip));
  }
  if (lambda_l1 < 0.0) {
    throw ConfigError("train.lambda_l1 must be non-negative, got " + std::to_string(lambda_l1));
  }
}

void TrainHistory::write_csv(std::ostream& os) const {
  os << "step,loss,sparsity,wall_ms\n";
  for (const TrainStep& s : steps) {
    os << s.step << ',' << s.loss << ',' << s.sparsity << ',' << s.wall_ms << '\n';
  }
}

void sgd_step(TransformerModel& model, double learning_rate, const PruningMask* mask) {
  for (auto& [name, t] : model.named_parameters()) {
    if (!t.has_grad()) {
      throw ContractError("sgd_step: parameter '" + name +
                          "' has no gradient; run backward() first");
    }
    auto& data = t.data();
    const auto& grad = t.grad();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= learning_rate * grad[i];
  }
  if (mask != nullptr) {
    // Keep pruned positions at exactly zero regardless of their gradients.
    for (auto& [name, t] : model.prunable_parameters()) {
      const auto& keep = mask->entry(name).keep;
      auto& data = t.data();
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (!keep[i]) data[i] = 0.0;
      }
    }
  }
}

double clip_gradients(TransformerModel& model, double max_norm) {
  if (!(max_norm > 0.0)) {
    throw ContractError("clip_gradients: max_norm must be positive, got " +
                        std::to_string(max_norm));
  }
  double sq = 0.0;
  auto params = model.named_parameters();
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      auto& grad = t.node()->grad;
      for (double& g : grad) g *= factor;
    }
  }
  return norm;
}

Tensor l1_penalty(const TransformerModel& model, const PruningMask& mask, double lambda) {
  mask.require_match(model);
  Tensor total;
  for (const auto& [name, t] : model.prunable_parameters()) {
    Tensor term = masked_l1(t, mask.entry(name).keep);
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) return Tensor::scalar(0.0);
  return scale(total, lambda);
}

TrainHistory train(TransformerModel& model, std::span<const int> corpus, const TrainConfig& cfg) {
  return run_training(model, corpus, cfg, nullptr);
}

TrainHistory finetune(TransformerModel& model, const PruningMask& mask,
                      std::span<const int> corpus, const TrainConfig& cfg) {
  return run_training(model, corpus, cfg, &mask);
}

LoopResult prune_finetune_loop(TransformerModel& model, std::span<const int> corpus,
                               const Schedule& schedule, PruneScope scope,
                               const TrainConfig& cfg) {
  schedule.validate();
  cfg.validate();
  check_corpus(model, corpus);

  LoopResult result;
  result.mask = PruningMask::all_kept(model);
  result.target_sparsity.push_back(schedule.sparsity_at(0));
  if (schedule.start_sparsity > 0.0) {
    result.mask = build_mask(model, schedule.start_sparsity, scope);
    apply_mask(model, result.mask);
  }
  result.achieved_sparsity.push_back(result.mask.sparsity());

  for (int t = 1; t <= schedule.iterations; ++t) {
    const double target = schedule.sparsity_at(t);
    // Rank against what actually survives, so floor-rounding from earlier
    // iterations self-corrects instead of accumulating.
    const double fraction = iteration_prune_fraction(result.mask.sparsity(), target);
    result.mask = build_mask(model, fraction, scope, &result.mask);
    apply_mask(model, result.mask);

    TrainConfig iter_cfg = cfg;
    iter_cfg.seed = cfg.seed + static_cast<std::uint64_t>(t - 1);
    const long long first_step =
        result.history.steps.empty() ? 0 : result.history.steps.back().step + 1;
    TrainHistory h = run_training(model, corpus, iter_cfg, &result.mask, first_step);
    result.history.steps.insert(result.history.steps.end(), h.steps.begin(), h.steps.end());

    result.target_sparsity.push_back(target);
    result.achieved_sparsity.push_back(result.mask.sparsity());
  }
  return result;
}

}  // namespace prunekit
