#include <cmath>
#include <cstdint>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "prunekit/pruning.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/trainer.hpp"

using namespace prunekit;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 4;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 8;
  c.context_len = 4;
  c.seed = 7;
  return c;
}

// Small but learnable: one block over an 8-token vocabulary.
ModelConfig memorize_config(std::uint64_t seed = 21) {
  ModelConfig c;
  c.vocab_size = 8;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.context_len = 8;
  c.seed = seed;
  return c;
}

// Deterministic repeating corpus; a model that memorizes the cycle drives the
// next-token loss to ~0.
std::vector<int> cycle_corpus(int repeats = 12) {
  const int base[] = {3, 1, 4, 7, 5, 0, 2, 6};
  std::vector<int> tokens;
  for (int r = 0; r < repeats; ++r) tokens.insert(tokens.end(), std::begin(base), std::end(base));
  return tokens;
}

std::vector<int> random_corpus(int vocab, std::size_t length, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> tokens(length);
  for (auto& t : tokens) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab)));
  return tokens;
}

void set_all_grads(TransformerModel& model, double value) {
  for (auto& [name, t] : model.named_parameters()) {
    t.node()->grad.assign(t.numel(), value);
  }
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("sgd_step applies w -= lr * g exactly") {
  TransformerModel model(tiny_config());
  for (auto& [name, t] : model.named_parameters()) {
    t.data().assign(t.numel(), 1.0);
  }
  set_all_grads(model, 2.0);
  sgd_step(model, 0.25);
  for (const auto& [name, t] : model.named_parameters()) {
    for (double v : t.data()) CHECK(v == 0.5);  // 1 - 0.25*2, exact in binary
  }
}

TEST_CASE("sgd_step with zero learning rate is an exact no-op") {
  TransformerModel model(tiny_config());
  TransformerModel before = model.clone();
  set_all_grads(model, 3.14);
  sgd_step(model, 0.0);
  for (const auto& [name, t] : model.named_parameters()) {
    CHECK(t.data() == before.parameter(name).data());
  }
}

TEST_CASE("sgd_step demands gradients on every parameter") {
  TransformerModel model(tiny_config());
  model.zero_grad();
  CHECK_THROWS_AS(sgd_step(model, 0.1), ContractError);
}

TEST_CASE("masked sgd_step pins pruned weights at zero bit for bit") {
  TransformerModel model(tiny_config());
  const PruningMask mask = build_mask(model, 0.5, PruneScope::kGlobal);
  apply_mask(model, mask);
  for (int step = 0; step < 10; ++step) {
    set_all_grads(model, 1.0);  // pruned positions get gradients too
    sgd_step(model, 0.25, &mask);
    CHECK(mask_is_applied(model, mask));
  }
  // Survivors did move.
  bool moved = false;
  for (const auto& [name, t] : model.prunable_parameters()) {
    const auto& keep = mask.entry(name).keep;
    const auto& data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (keep[i] && data[i] != 0.0) moved = true;
      if (!keep[i]) CHECK(data[i] == 0.0);
    }
  }
  CHECK(moved);
}

TEST_CASE("clip_gradients scales the global norm down to max_norm") {
  TransformerModel model(tiny_config());
  const auto n_total = model.param_report().total_params;
  set_all_grads(model, 0.01);
  const double expect_norm = 0.01 * std::sqrt(static_cast<double>(n_total));

  const double pre = clip_gradients(model, expect_norm / 2.0);
  CHECK(pre == doctest::Approx(expect_norm).epsilon(1e-12));
  double sq = 0.0;
  for (const auto& [name, t] : model.named_parameters()) {
    for (double g : t.grad()) sq += g * g;
  }
  CHECK(std::sqrt(sq) == doctest::Approx(expect_norm / 2.0).epsilon(1e-12));
}

TEST_CASE("clip_gradients below the threshold changes nothing") {
  TransformerModel model(tiny_config());
  set_all_grads(model, 1e-6);
  std::vector<std::vector<double>> before;
  for (const auto& [name, t] : model.named_parameters()) before.push_back(t.grad());
  const double pre = clip_gradients(model, 1.0);
  CHECK(pre < 1.0);
  std::size_t k = 0;
  for (const auto& [name, t] : model.named_parameters()) CHECK(t.grad() == before[k++]);
  CHECK_THROWS_AS((void)clip_gradients(model, 0.0), ContractError);
}

TEST_CASE("l1_penalty sums lambda * |w| over surviving prunable weights") {
  TransformerModel model(tiny_config());
  const PruningMask mask = build_mask(model, 0.25, PruneScope::kGlobal);
  const double lambda = 0.03;

  double expected = 0.0;
  for (const auto& [name, t] : model.prunable_parameters()) {
    const auto& keep = mask.entry(name).keep;
    const auto& data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (keep[i]) expected += std::abs(data[i]);
    }
  }
  Tensor penalty = l1_penalty(model, mask, lambda);
  CHECK(penalty.item() == doctest::Approx(lambda * expected).epsilon(1e-12));
  CHECK(l1_penalty(model, mask, 0.0).item() == 0.0);

  model.zero_grad();
  backward(penalty);
  for (const auto& [name, t] : model.prunable_parameters()) {
    const auto& keep = mask.entry(name).keep;
    const auto& data = t.data();
    const auto& grad = t.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double want = keep[i] ? (data[i] > 0.0 ? lambda : -lambda) : 0.0;
      CHECK(grad[i] == doctest::Approx(want).epsilon(1e-15));
    }
  }
}

TEST_CASE("training memorizes a repeating sequence") {
  TransformerModel model(memorize_config());
  const std::vector<int> corpus = cycle_corpus();
  TrainConfig cfg;
  cfg.learning_rate = 0.7;
  cfg.epochs = 200;
  cfg.batch_size = 2;
  cfg.grad_clip = 5.0;
  cfg.seed = 5;
  const TrainHistory h = train(model, corpus, cfg);
  REQUIRE(!h.steps.empty());
  CHECK(h.steps.front().loss > 1.0);  // starts near ln(8)
  CHECK(h.steps.back().loss < 0.1);
}

TEST_CASE("finetune holds the mask for over a hundred steps") {
  TransformerModel model(memorize_config());
  const std::vector<int> corpus = cycle_corpus();
  const PruningMask mask = build_mask(model, 0.3, PruneScope::kGlobal);
  apply_mask(model, mask);

  TrainConfig cfg;
  cfg.learning_rate = 0.2;
  cfg.epochs = 20;  // 11 windows, batches of 2 -> 6 steps/epoch -> 120 steps
  cfg.batch_size = 2;
  cfg.seed = 9;
  const TrainHistory h = finetune(model, mask, corpus, cfg);

  REQUIRE(h.steps.size() >= 100);
  CHECK(mask_is_applied(model, mask));
  for (const auto& [name, t] : model.prunable_parameters()) {
    const auto& keep = mask.entry(name).keep;
    const auto& data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!keep[i]) CHECK(data[i] == 0.0);
    }
  }
  for (std::size_t i = 0; i < h.steps.size(); ++i) {
    CHECK(h.steps[i].step == static_cast<long long>(i));
    CHECK(h.steps[i].sparsity == mask.sparsity());
    CHECK(std::isfinite(h.steps[i].loss));
    if (i > 0) CHECK(h.steps[i].wall_ms >= h.steps[i - 1].wall_ms);
  }
}

TEST_CASE("history CSV has the documented header and one row per step") {
  TransformerModel model(tiny_config());
  const std::vector<int> corpus = random_corpus(4, 64, 11);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  const TrainHistory h = train(model, corpus, cfg);
  std::ostringstream os;
  h.write_csv(os);
  std::istringstream is(os.str());
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "step,loss,sparsity,wall_ms");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == h.steps.size());
}

TEST_CASE("train rejects bad corpora and configs") {
  TransformerModel model(tiny_config());
  TrainConfig cfg;
  const std::vector<int> one{2};
  CHECK_THROWS_AS((void)train(model, one, cfg), InputError);
  const std::vector<int> oov{0, 1, 4, 2};
  CHECK_THROWS_AS((void)train(model, oov, cfg), InputError);
  const std::vector<int> negative{0, -1, 2};
  CHECK_THROWS_AS((void)train(model, negative, cfg), InputError);

  TrainConfig bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.grad_clip = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lambda_l1 = -0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("two tokens still form a single training window") {
  TransformerModel model(tiny_config());
  const std::vector<int> pair{1, 3};
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 1;
  const TrainHistory h = train(model, pair, cfg);
  CHECK(h.steps.size() == 1);
}

TEST_CASE("prune_finetune_loop tracks the schedule") {
  TransformerModel model(tiny_config());
  const std::vector<int> corpus = random_corpus(4, 200, 3);

  Schedule schedule;
  schedule.kind = ScheduleKind::kLinear;
  schedule.start_sparsity = 0.0;
  schedule.final_sparsity = 0.5;
  schedule.iterations = 5;

  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 17;

  const LoopResult res = prune_finetune_loop(model, corpus, schedule, PruneScope::kGlobal, cfg);
  const double n = static_cast<double>(res.mask.total_count());
  REQUIRE(res.target_sparsity.size() == 6);
  REQUIRE(res.achieved_sparsity.size() == 6);
  for (int t = 0; t <= 5; ++t) {
    CHECK(res.target_sparsity[t] == schedule.sparsity_at(t));
    // Each iteration re-ranks the true survivors, so floor-rounding never
    // drifts more than a couple of weights.
    CHECK(std::abs(res.achieved_sparsity[t] - res.target_sparsity[t]) <= 2.0 / n);
    if (t > 0) CHECK(res.achieved_sparsity[t] >= res.achieved_sparsity[t - 1]);
  }
  CHECK(res.achieved_sparsity.back() == res.mask.sparsity());
  CHECK(res.mask.matches(model));
  CHECK(mask_is_applied(model, res.mask));
  for (std::size_t i = 0; i < res.history.steps.size(); ++i) {
    CHECK(res.history.steps[i].step == static_cast<long long>(i));
  }
}

TEST_CASE("loop with a flat schedule prunes once up front") {
  TransformerModel model(tiny_config());
  const std::vector<int> corpus = random_corpus(4, 80, 4);
  Schedule schedule;
  schedule.kind = ScheduleKind::kConstant;
  schedule.start_sparsity = 0.25;
  schedule.final_sparsity = 0.25;
  schedule.iterations = 1;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 1;
  const LoopResult res = prune_finetune_loop(model, corpus, schedule, PruneScope::kGlobal, cfg);
  CHECK(res.achieved_sparsity.front() == 0.25);  // 0.25 * 384 is an integer
  CHECK(res.achieved_sparsity.back() == 0.25);
}

TEST_CASE("loop runs are reproducible from the seed") {
  TransformerModel a(tiny_config());
  TransformerModel b = a.clone();
  const std::vector<int> corpus = random_corpus(4, 200, 6);
  Schedule schedule;
  schedule.kind = ScheduleKind::kExponential;
  schedule.start_sparsity = 0.0;
  schedule.final_sparsity = 0.4;
  schedule.iterations = 3;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.seed = 23;

  const LoopResult ra = prune_finetune_loop(a, corpus, schedule, PruneScope::kGlobal, cfg);
  const LoopResult rb = prune_finetune_loop(b, corpus, schedule, PruneScope::kGlobal, cfg);
  CHECK(ra.mask == rb.mask);
  REQUIRE(ra.history.steps.size() == rb.history.steps.size());
  for (std::size_t i = 0; i < ra.history.steps.size(); ++i) {
    CHECK(ra.history.steps[i].loss == rb.history.steps[i].loss);
  }
  for (const auto& [name, t] : a.named_parameters()) {
    CHECK(t.data() == b.parameter(name).data());
  }
}

}  // TEST_SUITE
