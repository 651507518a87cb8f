#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "prunekit/model.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/rng.hpp"

using namespace prunekit;

namespace {

ModelConfig tiny_config(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.vocab_size = 4;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 8;
  cfg.context_len = 4;
  cfg.seed = seed;
  return cfg;
}

// (name, flat index) of every pruned position.
std::set<std::pair<std::string, std::size_t>> pruned_set(const PruningMask& mask) {
  std::set<std::pair<std::string, std::size_t>> out;
  for (const auto& [name, entry] : mask.entries()) {
    for (std::size_t i = 0; i < entry.keep.size(); ++i) {
      if (entry.keep[i] == 0) out.emplace(name, i);
    }
  }
  return out;
}

// The contract in one sort: k = floor(f*n) smallest by (|w|, name, index).
std::set<std::pair<std::string, std::size_t>> oracle_global(const TransformerModel& model,
                                                            double fraction) {
  std::vector<std::tuple<double, std::string, std::size_t>> pool;
  for (const auto& [name, t] : model.prunable_parameters()) {
    const auto& data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) pool.emplace_back(std::abs(data[i]), name, i);
  }
  std::sort(pool.begin(), pool.end());
  const std::size_t k = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(pool.size())));
  std::set<std::pair<std::string, std::size_t>> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace(std::get<1>(pool[i]), std::get<2>(pool[i]));
  return out;
}

// Weights drawn from a tiny value grid so magnitude ties are everywhere.
void scramble_with_ties(TransformerModel& model, Rng& rng) {
  static const double grid[] = {0.0, 0.5, -0.5, 1.0, -1.0, 1.5, -1.5};
  for (const auto& [name, t] : model.prunable_parameters()) {
    Tensor tensor = t;
    for (double& v : tensor.data()) v = grid[rng.below(std::size(grid))];
  }
}

}  // namespace

TEST_SUITE("pruning") {

TEST_CASE("effective param count reproduces the published table") {
  CHECK(effective_param_count(950000000, 0.1) == 855000000);
  CHECK(effective_param_count(950000000, 0.3) == 665000000);
  CHECK(effective_param_count(950000000, 0.5) == 475000000);
  CHECK(effective_param_count(100, 0.0) == 100);
  CHECK(effective_param_count(100, 1.0) == 0);
}

TEST_CASE("global mask equals the full-sort oracle, ties included") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    TransformerModel model(tiny_config(rng.below(1u << 20)));
    scramble_with_ties(model, rng);
    const double fraction = rng.uniform();
    const PruningMask mask = build_mask(model, fraction, PruneScope::kGlobal);
    REQUIRE(pruned_set(mask) == oracle_global(model, fraction));
  }
}

TEST_CASE("per-layer mask prunes floor(f*n) within every matrix") {
  Rng rng(7);
  TransformerModel model(tiny_config(3));
  scramble_with_ties(model, rng);
  const double fraction = 0.37;
  const PruningMask mask = build_mask(model, fraction, PruneScope::kPerLayer);
  for (const auto& [name, t] : model.prunable_parameters()) {
    const auto& entry = mask.entry(name);
    const long long pruned =
        static_cast<long long>(std::count(entry.keep.begin(), entry.keep.end(), 0));
    const long long want = static_cast<long long>(
        std::floor(fraction * static_cast<double>(entry.keep.size())));
    CHECK(pruned == want);

    // Within the matrix the pruned set is the k-smallest by (|w|, index).
    std::vector<std::pair<double, std::size_t>> mags;
    for (std::size_t i = 0; i < t.data().size(); ++i) mags.emplace_back(std::abs(t.data()[i]), i);
    std::sort(mags.begin(), mags.end());
    for (long long i = 0; i < want; ++i) CHECK(entry.keep[mags[static_cast<std::size_t>(i)].second] == 0);
  }
}

TEST_CASE("exact pruned count at every fraction") {
  TransformerModel model(tiny_config(5));
  const long long n = model.param_report().prunable_params;
  for (const double f : {0.0, 0.1, 1.0 / 3.0, 0.5, 0.999, 1.0}) {
    const PruningMask mask = build_mask(model, f, PruneScope::kGlobal);
    CHECK(mask.pruned_count() == static_cast<long long>(std::floor(f * static_cast<double>(n))));
  }
}

TEST_CASE("extending a mask keeps its pruned positions and only adds") {
  Rng rng(11);
  TransformerModel model(tiny_config(8));
  scramble_with_ties(model, rng);
  const PruningMask first = build_mask(model, 0.2, PruneScope::kGlobal);
  const PruningMask second = build_mask(model, 0.3, PruneScope::kGlobal, &first);
  const auto a = pruned_set(first), b = pruned_set(second);
  CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  // 0.3 of the survivors, on top of what was already pruned.
  const long long survivors = first.total_count() - first.pruned_count();
  CHECK(second.pruned_count() ==
        first.pruned_count() + static_cast<long long>(std::floor(0.3 * static_cast<double>(survivors))));

  // Extending by zero changes nothing.
  const PruningMask same = build_mask(model, 0.0, PruneScope::kGlobal, &second);
  CHECK(same == second);
}

TEST_CASE("fraction bounds are enforced") {
  TransformerModel model(tiny_config(2));
  CHECK_THROWS_AS((void)build_mask(model, -0.1, PruneScope::kGlobal), ContractError);
  CHECK_THROWS_AS((void)build_mask(model, 1.5, PruneScope::kGlobal), ContractError);
  CHECK_THROWS_AS((void)build_mask_by_threshold(model, -1.0, PruneScope::kGlobal), ContractError);
}

TEST_CASE("threshold pruning is strict") {
  TransformerModel model(tiny_config(4));
  // Known values in one matrix; the rest large so only w_q is affected.
  for (const auto& [name, t] : model.prunable_parameters()) {
    Tensor tensor = t;
    std::fill(tensor.data().begin(), tensor.data().end(), 9.0);
  }
  Tensor wq = model.parameter("l0.w_q");
  wq.data()[0] = 0.5;
  wq.data()[1] = -0.5;
  wq.data()[2] = 0.49;
  const PruningMask mask = build_mask_by_threshold(model, 0.5, PruneScope::kGlobal);
  const auto& keep = mask.entry("l0.w_q").keep;
  CHECK(keep[0] == 1);  // |w| == threshold survives
  CHECK(keep[1] == 1);
  CHECK(keep[2] == 0);  // strictly below goes
  CHECK(mask.pruned_count() == 1);

  // Threshold zero can prune nothing.
  CHECK(build_mask_by_threshold(model, 0.0, PruneScope::kGlobal).pruned_count() == 0);
}

TEST_CASE("magnitude threshold matches the k-th order statistic") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> matrices(1 + rng.below(3));
    std::vector<double> all;
    for (auto& m : matrices) {
      m.resize(1 + rng.below(40));
      for (double& v : m) {
        v = rng.gaussian(0.0, 1.0);
        all.push_back(std::abs(v));
      }
    }
    const double fraction = rng.uniform();
    const std::size_t k = static_cast<std::size_t>(
        std::floor(fraction * static_cast<double>(all.size())));
    std::sort(all.begin(), all.end());
    const double want = k == 0 ? 0.0 : all[k - 1];
    CHECK(magnitude_threshold(matrices, fraction) == want);
  }
  CHECK_THROWS_AS((void)magnitude_threshold({}, 0.5), ContractError);
}

TEST_CASE("apply_mask zeroes exactly the pruned positions") {
  TransformerModel model(tiny_config(6));
  const PruningMask mask = build_mask(model, 0.5, PruneScope::kGlobal);
  CHECK_FALSE(mask_is_applied(model, mask));  // gaussian init has no zeros to speak of
  apply_mask(model, mask);
  CHECK(mask_is_applied(model, mask));
  for (const auto& [name, t] : model.prunable_parameters()) {
    const auto& keep = mask.entry(name).keep;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (keep[i] == 0) CHECK(t.data()[i] == 0.0);
    }
  }
}

TEST_CASE("mask bookkeeping and model matching") {
  TransformerModel model(tiny_config(1));
  const PruningMask mask = PruningMask::all_kept(model);
  CHECK(mask.total_count() == model.param_report().prunable_params);
  CHECK(mask.pruned_count() == 0);
  CHECK(mask.sparsity() == 0.0);
  CHECK(mask.matches(model));

  ModelConfig bigger = tiny_config(1);
  bigger.d_ff = 16;
  TransformerModel other(bigger);
  CHECK_FALSE(mask.matches(other));
  CHECK_THROWS_AS(mask.require_match(other), ContractError);
}

TEST_CASE("tie-break prefers earlier names then lower indices") {
  TransformerModel model(tiny_config(3));
  for (const auto& [name, t] : model.prunable_parameters()) {
    Tensor tensor = t;
    std::fill(tensor.data().begin(), tensor.data().end(), 1.0);  // all tied
  }
  const long long n = model.param_report().prunable_params;
  const PruningMask mask = build_mask(model, 0.25, PruneScope::kGlobal);
  const long long k = static_cast<long long>(std::floor(0.25 * static_cast<double>(n)));
  // With every magnitude equal, exactly the first k positions in
  // (name, index) order must be pruned.
  std::vector<std::string> names;
  for (const auto& [name, entry] : mask.entries()) names.push_back(name);  // map order: sorted
  long long seen = 0;
  for (const auto& name : names) {
    const auto& keep = mask.entry(name).keep;
    for (std::size_t i = 0; i < keep.size(); ++i, ++seen) {
      CHECK(keep[i] == (seen < k ? 0 : 1));
    }
  }
}

}  // TEST_SUITE
