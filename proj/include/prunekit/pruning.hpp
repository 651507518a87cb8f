#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prunekit/model.hpp"

namespace prunekit {

enum class PruneScope {
  kGlobal,    // rank all prunable weights in one pool
  kPerLayer,  // rank within each prunable matrix separately
};

// Boolean keep/prune decision per prunable weight. Entries are keyed by
// parameter name and always cover a model's full prunable set: keep[i] == 0
// means position i (row-major flat index) is pruned.
class PruningMask {
 public:
  struct Entry {
    std::vector<int> shape;
    std::vector<std::uint8_t> keep;

    bool operator==(const Entry&) const = default;
  };

  // All-keep mask matching the model's prunable parameters.
  static PruningMask all_kept(const TransformerModel& model);

  const std::map<std::string, Entry>& entries() const { return entries_; }
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  long long total_count() const;
  long long pruned_count() const;
  // pruned / total over the prunable set; 0 when the set is empty.
  double sparsity() const;

  bool matches(const TransformerModel& model) const;
  // ContractError when the mask's names or shapes differ from the model's
  // prunable parameters.
  void require_match(const TransformerModel& model) const;

  void insert(std::string name, Entry entry);

  bool operator==(const PruningMask&) const = default;

 private:
  std::map<std::string, Entry> entries_;
};

// Ranks prunable weights by |w| and marks the smallest `fraction` of the
// still-unpruned ones as pruned: k = floor(fraction * n_candidates) weights
// go, ties on |w| broken by (parameter name, flat index) so the result is a
// deterministic function of the weights. With `existing`, the returned mask
// extends it (already-pruned weights stay pruned and are not candidates).
// fraction outside [0,1] is a ContractError.
PruningMask build_mask(const TransformerModel& model, double fraction, PruneScope scope,
                       const PruningMask* existing = nullptr);

// Threshold variant: prunes every still-unpruned weight with |w| strictly
// below `threshold`. threshold < 0 is a ContractError.
PruningMask build_mask_by_threshold(const TransformerModel& model, double threshold,
                                    PruneScope scope, const PruningMask* existing = nullptr);

// The cut value build_mask would use on this collection of magnitudes:
// the k-th smallest |w| with k = floor(fraction * n), or 0 when k == 0.
// ContractError on an empty collection or fraction outside [0,1].
double magnitude_threshold(const std::vector<std::vector<double>>& matrices, double fraction);

// Writes 0.0 into every pruned position of the model's prunable tensors.
// Surviving weights are not touched, bit for bit.
void apply_mask(TransformerModel& model, const PruningMask& mask);

// True when every pruned position of the model holds exactly 0.0.
bool mask_is_applied(const TransformerModel& model, const PruningMask& mask);

// Parameters surviving after pruning `rate` of `total`: round(total * (1 -
// rate)). ContractError when rate is outside [0,1] or total is negative.
long long effective_param_count(long long total, double rate);

}  // namespace prunekit
