#include "prunekit/pruning.hpp"

#include <algorithm>
#include <cmath>

namespace prunekit {

namespace {

// One pruning candidate. name_rank is the parameter's ordinal among the
// sorted prunable names, so ordering candidates is a pure function of the
// weights and not of container iteration order.
struct Candidate {
  double magnitude;
  int name_rank;
  std::int64_t flat_index;
};

bool candidate_less(const Candidate& a, const Candidate& b) {
  if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
  if (a.name_rank != b.name_rank) return a.name_rank < b.name_rank;
  return a.flat_index < b.flat_index;
}

void require_fraction(double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ContractError("prune fraction must satisfy 0 <= fraction <= 1, got " +
                        std::to_string(fraction));
  }
}

PruningMask starting_mask(const TransformerModel& model, const PruningMask* existing) {
  if (existing == nullptr) return PruningMask::all_kept(model);
  existing->require_match(model);
  return *existing;
}

}  // namespace

PruningMask PruningMask::all_kept(const TransformerModel& model) {
  PruningMask mask;
  for (const auto& [name, t] : model.prunable_parameters()) {
    mask.entries_[name] = Entry{t.shape(), std::vector<std::uint8_t>(t.numel(), 1)};
  }
  return mask;
}

PruningMask::Entry& PruningMask::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("mask has no entry for '" + name + "'");
  return it->second;
}

const PruningMask::Entry& PruningMask::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("mask has no entry for '" + name + "'");
  return it->second;
}

long long PruningMask::total_count() const {
  long long n = 0;
  for (const auto& [name, e] : entries_) n += static_cast<long long>(e.keep.size());
  return n;
}

long long PruningMask::pruned_count() const {
  long long n = 0;
  for (const auto& [name, e] : entries_) {
    n += static_cast<long long>(std::count(e.keep.begin(), e.keep.end(), 0));
  }
  return n;
}

double PruningMask::sparsity() const {
  const long long total = total_count();
  return total > 0 ? static_cast<double>(pruned_count()) / static_cast<double>(total) : 0.0;
}

bool PruningMask::matches(const TransformerModel& model) const {
  const auto prunable = model.prunable_parameters();
  if (prunable.size() != entries_.size()) return false;
  for (const auto& [name, t] : prunable) {
    auto it = entries_.find(name);
    if (it == entries_.end() || it->second.shape != t.shape()) return false;
  }
  return true;
}

void PruningMask::require_match(const TransformerModel& model) const {
  if (!matches(model)) {
    throw ContractError("mask does not match the model's prunable parameters");
  }
}

void PruningMask::insert(std::string name, Entry entry) {
  if (entry.keep.size() != shape_numel(entry.shape)) {
    throw ContractError("mask entry '" + name + "' does not cover its shape");
  }
  entries_[std::move(name)] = std::move(entry);
}

PruningMask build_mask(const TransformerModel& model, double fraction, PruneScope scope,
                       const PruningMask* existing) {
  require_fraction(fraction);
  PruningMask mask = starting_mask(model, existing);
  const auto prunable = model.prunable_parameters();

  std::vector<std::string> sorted_names;
  for (const auto& [name, t] : prunable) sorted_names.push_back(name);
  std::sort(sorted_names.begin(), sorted_names.end());
  auto name_rank = [&](const std::string& name) {
    return static_cast<int>(std::lower_bound(sorted_names.begin(), sorted_names.end(), name) -
                            sorted_names.begin());
  };

  // Collect candidates (surviving positions), select the floor(fraction * n)
  // smallest under the total order (|w|, name, index), and prune them.
  auto prune_smallest = [&](std::vector<Candidate>& candidates,
                            const std::vector<std::string>& names_by_rank) {
    const std::size_t k =
        static_cast<std::size_t>(std::floor(fraction * static_cast<double>(candidates.size())));
    if (k == 0) return;
    if (k < candidates.size()) {
      std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                       candidates.end(), candidate_less);
    }
    for (std::size_t i = 0; i < k; ++i) {
      const Candidate& c = candidates[i];
      mask.entry(names_by_rank[static_cast<std::size_t>(c.name_rank)])
          .keep[static_cast<std::size_t>(c.flat_index)] = 0;
    }
  };

  if (scope == PruneScope::kGlobal) {
    std::vector<Candidate> candidates;
    for (const auto& [name, t] : prunable) {
      const auto& keep = mask.entry(name).keep;
      const auto& data = t.data();
      const int rank = name_rank(name);
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (keep[i]) {
          candidates.push_back({std::abs(data[i]), rank, static_cast<std::int64_t>(i)});
        }
      }
    }
    prune_smallest(candidates, sorted_names);
  } else {
    for (const auto& [name, t] : prunable) {
      std::vector<Candidate> candidates;
      const auto& keep = mask.entry(name).keep;
      const auto& data = t.data();
      const int rank = name_rank(name);
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (keep[i]) {
          candidates.push_back({std::abs(data[i]), rank, static_cast<std::int64_t>(i)});
        }
      }
      prune_smallest(candidates, sorted_names);
    }
  }
  return mask;
}

PruningMask build_mask_by_threshold(const TransformerModel& model, double threshold,
                                    PruneScope /*scope*/, const PruningMask* existing) {
  if (!(threshold >= 0.0)) {
    throw ContractError("prune threshold must be non-negative, got " + std::to_string(threshold));
  }
  // Scope is irrelevant for a fixed threshold: the decision is per weight.
  PruningMask mask = starting_mask(model, existing);
  for (const auto& [name, t] : model.prunable_parameters()) {
    auto& keep = mask.entry(name).keep;
    const auto& data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (keep[i] && std::abs(data[i]) < threshold) keep[i] = 0;
    }
  }
  return mask;
}

double magnitude_threshold(const std::vector<std::vector<double>>& matrices, double fraction) {
  require_fraction(fraction);
  std::vector<double> magnitudes;
  for (const auto& m : matrices) {
    for (double w : m) magnitudes.push_back(std::abs(w));
  }
  if (magnitudes.empty()) throw ContractError("magnitude_threshold: empty weight collection");
  const std::size_t k =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(magnitudes.size())));
  if (k == 0) return 0.0;
  std::nth_element(magnitudes.begin(), magnitudes.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   magnitudes.end());
  return magnitudes[k - 1];
}

void apply_mask(TransformerModel& model, const PruningMask& mask) {
  mask.require_match(model);
  for (auto& [name, t] : model.prunable_parameters()) {
    const auto& keep = mask.entry(name).keep;
    auto& data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!keep[i]) data[i] = 0.0;
    }
  }
}

bool mask_is_applied(const TransformerModel& model, const PruningMask& mask) {
  mask.require_match(model);
  for (const auto& [name, t] : model.prunable_parameters()) {
    const auto& keep = mask.entry(name).keep;
    const auto& data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!keep[i] && data[i] != 0.0) return false;
    }
  }
  return true;
}

long long effective_param_count(long long total, double rate) {
  if (total < 0) throw ContractError("effective_param_count: negative total");
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ContractError("effective_param_count: rate must satisfy 0 <= rate <= 1, got " +
                        std::to_string(rate));
  }
  return std::llround(static_cast<double>(total) * (1.0 - rate));
}

}  // namespace prunekit
