#pragma once

#include <string>

#include "prunekit/errors.hpp"

namespace prunekit {

enum class ScheduleKind {
  kOneShot,      // jump to the final sparsity at the first iteration
  kConstant,     // remove a constant fraction of the remaining weights per step
  kLinear,       // sparsity grows linearly in t
  kExponential,  // fast early pruning that decays toward the target
};

ScheduleKind schedule_kind_from_string(const std::string& name);
std::string to_string(ScheduleKind kind);

// Sparsity trajectory s_0 = start ... s_T = final over T iterations.
struct Schedule {
  ScheduleKind kind = ScheduleKind::kOneShot;
  double start_sparsity = 0.0;
  double final_sparsity = 0.0;
  int iterations = 1;
  // Shape parameter of the exponential variant; larger means more front-
  // loaded. Ignored by the other kinds.
  double alpha = 3.0;

  void validate() const;

  // Target sparsity after iteration t, for t in [0, iterations]. Exact at the
  // endpoints: s(0) == start_sparsity and s(T) == final_sparsity. The
  // trajectory is non-decreasing in t.
  //
  //   one_shot:     s(t) = final for t >= 1
  //   constant:     s(t) = 1 - (1-s0) * ((1-sf)/(1-s0))^(t/T)
  //                 (every step prunes the same fraction of what remains)
  //   linear:       s(t) = s0 + (sf-s0) * t/T
  //   exponential:  s(t) = sf - (sf-s0) * (e^(-a t/T) - e^(-a)) / (1 - e^(-a))
  double sparsity_at(int t) const;
};

// The fraction of *currently surviving* weights that must go to move overall
// sparsity from s_prev to s_next: (s_next - s_prev) / (1 - s_prev).
// ContractError unless 0 <= s_prev <= s_next <= 1, or when s_prev == 1 and
// more pruning is requested.
double iteration_prune_fraction(double s_prev, double s_next);

}  // namespace prunekit
