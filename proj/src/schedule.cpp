#include "prunekit/schedule.hpp"

#include <cmath>

namespace prunekit {

ScheduleKind schedule_kind_from_string(const std::string& name) {
  if (name == "one_shot") return ScheduleKind::kOneShot;
  if (name == "constant") return ScheduleKind::kConstant;
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "exponential") return ScheduleKind::kExponential;
  throw ConfigError("unknown schedule '" + name +
                    "' (expected one_shot, constant, linear, or exponential)");
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kOneShot:
      return "one_shot";
    case ScheduleKind::kConstant:
      return "constant";
    case ScheduleKind::kLinear:
      return "linear";
    case ScheduleKind::kExponential:
      return "exponential";
  }
  throw ContractError("invalid ScheduleKind");
}

void Schedule::validate() const {
  if (iterations < 1) {
    throw ConfigError("schedule.iterations must be >= 1, got " + std::to_string(iterations));
  }
  if (!(start_sparsity >= 0.0 && start_sparsity <= final_sparsity && final_sparsity <= 1.0)) {
    throw ConfigError("schedule requires 0 <= start_sparsity <= final_sparsity <= 1, got start=" +
                      std::to_string(start_sparsity) + " final=" + std::to_string(final_sparsity));
  }
  if (kind == ScheduleKind::kExponential && !(alpha > 0.0 && std::isfinite(alpha))) {
    throw ConfigError("schedule.alpha must be a positive finite value, got " +
                      std::to_string(alpha));
  }
}

double Schedule::sparsity_at(int t) const {
  validate();
  if (t < 0 || t > iterations) {
    throw ContractError("schedule iteration " + std::to_string(t) + " outside [0," +
                        std::to_string(iterations) + "]");
  }
  // Pin the endpoints so downstream equality checks are exact.
  if (t == 0) return start_sparsity;
  if (t == iterations) return final_sparsity;
  const double frac = static_cast<double>(t) / static_cast<double>(iterations);
  switch (kind) {
    case ScheduleKind::kOneShot:
      return final_sparsity;
    case ScheduleKind::kConstant: {
      // Geometric decay of the surviving mass: each iteration removes the
      // same fraction of what is left.
      const double ratio = (1.0 - final_sparsity) / (1.0 - start_sparsity);
      return 1.0 - (1.0 - start_sparsity) * std::pow(ratio, frac);
    }
    case ScheduleKind::kLinear:
      return start_sparsity + (final_sparsity - start_sparsity) * frac;
    case ScheduleKind::kExponential: {
      // Normalized so the curve hits both endpoints regardless of alpha.
      const double tail = std::exp(-alpha);
      const double w = (std::exp(-alpha * frac) - tail) / (1.0 - tail);
      return final_sparsity - (final_sparsity - start_sparsity) * w;
    }
  }
  throw ContractError("invalid ScheduleKind");
}

double iteration_prune_fraction(double s_prev, double s_next) {
  if (!(s_prev >= 0.0 && s_next >= s_prev && s_next <= 1.0)) {
    throw ContractError("iteration_prune_fraction requires 0 <= s_prev <= s_next <= 1, got " +
                        std::to_string(s_prev) + " -> " + std::to_string(s_next));
  }
  if (s_prev >= 1.0) {
    if (s_next > s_prev) {
      throw ContractError("iteration_prune_fraction: nothing left to prune at sparsity 1");
    }
    return 0.0;
  }
  return (s_next - s_prev) / (1.0 - s_prev);
}

}  // namespace prunekit
