#include <cmath>
#include <vector>

#include "doctest.h"
#include "prunekit/rng.hpp"
#include "prunekit/schedule.hpp"

using namespace prunekit;

namespace {

Schedule make(ScheduleKind kind, double s0, double sf, int T, double alpha = 3.0) {
  Schedule s;
  s.kind = kind;
  s.start_sparsity = s0;
  s.final_sparsity = sf;
  s.iterations = T;
  s.alpha = alpha;
  return s;
}

constexpr ScheduleKind kAllKinds[] = {ScheduleKind::kOneShot, ScheduleKind::kConstant,
                                      ScheduleKind::kLinear, ScheduleKind::kExponential};

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("endpoints are exact for every kind") {
  for (const ScheduleKind kind : kAllKinds) {
    const Schedule s = make(kind, 0.125, 0.8125, 7);
    CHECK(s.sparsity_at(0) == 0.125);    // bitwise
    CHECK(s.sparsity_at(7) == 0.8125);
  }
}

TEST_CASE("constant schedule closed form") {
  const Schedule s = make(ScheduleKind::kConstant, 0.0, 0.75, 2);
  CHECK(s.sparsity_at(1) == doctest::Approx(0.5).epsilon(1e-15));
  // Same per-step surviving fraction at every step.
  const Schedule s2 = make(ScheduleKind::kConstant, 0.0, 0.875, 3);
  for (int t = 1; t <= 3; ++t) {
    const double prev = s2.sparsity_at(t - 1);
    const double next = s2.sparsity_at(t);
    CHECK((1.0 - next) / (1.0 - prev) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("linear schedule interpolates") {
  const Schedule s = make(ScheduleKind::kLinear, 0.1, 0.5, 4);
  CHECK(s.sparsity_at(1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(s.sparsity_at(2) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(s.sparsity_at(3) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("one shot jumps immediately") {
  const Schedule s = make(ScheduleKind::kOneShot, 0.0, 0.6, 4);
  CHECK(s.sparsity_at(0) == 0.0);
  for (int t = 1; t <= 4; ++t) CHECK(s.sparsity_at(t) == 0.6);
}

TEST_CASE("exponential schedule front-loads and alpha sharpens it") {
  const Schedule gentle = make(ScheduleKind::kExponential, 0.0, 0.5, 10, 1.0);
  const Schedule sharp = make(ScheduleKind::kExponential, 0.0, 0.5, 10, 6.0);
  const Schedule linear = make(ScheduleKind::kLinear, 0.0, 0.5, 10);
  for (int t = 1; t < 10; ++t) {
    CHECK(sharp.sparsity_at(t) > gentle.sparsity_at(t));
    CHECK(gentle.sparsity_at(t) > linear.sparsity_at(t));
  }
}

TEST_CASE("trajectories are monotone for random parameters") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const double s0 = rng.uniform() * 0.5;
    const double sf = s0 + rng.uniform() * (0.99 - s0);
    const int T = 1 + static_cast<int>(rng.below(9));
    const double alpha = 0.5 + rng.uniform() * 6.0;
    for (const ScheduleKind kind : kAllKinds) {
      const Schedule s = make(kind, s0, sf, T, alpha);
      s.validate();
      double prev = s.sparsity_at(0);
      for (int t = 1; t <= T; ++t) {
        const double cur = s.sparsity_at(t);
        CHECK(cur >= prev);
        CHECK(cur <= sf + 1e-12);
        prev = cur;
      }
    }
  }
}

TEST_CASE("iteration prune fraction arithmetic") {
  CHECK(iteration_prune_fraction(0.5, 0.75) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(iteration_prune_fraction(0.0, 0.3) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(iteration_prune_fraction(0.25, 0.25) == 0.0);
  CHECK(iteration_prune_fraction(1.0, 1.0) == 0.0);
  CHECK_THROWS_AS((void)iteration_prune_fraction(0.5, 0.4), ContractError);
  CHECK_THROWS_AS((void)iteration_prune_fraction(-0.1, 0.5), ContractError);
  CHECK_THROWS_AS((void)iteration_prune_fraction(0.5, 1.1), ContractError);
}

TEST_CASE("composing per-iteration fractions reproduces the target") {
  // Integer simulation: at each step prune floor(f * surviving). Rounding may
  // lose at most one weight per step, so the final miss is bounded by T/N.
  const long long N = 98304;
  for (const ScheduleKind kind : kAllKinds) {
    for (const int T : {1, 2, 5, 8}) {
      const Schedule s = make(kind, 0.0, 0.5, T);
      long long pruned = 0;
      for (int t = 1; t <= T; ++t) {
        const double prev = static_cast<double>(pruned) / static_cast<double>(N);
        const double f = iteration_prune_fraction(prev, s.sparsity_at(t));
        pruned += static_cast<long long>(std::floor(f * static_cast<double>(N - pruned)));
      }
      const double final_sparsity = static_cast<double>(pruned) / static_cast<double>(N);
      CHECK(std::abs(final_sparsity - 0.5) <= 2.0 * static_cast<double>(T) / static_cast<double>(N));
    }
  }
}

TEST_CASE("kind names round trip") {
  for (const ScheduleKind kind : kAllKinds) {
    CHECK(schedule_kind_from_string(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS((void)schedule_kind_from_string("quadratic"), ConfigError);
}

TEST_CASE("validation rejects bad parameters") {
  CHECK_THROWS_AS(make(ScheduleKind::kLinear, 0.5, 0.4, 3).validate(), ConfigError);
  CHECK_THROWS_AS(make(ScheduleKind::kLinear, 0.0, 0.5, 0).validate(), ConfigError);
  CHECK_THROWS_AS(make(ScheduleKind::kLinear, -0.1, 0.5, 3).validate(), ConfigError);
  CHECK_THROWS_AS(make(ScheduleKind::kLinear, 0.0, 1.1, 3).validate(), ConfigError);
  CHECK_THROWS_AS(make(ScheduleKind::kExponential, 0.0, 0.5, 3, -1.0).validate(), ConfigError);
  const Schedule s = make(ScheduleKind::kLinear, 0.0, 0.5, 3);
  CHECK_THROWS_AS((void)s.sparsity_at(-1), ContractError);
  CHECK_THROWS_AS((void)s.sparsity_at(4), ContractError);
}

}  // TEST_SUITE
