#pragma once

// Exact planning against a fixture: the best achievable mean reward per step
// and the policy attaining it, plus exact evaluation of arbitrary
// window-to-action policies.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cls/env.hpp"
#include "cls/ltm.hpp"

namespace cls {

using Window = std::vector<std::string>;
using Policy = std::map<Window, std::size_t>;
using PolicyFn = std::function<std::size_t(const Window&)>;

struct ClassValue {
  double reward = 0.0;  // expected reward per episode
  double length = 0.0;  // expected steps per episode
};

struct PolicyValue {
  std::map<std::string, ClassValue> per_class;
  std::map<std::string, double> weights;

  /// Weighted E[reward] / E[length] over the given classes (all if empty).
  double reward_per_step(const std::vector<std::string>& classes = {}) const;
};

struct OracleOptions {
  /// Questions per episode. Five keeps the broad class and every answer
  /// inside the six-token window.
  std::size_t max_questions = 5;
  /// Perceptual action ids the planner may use; empty means all ten.
  std::vector<std::size_t> allowed_questions;
};

struct OracleResult {
  Policy policy;
  PolicyValue value;
  double reward_per_step = 0.0;
  int iterations = 0;
};

/// Exact expected reward and length per class for a deterministic policy
/// over windows. Windows the policy does not cover fall back to DoNothing
/// when a Policy map is given.
PolicyValue evaluate_policy(const PolicyFn& policy, const ClassCatalog& catalog, const FixtureTable& fixture);
PolicyValue evaluate_policy(const Policy& policy, const ClassCatalog& catalog, const FixtureTable& fixture);

/// Maximises E[episode reward] / E[episode length] over decision-tree
/// policies (ask questions, then act on the answers) by parametric search:
/// each round solves max E[R - lambda L] by dynamic programming over
/// (questions asked, answers received) and updates lambda to the ratio of
/// the resulting policy, until no policy improves on lambda.
OracleResult optimal_policy_oracle(const ClassCatalog& catalog, const FixtureTable& fixture,
                                   const OracleOptions& options = {});
/// Throws ConfigError unless the oracle is backed by a fixture.
OracleResult optimal_policy_oracle(const ClassCatalog& catalog, const LtmOracle& oracle,
                                   const OracleOptions& options = {});

/// Policy maximising the expected discounted return from the first step,
/// the fixed point greedy Q-learning aims at.
OracleResult discounted_optimal_policy(const ClassCatalog& catalog, const FixtureTable& fixture, double gamma,
                                       const OracleOptions& options = {});

}  // namespace cls
