#pragma once

// Q-learning controller: action-value estimators over the context window,
// epsilon-greedy selection and online temporal-difference updates with no
// replay.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "cls/encoding.hpp"
#include "cls/env.hpp"
#include "cls/mlp.hpp"
#include "cls/policy_oracle.hpp"
#include "cls/sdm.hpp"

namespace cls {

using QVector = std::array<double, kNumActions>;

/// SplitMix64 step; derives independent stream seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Fixed token, context and action encoders shared by estimators. Not
/// copyable: the recurrent encoder refers to the vocabulary.
class Encoders {
 public:
  explicit Encoders(std::uint64_t seed, const RecurrentEncoderConfig& recurrent = {});
  Encoders(const Encoders&) = delete;
  Encoders& operator=(const Encoders&) = delete;

  std::uint64_t seed() const { return seed_; }
  const TokenVocabulary& vocab() const { return vocab_; }
  const RecurrentSparseEncoder& recurrent() const { return recurrent_; }
  const ActionEmbedding& actions() const { return actions_; }

 private:
  std::uint64_t seed_;
  TokenVocabulary vocab_;
  RecurrentSparseEncoder recurrent_;
  ActionEmbedding actions_;
};

/// Q(s, a) for every action of a context window.
class QEstimator {
 public:
  virtual ~QEstimator() = default;

  virtual std::string kind() const = 0;
  virtual QVector q_values(const Window& window) const = 0;
  virtual std::vector<QVector> q_values(const std::vector<Window>& windows) const;
  double estimate(const Window& window, std::size_t action) const;

  /// Moves Q(window, action) towards target. Each call hands over one
  /// transition, which the estimator may use exactly once.
  virtual void update(const Window& window, std::size_t action, double target) = 0;

  /// Transitions handed to update().
  std::uint64_t transitions() const { return transitions_; }
  /// Parameter changes applied: one per write for the SDM, one per Adam
  /// step for the network.
  virtual std::uint64_t parameter_updates() const = 0;

  virtual void save(const std::string& path) const = 0;

 protected:
  std::uint64_t transitions_ = 0;
};

struct SdmEstimatorConfig {
  std::size_t capacity = 10000;
  std::size_t clique_size = 32;
  double learning_rate = 0.1;
};

/// Key [context encoding (200) | action embedding (200)] into a sparse
/// memory with a scalar value. The projection is linear, so the context and
/// action halves are projected separately and the clique of every
/// (window, action) pair is cached.
class SdmQEstimator : public QEstimator {
 public:
  SdmQEstimator(std::shared_ptr<const Encoders> encoders, const SdmEstimatorConfig& config, std::uint64_t seed);
  /// Wraps an existing memory, e.g. one loaded from a snapshot.
  SdmQEstimator(std::shared_ptr<const Encoders> encoders, SparseMemory memory);

  std::string kind() const override { return "sdm"; }
  QVector q_values(const Window& window) const override;
  using QEstimator::q_values;
  void update(const Window& window, std::size_t action, double target) override;
  std::uint64_t parameter_updates() const override { return memory_.write_count(); }
  void save(const std::string& path) const override { memory_.save(path); }

  const SparseMemory& memory() const { return memory_; }
  const Clique& clique(const Window& window, std::size_t action) const;
  /// The key the memory sees for (window, action).
  Vec key(const Window& window, std::size_t action) const;

 private:
  void init_action_drive();
  const std::array<Clique, kNumActions>& cliques(const Window& window) const;

  std::shared_ptr<const Encoders> encoders_;
  SparseMemory memory_;
  std::vector<Vec> action_drive_;  // P[:, 200:] a for each action
  mutable std::unordered_map<std::string, std::array<Clique, kNumActions>> cache_;
};

/// Input [flattened window (600) | action embedding (200)] into the
/// regressor. Updates collect into a minibatch; one Adam step is applied
/// when it is full and the minibatch is then cleared.
class MlpQEstimator : public QEstimator {
 public:
  MlpQEstimator(std::shared_ptr<const Encoders> encoders, const MlpConfig& config, std::size_t minibatch = 16);
  MlpQEstimator(std::shared_ptr<const Encoders> encoders, Mlp model, std::size_t minibatch = 16);
  MlpQEstimator(const MlpQEstimator&) = delete;
  MlpQEstimator& operator=(const MlpQEstimator&) = delete;

  std::string kind() const override { return "mlp"; }
  QVector q_values(const Window& window) const override;
  std::vector<QVector> q_values(const std::vector<Window>& windows) const override;
  void update(const Window& window, std::size_t action, double target) override;
  std::uint64_t parameter_updates() const override { return model_.updates(); }
  /// Throws ContractViolation while a partial minibatch is pending.
  void save(const std::string& path) const override;

  const Mlp& model() const { return model_; }
  std::size_t pending() const { return pending_; }
  std::size_t minibatch() const { return minibatch_; }
  /// Transitions that have gone into an Adam step.
  std::uint64_t trained_transitions() const { return trained_; }
  /// The network input for (window, action).
  Eigen::VectorXd input(const Window& window, std::size_t action) const;

 private:
  void init();
  const Eigen::VectorXd& context(const Window& window) const;
  const SplitInputEvaluator& evaluator() const;

  std::shared_ptr<const Encoders> encoders_;
  Mlp model_;
  std::size_t minibatch_;
  Eigen::MatrixXd action_table_;  // [200, 15]
  Eigen::MatrixXd batch_inputs_, batch_targets_;
  std::size_t pending_ = 0;
  std::uint64_t trained_ = 0;
  mutable std::unique_ptr<SplitInputEvaluator> evaluator_;
  mutable std::unordered_map<std::string, Eigen::VectorXd> contexts_;
};

/// Greedy with probability 1 - epsilon (ties to the lowest id), otherwise
/// uniform over all actions. Draws nothing from rng when epsilon is 0.
std::size_t select_action(const QVector& q, double epsilon, std::mt19937_64& rng);
std::size_t greedy_action(const QVector& q);

/// reward if terminal, else reward + gamma * max(next_q).
double td_target(double reward, bool terminal, const QVector& next_q, double gamma);

struct ClassStats {
  double reward = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t episodes = 0;
};

struct EvaluationResult {
  double mean_reward = 0.0;  // total reward / total steps
  double total_reward = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t episodes = 0;
  std::map<std::string, ClassStats> per_class;

  /// Mean reward per step over the listed classes only.
  double mean_reward_over(const std::vector<std::string>& classes) const;
};

/// Greedy play for a fixed number of steps without touching the estimator.
/// The last episode may be cut short; its steps still count.
EvaluationResult run_evaluation(const QEstimator& estimator, const ClassCatalog& catalog, LtmOracle& oracle,
                                std::uint64_t steps = 1000, std::uint64_t seed = 0);

struct EvalSet {
  std::string name;
  ClassCatalog catalog;
};

struct TrainingOptions {
  std::uint64_t batch_steps = 0;
  /// Parallel episodes; each batch step advances every lane once.
  std::size_t batch_size = 16;
  double epsilon = 0.1;
  double gamma = 0.9;
  std::uint64_t seed = 0;
  /// Evaluate at step 0, every eval_every batch steps and at the end...
  std::uint64_t eval_every = 250;
  /// ...unless explicit checkpoints are listed.
  std::vector<std::uint64_t> eval_at;
  std::uint64_t eval_steps = 1000;
  std::uint64_t eval_seed = 1;

  void validate() const;
};

struct StepRecord {
  std::uint64_t step = 0;  // batch step
  std::size_t lane = 0;
  std::uint64_t episode = 0;
  std::size_t action = 0;
  double reward = 0.0;
  bool terminal = false;
  std::string cls;
};

struct EvalRecord {
  std::uint64_t step = 0;
  std::string set;
  EvaluationResult result;
};

class TrainingObserver {
 public:
  virtual ~TrainingObserver() = default;
  virtual void on_step(const StepRecord&) {}
  virtual void on_eval(const EvalRecord&) {}
};

struct TrainingSummary {
  std::uint64_t batch_steps = 0;
  std::uint64_t transitions = 0;
  std::uint64_t episodes = 0;
  double total_reward = 0.0;
  std::vector<EvalRecord> evaluations;
};

/// Online Q-learning. Each batch step: read Q for every lane, pick actions,
/// step the environments, compute targets from the post-step windows with
/// the current parameters, then hand each transition to the estimator once.
/// Finished lanes start new encounters.
TrainingSummary run_training(QEstimator& estimator, const ClassCatalog& catalog, LtmOracle& oracle,
                             const TrainingOptions& options, const std::vector<EvalSet>& evals = {},
                             TrainingObserver* observer = nullptr);

/// Window -> greedy action over every window the environment can show for
/// the catalog (broad class plus up to five answers).
Policy greedy_policy(const QEstimator& estimator, const ClassCatalog& catalog, const FixtureTable& fixture);

}  // namespace cls
