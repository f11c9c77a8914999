#pragma once

// Two-layer fully connected regressor trained with Adam: the entangled
// baseline short-term memory.
//
//   y   = layer_norm(x) * gamma + beta
//   z   = W1 y + b1
//   h   = leaky_relu(z)
//   d   = dropout(h)          (inverted; training only)
//   out = W2 d + b2

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cls {

struct MlpConfig {
  std::size_t input_dim = 800;
  std::size_t hidden = 2000;
  std::size_t output_dim = 1;
  double leaky_slope = 0.01;
  double dropout = 0.25;
  bool layer_norm = true;
  double layer_norm_epsilon = 1e-9;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gradients of the batch loss with respect to every parameter tensor.
struct MlpGradients {
  Eigen::VectorXd gamma, beta;
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
  double loss = 0.0;
};

class Mlp {
 public:
  explicit Mlp(const MlpConfig& config);

  const MlpConfig& config() const { return config_; }

  /// One sample. Evaluation mode is deterministic; training mode draws a
  /// dropout mask from the model's own generator.
  Eigen::VectorXd forward(std::span<const double> input, bool training = false);
  /// Evaluation mode on a batch stored one sample per column.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& inputs) const;

  /// Mean squared error over every output of every sample. `keep` holds the
  /// per-unit dropout multipliers (0 or 1/(1-p)), one column per sample; an
  /// empty matrix disables dropout.
  MlpGradients gradients(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                         const Eigen::MatrixXd& keep = {}) const;
  double loss(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& keep = {}) const;

  /// Samples a dropout mask, backpropagates and applies one Adam update.
  /// Returns the loss before the update.
  double train_step(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);
  void apply_adam(const MlpGradients& g);

  Eigen::MatrixXd sample_dropout(std::size_t batch);
  /// Layer-normalised input before the affine parameters.
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& inputs) const;

  std::uint64_t updates() const { return step_; }

  Eigen::VectorXd gamma, beta;
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  void save(const std::string& path) const;
  static Mlp load(const std::string& path);
  friend bool operator==(const Mlp& a, const Mlp& b);

 private:
  struct Moments {
    Eigen::VectorXd gamma, beta;
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;
  };

  void gradients_into(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& keep,
                      MlpGradients& out) const;

  MlpConfig config_;
  Moments m_, v_;
  MlpGradients workspace_;
  std::uint64_t step_ = 0;
  std::mt19937_64 rng_;
};

/// Evaluation-mode outputs for inputs of the form [context, action] over a
/// fixed action table, without materialising each concatenated input.
/// The first layer splits as W1 diag(gamma) = [U_c | U_a], so U_c c is
/// computed once per context and U_a a once per action (the model must
/// outlive the evaluator and stay unchanged while it is used); the layer-norm
/// statistics come from running sums over the two halves. Rebuild after
/// every parameter update.
class SplitInputEvaluator {
 public:
  SplitInputEvaluator(const Mlp& model, const Eigen::MatrixXd& actions);

  /// Output 0 for each action, in table order.
  std::vector<double> evaluate(std::span<const double> context) const;
  /// One context per column; returns [actions, contexts].
  Eigen::MatrixXd evaluate(const Eigen::Ref<const Eigen::MatrixXd>& contexts) const;

 private:
  const Mlp* model_;
  std::size_t context_dim_;
  Eigen::VectorXd gamma_context_;
  Eigen::MatrixXd action_drive_;  // [hidden, actions]: U_a a
  Eigen::VectorXd action_sum_, action_sq_;
  Eigen::VectorXd w1_gamma_, bias_;  // W1 gamma and W1 beta + b1
};

}  // namespace cls
