#include "cls/mlp.hpp"

#include <cmath>
#include <sstream>

#include "cls/errors.hpp"
#include "cls/snapshot.hpp"

namespace cls {

namespace {

Eigen::MatrixXd uniform_matrix(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  // Column-major fill keeps the draw order independent of Eigen internals.
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
  return m;
}

std::vector<double> flat(const Eigen::MatrixXd& m) { return {m.data(), m.data() + m.size()}; }

Eigen::MatrixXd shaped(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) throw FormatError("mlp snapshot: tensor size mismatch");
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), static_cast<Eigen::Index>(rows),
                                           static_cast<Eigen::Index>(cols));
}

}  // namespace

void MlpConfig::validate() const {
  if (input_dim == 0 || hidden == 0 || output_dim == 0) throw ConfigError("mlp: dimensions must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("mlp: dropout must lie in [0, 1)");
  if (!(leaky_slope >= 0.0 && leaky_slope <= 1.0)) throw ConfigError("mlp: leaky slope must lie in [0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("mlp: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("mlp: Adam betas must lie in [0, 1)");
  if (!(layer_norm_epsilon > 0.0) || !(adam_epsilon > 0.0)) throw ConfigError("mlp: epsilons must be positive");
}

Mlp::Mlp(const MlpConfig& config) : config_(config), rng_(config.seed) {
  config_.validate();
  const auto d = static_cast<Eigen::Index>(config_.input_dim);
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  const auto o = static_cast<Eigen::Index>(config_.output_dim);
  gamma = Eigen::VectorXd::Ones(d);
  beta = Eigen::VectorXd::Zero(d);
  const double b_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double b_hid = 1.0 / std::sqrt(static_cast<double>(h));
  w1 = uniform_matrix(config_.hidden, config_.input_dim, b_in, rng_);
  b1 = uniform_matrix(config_.hidden, 1, b_in, rng_);
  w2 = uniform_matrix(config_.output_dim, config_.hidden, b_hid, rng_);
  b2 = uniform_matrix(config_.output_dim, 1, b_hid, rng_);
  for (Moments* mo : {&m_, &v_}) {
    mo->gamma = Eigen::VectorXd::Zero(d);
    mo->beta = Eigen::VectorXd::Zero(d);
    mo->w1 = Eigen::MatrixXd::Zero(h, d);
    mo->b1 = Eigen::VectorXd::Zero(h);
    mo->w2 = Eigen::MatrixXd::Zero(o, h);
    mo->b2 = Eigen::VectorXd::Zero(o);
  }
}

Eigen::MatrixXd Mlp::normalize(const Eigen::MatrixXd& inputs) const {
  if (static_cast<std::size_t>(inputs.rows()) != config_.input_dim)
    throw ContractViolation("mlp: input has " + std::to_string(inputs.rows()) + " features, expected " +
                            std::to_string(config_.input_dim));
  if (!config_.layer_norm) return inputs;
  const double n = static_cast<double>(inputs.rows());
  Eigen::MatrixXd out(inputs.rows(), inputs.cols());
  for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
    const double mean = inputs.col(j).mean();
    const Eigen::ArrayXd centered = inputs.col(j).array() - mean;
    const double var = centered.square().sum() / n;
    out.col(j) = (centered / std::sqrt(var + config_.layer_norm_epsilon)).matrix();
  }
  return out;
}

Eigen::MatrixXd Mlp::predict(const Eigen::MatrixXd& inputs) const {
  Eigen::MatrixXd y = normalize(inputs);
  if (config_.layer_norm) y = (y.array().colwise() * gamma.array()).colwise() + beta.array();
  Eigen::MatrixXd z = (w1 * y).colwise() + b1;
  const double a = config_.leaky_slope;
  z = z.unaryExpr([a](double v) { return v > 0 ? v : a * v; });
  return (w2 * z).colwise() + b2;
}

Eigen::VectorXd Mlp::forward(std::span<const double> input, bool training) {
  const Eigen::Map<const Eigen::VectorXd> x(input.data(), static_cast<Eigen::Index>(input.size()));
  if (!training || config_.dropout == 0.0) return predict(x);
  Eigen::MatrixXd y = normalize(x);
  if (config_.layer_norm) y = (y.array().colwise() * gamma.array()).colwise() + beta.array();
  Eigen::MatrixXd z = (w1 * y).colwise() + b1;
  const double a = config_.leaky_slope;
  z = z.unaryExpr([a](double v) { return v > 0 ? v : a * v; });
  z = z.cwiseProduct(sample_dropout(1));
  return (w2 * z).colwise() + b2;
}

Eigen::MatrixXd Mlp::sample_dropout(std::size_t batch) {
  const double keep_scale = 1.0 / (1.0 - config_.dropout);
  std::bernoulli_distribution drop(config_.dropout);
  Eigen::MatrixXd keep(static_cast<Eigen::Index>(config_.hidden), static_cast<Eigen::Index>(batch));
  for (Eigen::Index j = 0; j < keep.cols(); ++j)
    for (Eigen::Index i = 0; i < keep.rows(); ++i) keep(i, j) = drop(rng_) ? 0.0 : keep_scale;
  return keep;
}

MlpGradients Mlp::gradients(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                            const Eigen::MatrixXd& keep) const {
  MlpGradients g;
  gradients_into(inputs, targets, keep, g);
  return g;
}

void Mlp::gradients_into(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& keep,
                         MlpGradients& g) const {
  const Eigen::Index batch = inputs.cols();
  if (batch == 0) throw ContractViolation("mlp: empty batch");
  if (targets.cols() != batch || static_cast<std::size_t>(targets.rows()) != config_.output_dim)
    throw ContractViolation("mlp: target shape does not match the batch");
  const bool use_keep = keep.size() > 0;
  if (use_keep && (keep.cols() != batch || keep.rows() != w1.rows()))
    throw ContractViolation("mlp: dropout mask shape does not match the batch");

  const Eigen::MatrixXd xhat = normalize(inputs);
  Eigen::MatrixXd y = xhat;
  if (config_.layer_norm) y = (xhat.array().colwise() * gamma.array()).colwise() + beta.array();
  const Eigen::MatrixXd z = (w1 * y).colwise() + b1;
  const double a = config_.leaky_slope;
  Eigen::MatrixXd h = z.unaryExpr([a](double v) { return v > 0 ? v : a * v; });
  if (use_keep) h = h.cwiseProduct(keep);
  const Eigen::MatrixXd out = (w2 * h).colwise() + b2;

  const Eigen::MatrixXd err = out - targets;
  const double count = static_cast<double>(err.size());
  g.loss = err.squaredNorm() / count;
  const Eigen::MatrixXd d_out = err * (2.0 / count);
  g.w2.noalias() = d_out * h.transpose();
  g.b2 = d_out.rowwise().sum();
  Eigen::MatrixXd d_h = w2.transpose() * d_out;
  if (use_keep) d_h = d_h.cwiseProduct(keep);
  const Eigen::MatrixXd d_z = d_h.cwiseProduct(z.unaryExpr([a](double v) { return v > 0 ? 1.0 : a; }));
  g.w1.noalias() = d_z * y.transpose();
  g.b1 = d_z.rowwise().sum();
  if (config_.layer_norm) {
    const Eigen::MatrixXd d_y = w1.transpose() * d_z;
    g.gamma = d_y.cwiseProduct(xhat).rowwise().sum();
    g.beta = d_y.rowwise().sum();
  } else {
    g.gamma = Eigen::VectorXd::Zero(gamma.size());
    g.beta = Eigen::VectorXd::Zero(beta.size());
  }
}

double Mlp::loss(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, const Eigen::MatrixXd& keep) const {
  if (keep.size() == 0) return (predict(inputs) - targets).squaredNorm() / static_cast<double>(targets.size());
  return gradients(inputs, targets, keep).loss;
}

void Mlp::apply_adam(const MlpGradients& g) {
  ++step_;
  const double b1c = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double b2c = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  const double lr = config_.learning_rate;
  const double eps = config_.adam_epsilon;
  const double beta1 = config_.beta1, beta2 = config_.beta2;
  auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
    double* p = param.data();
    double* pm = m.data();
    double* pv = v.data();
    const double* pg = grad.data();
    const Eigen::Index n = param.size();
    for (Eigen::Index i = 0; i < n; ++i) {
      pm[i] = beta1 * pm[i] + (1.0 - beta1) * pg[i];
      pv[i] = beta2 * pv[i] + (1.0 - beta2) * pg[i] * pg[i];
      p[i] -= lr * (pm[i] / b1c) / (std::sqrt(pv[i] / b2c) + eps);
    }
  };

  if (config_.layer_norm) {
    update(gamma, m_.gamma, v_.gamma, g.gamma);
    update(beta, m_.beta, v_.beta, g.beta);
  }
  update(w1, m_.w1, v_.w1, g.w1);
  update(b1, m_.b1, v_.b1, g.b1);
  update(w2, m_.w2, v_.w2, g.w2);
  update(b2, m_.b2, v_.b2, g.b2);
}

double Mlp::train_step(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
  const Eigen::MatrixXd keep =
      config_.dropout > 0.0 ? sample_dropout(static_cast<std::size_t>(inputs.cols())) : Eigen::MatrixXd();
  gradients_into(inputs, targets, keep, workspace_);
  apply_adam(workspace_);
  return workspace_.loss;
}

void Mlp::save(const std::string& path) const {
  snapshot::Writer w(path, "mlp");
  w.u64(config_.input_dim);
  w.u64(config_.hidden);
  w.u64(config_.output_dim);
  w.f64(config_.leaky_slope);
  w.f64(config_.dropout);
  w.u64(config_.layer_norm ? 1 : 0);
  w.f64(config_.layer_norm_epsilon);
  w.f64(config_.learning_rate);
  w.f64(config_.beta1);
  w.f64(config_.beta2);
  w.f64(config_.adam_epsilon);
  w.u64(config_.seed);
  w.u64(step_);
  std::ostringstream rng;
  rng << rng_;
  w.str(rng.str());
  const Moments params{gamma, beta, w1, b1, w2, b2};
  for (const Moments* mo : {&params, &m_, &v_}) {
    w.f64s(flat(mo->gamma));
    w.f64s(flat(mo->beta));
    w.f64s(flat(mo->w1));
    w.f64s(flat(mo->b1));
    w.f64s(flat(mo->w2));
    w.f64s(flat(mo->b2));
  }
  w.close();
}

Mlp Mlp::load(const std::string& path) {
  snapshot::Reader r(path, "mlp");
  MlpConfig c;
  c.input_dim = r.u64();
  c.hidden = r.u64();
  c.output_dim = r.u64();
  c.leaky_slope = r.f64();
  c.dropout = r.f64();
  c.layer_norm = r.u64() != 0;
  c.layer_norm_epsilon = r.f64();
  c.learning_rate = r.f64();
  c.beta1 = r.f64();
  c.beta2 = r.f64();
  c.adam_epsilon = r.f64();
  c.seed = r.u64();
  Mlp m(c);
  m.step_ = r.u64();
  std::istringstream rng(r.str());
  rng >> m.rng_;
  const std::size_t d = c.input_dim, h = c.hidden, o = c.output_dim;
  auto read_set = [&](Eigen::VectorXd& g, Eigen::VectorXd& b, Eigen::MatrixXd& w1, Eigen::VectorXd& b1,
                      Eigen::MatrixXd& w2, Eigen::VectorXd& b2) {
    g = shaped(r.f64s(), d, 1);
    b = shaped(r.f64s(), d, 1);
    w1 = shaped(r.f64s(), h, d);
    b1 = shaped(r.f64s(), h, 1);
    w2 = shaped(r.f64s(), o, h);
    b2 = shaped(r.f64s(), o, 1);
  };
  read_set(m.gamma, m.beta, m.w1, m.b1, m.w2, m.b2);
  read_set(m.m_.gamma, m.m_.beta, m.m_.w1, m.m_.b1, m.m_.w2, m.m_.b2);
  read_set(m.v_.gamma, m.v_.beta, m.v_.w1, m.v_.b1, m.v_.w2, m.v_.b2);
  return m;
}

bool operator==(const Mlp& a, const Mlp& b) {
  auto same = [](const auto& x, const auto& y) {
    return x.gamma == y.gamma && x.beta == y.beta && x.w1 == y.w1 && x.b1 == y.b1 && x.w2 == y.w2 && x.b2 == y.b2;
  };
  return a.step_ == b.step_ && a.rng_ == b.rng_ && same(a, b) && same(a.m_, b.m_) && same(a.v_, b.v_);
}

// ---------------------------------------------------------------------------

SplitInputEvaluator::SplitInputEvaluator(const Mlp& model, const Eigen::MatrixXd& actions) : model_(&model) {
  const auto& c = model.config();
  if (c.output_dim != 1) throw ContractViolation("split evaluator: scalar output required");
  const Eigen::Index action_dim = actions.rows();
  if (action_dim <= 0 || static_cast<std::size_t>(action_dim) >= c.input_dim)
    throw ContractViolation("split evaluator: action dimension does not fit the input");
  context_dim_ = c.input_dim - static_cast<std::size_t>(action_dim);
  const auto cd = static_cast<Eigen::Index>(context_dim_);

  if (c.layer_norm) {
    gamma_context_ = model.gamma.head(cd);
    const Eigen::MatrixXd scaled_actions = model.gamma.tail(action_dim).asDiagonal() * actions;
    action_drive_.noalias() = model.w1.rightCols(action_dim) * scaled_actions;
    w1_gamma_.noalias() = model.w1 * model.gamma;
    bias_.noalias() = model.w1 * model.beta;
    bias_ += model.b1;
  } else {
    gamma_context_ = Eigen::VectorXd::Ones(cd);
    action_drive_.noalias() = model.w1.rightCols(action_dim) * actions;
    w1_gamma_ = Eigen::VectorXd::Zero(model.b1.size());
    bias_ = model.b1;
  }
  action_sum_ = actions.colwise().sum().transpose();
  action_sq_ = actions.colwise().squaredNorm().transpose();
}

std::vector<double> SplitInputEvaluator::evaluate(std::span<const double> context) const {
  if (context.size() != context_dim_) throw ContractViolation("split evaluator: context has the wrong length");
  const Eigen::Map<const Eigen::MatrixXd> x(context.data(), static_cast<Eigen::Index>(context.size()), 1);
  const Eigen::MatrixXd q = evaluate(x);
  return {q.data(), q.data() + q.size()};
}

Eigen::MatrixXd SplitInputEvaluator::evaluate(const Eigen::Ref<const Eigen::MatrixXd>& contexts) const {
  if (static_cast<std::size_t>(contexts.rows()) != context_dim_)
    throw ContractViolation("split evaluator: context has the wrong length");
  const auto& c = model_->config();
  const auto cd = static_cast<Eigen::Index>(context_dim_);
  const Eigen::MatrixXd scaled = gamma_context_.asDiagonal() * contexts;
  Eigen::MatrixXd context_drive;
  context_drive.noalias() = model_->w1.leftCols(cd) * scaled;

  const double n = static_cast<double>(c.input_dim);
  const double a = c.leaky_slope;
  const Eigen::VectorXd w2 = model_->w2.row(0).transpose();
  const double b2 = model_->b2(0);
  const double* pw2 = w2.data();
  const double* pwg = w1_gamma_.data();
  const double* pb = bias_.data();
  const Eigen::Index hidden = context_drive.rows();
  const Eigen::Index actions = action_drive_.cols();

  Eigen::MatrixXd out(actions, contexts.cols());
  for (Eigen::Index j = 0; j < contexts.cols(); ++j) {
    const double cs = contexts.col(j).sum(), cq = contexts.col(j).squaredNorm();
    const double* cdrive = context_drive.col(j).data();
    for (Eigen::Index k = 0; k < actions; ++k) {
      double scale = 1.0, mean = 0.0;
      if (c.layer_norm) {
        mean = (cs + action_sum_(k)) / n;
        const double var = (cq + action_sq_(k)) / n - mean * mean;
        scale = 1.0 / std::sqrt(std::max(var, 0.0) + c.layer_norm_epsilon);
      }
      const double* adrive = action_drive_.col(k).data();
      double acc = 0.0;
      for (Eigen::Index i = 0; i < hidden; ++i) {
        const double z = (cdrive[i] + adrive[i] - mean * pwg[i]) * scale + pb[i];
        acc += pw2[i] * std::max(z, a * z);
      }
      out(k, j) = acc + b2;
    }
  }
  return out;
}

}  // namespace cls
