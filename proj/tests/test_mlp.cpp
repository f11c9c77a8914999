#include <cmath>
#include <filesystem>
#include <random>

#include "cls/errors.hpp"
#include "cls/mlp.hpp"
#include "doctest.h"

using namespace cls;

namespace {

Eigen::MatrixXd random_inputs(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = n(rng);
  return m;
}

MlpConfig small(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
  MlpConfig c;
  c.input_dim = in;
  c.hidden = hidden;
  c.output_dim = out;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("zero output layer gives zero output") {
  Mlp m(small(20, 30, 2, 1));
  m.w2.setZero();
  m.b2.setZero();
  const Eigen::MatrixXd x = random_inputs(20, 5, 2);
  CHECK(m.predict(x).isZero(0.0));
  std::vector<double> one(x.col(0).data(), x.col(0).data() + 20);
  CHECK(m.forward(one, true).isZero(0.0));
}

TEST_CASE("evaluation mode is deterministic") {
  Mlp m(small(20, 30, 1, 3));
  const std::vector<double> x(20, 0.5);
  std::vector<double> y(20);
  for (std::size_t i = 0; i < 20; ++i) y[i] = std::sin(static_cast<double>(i));
  CHECK(m.forward(y) == m.forward(y));
  CHECK_THROWS_AS(m.forward(std::vector<double>(19, 0.0)), ContractViolation);
}

TEST_CASE("hand-computed forward pass") {
  MlpConfig c = small(2, 2, 1, 0);
  c.leaky_slope = 0.1;
  Mlp m(c);
  // x = (1, 3): mean 2, variance 1, so the normalised input is (-1, 1).
  m.gamma << 2.0, 0.5;
  m.beta << 0.0, 1.0;  // y = (-2, 1.5)
  m.w1 << 1.0, 1.0,    // z0 = -0.5 + 0.25 = -0.25  -> -0.025
      -1.0, 2.0;       // z1 = 5.0 - 0.5 = 4.5      -> 4.5
  m.b1 << 0.25, -0.5;
  m.w2 << 2.0, -1.0;
  m.b2 << 0.5;  // out = -0.05 - 4.5 + 0.5 = -4.05
  const double eps_factor = 1.0 / std::sqrt(1.0 + c.layer_norm_epsilon);
  const double y0 = -2.0 * eps_factor, y1 = 0.5 * eps_factor + 1.0;
  const double z0 = y0 + y1 + 0.25, z1 = -y0 + 2.0 * y1 - 0.5;
  const double expected = 2.0 * (z0 > 0 ? z0 : 0.1 * z0) - (z1 > 0 ? z1 : 0.1 * z1) + 0.5;
  CHECK(std::abs(expected + 4.05) < 1e-8);
  const std::vector<double> x{1.0, 3.0};
  CHECK(std::abs(m.forward(x)(0) - expected) < 1e-9);
}

TEST_CASE("layer norm statistics") {
  Mlp m(small(800, 4, 1, 5));
  Eigen::MatrixXd x = random_inputs(800, 20, 6) * 3.0;
  x.array() += 7.0;
  const Eigen::MatrixXd n = m.normalize(x);
  for (Eigen::Index j = 0; j < n.cols(); ++j) {
    const double mean = n.col(j).mean();
    const double var = (n.col(j).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("dropout rate") {
  Mlp m(small(4, 10000, 1, 7));
  const Eigen::MatrixXd keep = m.sample_dropout(1);
  const double dropped = static_cast<double>((keep.array() == 0.0).count()) / 10000.0;
  CHECK(std::abs(dropped - 0.25) < 0.02);
  CHECK((keep.array() == 0.0 || (keep.array() - 1.0 / 0.75).abs() < 1e-15).all());
}

TEST_CASE("analytic gradients match central finite differences") {
  for (bool layer_norm : {true, false}) {
    MlpConfig c = small(3, 2, 1, 11);
    c.layer_norm = layer_norm;
    Mlp m(c);
    m.gamma << 1.2, 0.8, -0.7;
    m.beta << 0.1, -0.2, 0.3;
    const Eigen::MatrixXd x = random_inputs(3, 4, 12);
    const Eigen::MatrixXd t = random_inputs(1, 4, 13);
    Eigen::MatrixXd keep(2, 4);
    keep << 1.0 / 0.75, 0.0, 1.0 / 0.75, 1.0 / 0.75, 1.0 / 0.75, 1.0 / 0.75, 0.0, 1.0 / 0.75;
    const MlpGradients g = m.gradients(x, t, keep);

    const double h = 1e-5;
    double worst = 0.0;
    std::size_t checked = 0;
    auto check_tensor = [&](auto& param, const auto& analytic) {
      for (Eigen::Index i = 0; i < param.size(); ++i) {
        const double saved = param.data()[i];
        param.data()[i] = saved + h;
        const double up = m.loss(x, t, keep);
        param.data()[i] = saved - h;
        const double down = m.loss(x, t, keep);
        param.data()[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double a = analytic.data()[i];
        const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(a - numeric) / scale);
        ++checked;
      }
    };
    if (layer_norm) {
      check_tensor(m.gamma, g.gamma);
      check_tensor(m.beta, g.beta);
    }
    check_tensor(m.w1, g.w1);
    check_tensor(m.b1, g.b1);
    check_tensor(m.w2, g.w2);
    check_tensor(m.b2, g.b2);
    MESSAGE("layer_norm=" << layer_norm << " params=" << checked << " max relative error " << worst);
    CHECK(checked >= 10);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("zero error leaves parameters essentially unchanged") {
  MlpConfig c = small(50, 40, 1, 17);
  c.dropout = 0.0;
  Mlp m(c);
  const Eigen::MatrixXd x = random_inputs(50, 16, 18);
  const Eigen::MatrixXd t = m.predict(x);
  const Mlp before = m;
  CHECK(m.train_step(x, t) == doctest::Approx(0.0).epsilon(1e-20));
  const double delta = (m.w1 - before.w1).norm() + (m.w2 - before.w2).norm() + (m.b1 - before.b1).norm() +
                       (m.b2 - before.b2).norm() + (m.gamma - before.gamma).norm() + (m.beta - before.beta).norm();
  CHECK(delta < 1e-6);
}

TEST_CASE("fits a single pair") {
  Mlp m(small(800, 2000, 1, 19));
  const Eigen::MatrixXd x = random_inputs(800, 1, 20);
  Eigen::MatrixXd t(1, 1);
  t << 0.7;
  for (int i = 0; i < 2000; ++i) m.train_step(x, t);
  const double loss = m.loss(x, t);
  MESSAGE("eval loss after 2000 steps: " << loss);
  CHECK(loss < 1e-4);
}

TEST_CASE("identical batches give identical parameters") {
  Mlp a(small(30, 20, 1, 23)), b(small(30, 20, 1, 23));
  for (int i = 0; i < 20; ++i) {
    const Eigen::MatrixXd x = random_inputs(30, 16, 100 + static_cast<std::uint64_t>(i));
    const Eigen::MatrixXd t = random_inputs(1, 16, 200 + static_cast<std::uint64_t>(i));
    a.train_step(x, t);
    b.train_step(x, t);
  }
  CHECK(a == b);
  CHECK(a.updates() == 20);
}

TEST_CASE("snapshot round trip") {
  Mlp m(small(30, 20, 1, 29));
  m.train_step(random_inputs(30, 4, 1), random_inputs(1, 4, 2));
  const auto path = std::filesystem::temp_directory_path() / "cls_test_mlp.snap";
  m.save(path.string());
  Mlp back = Mlp::load(path.string());
  std::filesystem::remove(path);
  CHECK(back == m);
  // The dropout generator resumes where it left off.
  const Eigen::MatrixXd x = random_inputs(30, 4, 3), t = random_inputs(1, 4, 4);
  m.train_step(x, t);
  back.train_step(x, t);
  CHECK(back == m);
}

TEST_CASE("split evaluator matches the direct forward pass") {
  for (bool layer_norm : {true, false}) {
    MlpConfig c = small(800, 2000, 1, 31);
    c.layer_norm = layer_norm;
    Mlp m(c);
    m.gamma = random_inputs(800, 1, 32).col(0);
    m.beta = random_inputs(800, 1, 33).col(0) * 0.1;
    const Eigen::MatrixXd actions = random_inputs(200, 15, 34);
    const SplitInputEvaluator eval(m, actions);
    for (std::uint64_t s = 0; s < 3; ++s) {
      const Eigen::VectorXd context = random_inputs(600, 1, 40 + s).col(0);
      const auto fast = eval.evaluate({context.data(), 600});
      Eigen::MatrixXd full(800, 15);
      for (Eigen::Index k = 0; k < 15; ++k) full.col(k) << context, actions.col(k);
      const Eigen::MatrixXd direct = m.predict(full);
      for (Eigen::Index k = 0; k < 15; ++k) CHECK(std::abs(fast[static_cast<std::size_t>(k)] - direct(0, k)) < 1e-9);
    }
  }
}

TEST_CASE("batched split evaluation matches single contexts") {
  Mlp m(small(80, 50, 1, 41));
  m.gamma = random_inputs(80, 1, 42).col(0);
  const Eigen::MatrixXd actions = random_inputs(20, 15, 43);
  const SplitInputEvaluator eval(m, actions);
  const Eigen::MatrixXd contexts = random_inputs(60, 4, 44);
  const Eigen::MatrixXd batch = eval.evaluate(contexts);
  REQUIRE(batch.rows() == 15);
  REQUIRE(batch.cols() == 4);
  for (Eigen::Index j = 0; j < 4; ++j) {
    const auto one = eval.evaluate(std::span<const double>(contexts.col(j).data(), 60));
    for (Eigen::Index k = 0; k < 15; ++k) CHECK(batch(k, j) == doctest::Approx(one[static_cast<std::size_t>(k)]));
  }
}
