#include <cmath>
#include <map>

#include "cls/agent.hpp"
#include "cls/errors.hpp"
#include "doctest.h"

using namespace cls;

namespace {

FixtureTable desk() { return FixtureTable::load(std::string(CLS_DATA_DIR) + "/desk_fixture.json"); }

std::shared_ptr<const Encoders> encoders(std::uint64_t seed = 0) { return std::make_shared<const Encoders>(seed); }

MlpConfig small_net() {
  MlpConfig c;
  c.hidden = 48;
  c.seed = 3;
  return c;
}

/// Scores 1 for the action a policy picks and 0 elsewhere; unknown windows
/// tie everywhere and so idle.
class PolicyEstimator : public QEstimator {
 public:
  explicit PolicyEstimator(Policy p) : policy_(std::move(p)) {}
  std::string kind() const override { return "policy"; }
  QVector q_values(const Window& w) const override {
    QVector q{};
    if (auto it = policy_.find(w); it != policy_.end()) q[it->second] = 1.0;
    return q;
  }
  void update(const Window&, std::size_t, double) override {}
  std::uint64_t parameter_updates() const override { return 0; }
  void save(const std::string&) const override {}

 private:
  Policy policy_;
};

class CountingObserver : public TrainingObserver {
 public:
  void on_step(const StepRecord& r) override {
    ++steps;
    classes[r.cls]++;
  }
  void on_eval(const EvalRecord&) override { ++evals; }
  std::uint64_t steps = 0, evals = 0;
  std::map<std::string, int> classes;
};

const Window kEdibleRoot{"Maybe edible object"};

}  // namespace

TEST_CASE("fresh sdm estimator reads zero everywhere") {
  SdmQEstimator est(encoders(), {}, 1);
  for (const Window& w : {kEdibleRoot, Window{"A bird", "yes", "no"}})
    for (double q : est.q_values(w)) CHECK(q == 0.0);
}

TEST_CASE("one-shot write moves other actions only through shared cells") {
  SdmEstimatorConfig cfg;
  cfg.learning_rate = 1.0;
  SdmQEstimator est(encoders(), cfg, 2);
  est.update(kEdibleRoot, Eat, 1.0);
  const QVector q = est.q_values(kEdibleRoot);
  CHECK(q[Eat] == doctest::Approx(1.0).epsilon(1e-12));
  const Clique& eat = est.clique(kEdibleRoot, Eat);
  for (std::size_t a = 0; a < kNumActions; ++a) {
    if (a == Eat) continue;
    const double expected = static_cast<double>(eat.overlap(est.clique(kEdibleRoot, a))) / 32.0;
    CHECK(q[a] == doctest::Approx(expected).epsilon(1e-12));
  }
  // Keys whose cliques share no cell with the written one are untouched.
  int disjoint = 0;
  const std::vector<Window> others{{"A bird"}, {"A plant"}, {"A land animal"}, {"A bird", "yes"},
                                   {"A plant", "no", "?"}};
  for (const auto& w : others) {
    const QVector qw = est.q_values(w);
    for (std::size_t a = 0; a < kNumActions; ++a)
      if (eat.overlap(est.clique(w, a)) == 0) {
        CHECK(qw[a] == 0.0);
        ++disjoint;
      }
  }
  CHECK(disjoint > 0);
}

TEST_CASE("mlp estimates are repeatable") {
  MlpQEstimator est(encoders(), small_net());
  const QVector a = est.q_values(Window{"A bird", "no"});
  const QVector b = est.q_values(Window{"A bird", "no"});
  CHECK(a == b);
  // The split evaluator agrees with a full forward pass on the concatenated input.
  Mlp copy = est.model();
  for (std::size_t act : {std::size_t{0}, std::size_t{6}, std::size_t{14}}) {
    const Eigen::VectorXd x = est.input(Window{"A bird", "no"}, act);
    CHECK(copy.forward(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())))(0) ==
          doctest::Approx(a[act]).epsilon(1e-9));
  }
}

TEST_CASE("greedy and epsilon-greedy selection") {
  std::mt19937_64 rng(5);
  QVector q{};
  q[Hide] = 2.0;
  for (int i = 0; i < 100; ++i) CHECK(select_action(q, 0.0, rng) == Hide);

  QVector tie{};
  tie[2] = tie[7] = 1.0;
  CHECK(select_action(tie, 0.0, rng) == 2);
  CHECK(greedy_action(QVector{}) == DoNothing);

  std::array<int, kNumActions> counts{};
  const int draws = 15000;
  for (int i = 0; i < draws; ++i) ++counts[select_action(q, 1.0, rng)];
  for (int c : counts) CHECK(std::abs(c / double(draws) - 1.0 / 15.0) < 0.01);

  CHECK_THROWS_AS(select_action(q, 1.5, rng), ContractViolation);
  CHECK_THROWS_AS(select_action(q, -0.1, rng), ContractViolation);
}

TEST_CASE("greedy selection draws nothing from the generator") {
  std::mt19937_64 a(9), b(9);
  select_action(QVector{}, 0.0, a);
  CHECK(a() == b());
}

TEST_CASE("temporal-difference targets") {
  QVector ones;
  ones.fill(1.0);
  CHECK(td_target(1.0, true, ones, 0.9) == 1.0);
  CHECK(td_target(0.0, false, ones, 0.9) == doctest::Approx(0.9));
  CHECK(td_target(0.0, false, QVector{}, 0.9) == 0.0);
  QVector mixed{};
  mixed[3] = -1.0;
  mixed[4] = 0.5;
  CHECK(td_target(-1.0, false, mixed, 0.9) == doctest::Approx(-0.55));
}

TEST_CASE("zero training steps change nothing") {
  SdmQEstimator est(encoders(), {}, 1);
  FixtureOracle oracle(desk(), true);
  TrainingOptions opt;
  opt.batch_steps = 0;
  CountingObserver obs;
  const TrainingSummary s = run_training(est, ClassCatalog::garden(), oracle, opt, {}, &obs);
  CHECK(s.transitions == 0);
  CHECK(obs.steps == 0);
  CHECK(est.transitions() == 0);
  CHECK(est.parameter_updates() == 0);
}

TEST_CASE("fresh estimator idles and earns nothing") {
  SdmQEstimator est(encoders(), {}, 1);
  FixtureOracle oracle(desk(), true);
  const EvaluationResult r = run_evaluation(est, ClassCatalog::garden(), oracle, 1000, 4);
  CHECK(r.steps == 1000);
  CHECK(r.mean_reward == 0.0);
  CHECK(r.episodes == 100);
}

TEST_CASE("single rewarding class is learned quickly") {
  SdmQEstimator est(encoders(), {}, 1);
  FixtureOracle oracle(desk(), true);
  const ClassCatalog cheese = ClassCatalog::garden().only({"Cheese"});
  TrainingOptions opt;
  opt.batch_steps = 2000;
  opt.seed = 11;
  opt.eval_every = 500;
  const TrainingSummary s = run_training(est, cheese, oracle, opt, {{"cheese", cheese}});
  REQUIRE(!s.evaluations.empty());
  MESSAGE("final eval " << s.evaluations.back().result.mean_reward);
  CHECK(s.evaluations.back().result.mean_reward >= 0.9);
}

TEST_CASE("each transition is used once") {
  FixtureOracle oracle(desk(), true);
  const ClassCatalog g = ClassCatalog::garden();
  TrainingOptions opt;
  opt.batch_steps = 30;
  opt.eval_every = 0;

  SUBCASE("sdm writes once per transition") {
    for (std::size_t batch : {std::size_t{1}, std::size_t{16}}) {
      SdmQEstimator est(encoders(), {}, 1);
      opt.batch_size = batch;
      CountingObserver obs;
      const TrainingSummary s = run_training(est, g, oracle, opt, {}, &obs);
      CHECK(s.transitions == 30 * batch);
      CHECK(obs.steps == s.transitions);
      CHECK(est.transitions() == s.transitions);
      CHECK(est.parameter_updates() == s.transitions);
    }
  }
  SUBCASE("network steps once per full minibatch") {
    MlpQEstimator est(encoders(), small_net());
    opt.batch_size = 16;
    run_training(est, g, oracle, opt);
    CHECK(est.transitions() == 480);
    CHECK(est.trained_transitions() == 480);
    CHECK(est.parameter_updates() == 30);
    CHECK(est.pending() == 0);
  }
  SUBCASE("partial minibatches wait and block snapshots") {
    MlpQEstimator est(encoders(), small_net());
    for (int i = 0; i < 20; ++i) est.update(kEdibleRoot, Eat, 1.0);
    CHECK(est.parameter_updates() == 1);
    CHECK(est.trained_transitions() == 16);
    CHECK(est.pending() == 4);
    CHECK_THROWS_AS(est.save("/nonexistent/net.bin"), ContractViolation);
  }
}

TEST_CASE("evaluation leaves the estimator untouched") {
  FixtureOracle oracle(desk(), true);
  const ClassCatalog g = ClassCatalog::garden();
  TrainingOptions opt;
  opt.batch_steps = 40;
  opt.eval_every = 0;

  SdmQEstimator sdm(encoders(), {}, 1);
  run_training(sdm, g, oracle, opt);
  const std::vector<double> before = sdm.memory().values();
  const EvaluationResult a = run_evaluation(sdm, g, oracle, 1000, 3);
  CHECK(sdm.memory().values() == before);
  const EvaluationResult b = run_evaluation(sdm, g, oracle, 1000, 3);
  CHECK(a.total_reward == b.total_reward);

  MlpQEstimator mlp(encoders(), small_net());
  run_training(mlp, g, oracle, opt);
  const Mlp net = mlp.model();
  run_evaluation(mlp, g, oracle, 500, 3);
  CHECK(mlp.model() == net);
}

TEST_CASE("same seeds give the same training run") {
  FixtureOracle oracle(desk(), true);
  const ClassCatalog g = ClassCatalog::garden();
  TrainingOptions opt;
  opt.batch_steps = 100;
  opt.seed = 4;
  opt.eval_every = 50;
  auto run = [&] {
    SdmQEstimator est(encoders(7), {}, 8);
    const TrainingSummary s = run_training(est, g, oracle, opt, {{"all", g}});
    return std::make_pair(est.memory().values(), s.evaluations.back().result.total_reward);
  };
  CHECK(run() == run());
}

TEST_CASE("evaluation checkpoints") {
  FixtureOracle oracle(desk(), true);
  const ClassCatalog g = ClassCatalog::garden();
  SdmQEstimator est(encoders(), {}, 1);
  TrainingOptions opt;
  opt.batch_steps = 25;
  opt.eval_steps = 50;

  SUBCASE("periodic and final") {
    opt.eval_every = 10;
    CountingObserver obs;
    const TrainingSummary s = run_training(est, g, oracle, opt, {{"all", g}}, &obs);
    std::vector<std::uint64_t> at;
    for (const auto& e : s.evaluations) at.push_back(e.step);
    CHECK(at == std::vector<std::uint64_t>{0, 10, 20, 25});
    CHECK(obs.evals == 4);
  }
  SUBCASE("explicit schedule") {
    opt.eval_at = {5, 20};
    const TrainingSummary s = run_training(est, g, oracle, opt, {{"a", g}, {"b", g}});
    REQUIRE(s.evaluations.size() == 4);
    CHECK(s.evaluations[0].step == 5);
    CHECK(s.evaluations[1].set == "b");
    CHECK(s.evaluations[3].step == 20);
  }
  SUBCASE("bad options") {
    opt.eval_at = {5, 5};
    CHECK_THROWS_AS(run_training(est, g, oracle, opt), ConfigError);
    opt.eval_at.clear();
    opt.gamma = 1.0;
    CHECK_THROWS_AS(run_training(est, g, oracle, opt), ConfigError);
  }
}

TEST_CASE("oracle-optimal policy earns the oracle value when played") {
  const FixtureTable t = desk();
  ClassCatalog c = ClassCatalog::garden().without({"Deadly nightshade", "Fly agaric mushroom"});
  c.set_weight("Sparrow", 3.0);
  c.set_weight("Pigeon", 3.0);
  const OracleResult opt = optimal_policy_oracle(c, t);
  PolicyEstimator est(opt.policy);

  // Per-class reward and length are fixed under a deterministic fixture, so the
  // ratio estimate over N episodes has variance Var(R - rho L) / (E[L]^2 N).
  double mean_len = 0, var = 0, total = 0;
  for (const auto& e : c.entries()) total += e.weight;
  for (const auto& e : c.entries()) {
    const auto& v = opt.value.per_class.at(e.name);
    mean_len += e.weight / total * v.length;
    const double d = v.reward - opt.reward_per_step * v.length;
    var += e.weight / total * d * d;
  }
  const double episodes = 1000.0 / mean_len;
  const double sigma = std::sqrt(var / episodes) / mean_len;

  FixtureOracle oracle(t, true);
  const EvaluationResult r = run_evaluation(est, c, oracle, 1000, 17);
  MESSAGE("played " << r.mean_reward << " oracle " << opt.reward_per_step << " sigma " << sigma);
  CHECK(std::abs(r.mean_reward - opt.reward_per_step) <= 3 * sigma);
}

TEST_CASE("greedy policy extraction follows the estimator") {
  const FixtureTable t = desk();
  const ClassCatalog c = ClassCatalog::garden().only({"Hawk", "Cheese"});
  Policy p{{{"A bird"}, 6}, {{"A bird", "yes"}, Hide}, {{"Maybe edible object"}, Eat}};
  PolicyEstimator est(p);
  const Policy g = greedy_policy(est, c, t);
  CHECK(g.at({"A bird"}) == 6);
  CHECK(g.at({"A bird", "yes"}) == Hide);
  CHECK(g.at({"Maybe edible object"}) == Eat);
  CHECK(evaluate_policy(g, c, t).reward_per_step() == doctest::Approx(2.0 / 3.0));
}
