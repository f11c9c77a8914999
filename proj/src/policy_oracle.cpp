#include "cls/policy_oracle.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <unordered_map>

#include "cls/encoding.hpp"
#include "cls/errors.hpp"

namespace cls {

namespace {

constexpr std::array<Answer, 3> kAnswers = {Answer::Yes, Answer::No, Answer::Unknown};

/// Expected reward of an external action under independent fact draws.
double expected_reward(const FixtureTable& fixture, const std::string& cls, std::size_t action) {
  auto yes = [&](Fact f) { return fixture.at(cls, dynamics_questions()[f]).yes; };
  switch (action) {
    case Approach: return yes(Friendly) - yes(EatsMice);
    case Eat: return yes(Edible) - yes(EatsMice) - yes(Poisonous);
    case Hide: return yes(EatsMice);
    case RunAway: return -yes(ChasesMice);
    default: return 0.0;
  }
}

void push_token(Window& w, const std::string& token) {
  if (w.size() == kContextWindow) w.erase(w.begin() + 1);
  w.push_back(token);
}

struct EvalState {
  Window window;
  std::array<std::optional<Answer>, kNumPerceptualActions> cache{};
  std::size_t steps = 0;
};

void evaluate_from(const PolicyFn& policy, const FixtureTable& fixture, const std::string& cls,
                   const std::array<double, kNumActions>& rewards, const EvalState& s, double p, ClassValue& out) {
  const std::size_t a = policy(s.window);
  if (a >= kNumActions) throw ContractViolation("policy returned an invalid action");
  const std::size_t steps = s.steps + 1;
  if (!is_perceptual(a)) {
    if (a == DoNothing) {
      // The window does not change, so a deterministic policy idles until timeout.
      out.length += p * static_cast<double>(kMaxEpisodeSteps - s.steps);
      return;
    }
    out.reward += p * rewards[a];
    out.length += p * static_cast<double>(steps);
    return;
  }
  const std::size_t qi = a - kNumExternalActions;
  auto advance = [&](Answer t, double pt) {
    if (pt <= 0.0) return;
    if (steps == kMaxEpisodeSteps) {
      out.length += pt * static_cast<double>(steps);
      return;
    }
    EvalState next = s;
    next.steps = steps;
    next.cache[qi] = t;
    push_token(next.window, token_of(t));
    evaluate_from(policy, fixture, cls, rewards, next, pt, out);
  };
  if (s.cache[qi]) {
    advance(*s.cache[qi], p);
    return;
  }
  const auto& d = fixture.at(cls, perceptual_questions()[qi]);
  for (Answer t : kAnswers) advance(t, p * d.probability(t));
}

/// Per-broad-class planning tree. A node is the set of questions asked
/// together with their answers; the probability mass of each class reaching
/// it does not depend on the order in which they were asked.
class Planner {
 public:
  enum class Mode { Ratio, Discounted };

  Planner(const std::vector<std::string>& classes, const std::vector<double>& mass, const FixtureTable& fixture,
          const OracleOptions& options)
      : classes_(classes), root_mass_(mass), options_(options) {
    for (const auto& c : classes) {
      std::array<double, kNumActions> r{};
      for (std::size_t a = 0; a < kNumExternalActions; ++a) r[a] = expected_reward(fixture, c, a);
      rewards_.push_back(r);
      std::array<std::array<double, 3>, kNumPerceptualActions> q{};
      for (std::size_t i = 0; i < kNumPerceptualActions; ++i) {
        const auto& d = fixture.at(c, perceptual_questions()[i]);
        for (std::size_t t = 0; t < 3; ++t) q[i][t] = d.probability(kAnswers[t]);
      }
      answers_.push_back(q);
    }
    if (options_.allowed_questions.empty())
      for (std::size_t a = kNumExternalActions; a < kNumActions; ++a) allowed_.push_back(a);
    else
      for (std::size_t a : options_.allowed_questions) {
        if (!is_perceptual(a)) throw ContractViolation("allowed_questions must be perceptual actions");
        allowed_.push_back(a);
      }
  }

  double solve(Mode mode, double lambda, double gamma) {
    mode_ = mode;
    lambda_ = lambda;
    gamma_ = gamma;
    memo_.clear();
    return value(0, 0, root_mass_).value;
  }

  /// Extracts the chosen action at every reachable window.
  void extract(const std::string& broad, Policy& policy) {
    Window w{broad};
    walk(0, 0, root_mass_, w, policy);
  }

 private:
  struct Choice {
    double value;
    std::size_t action;
  };

  static std::uint32_t key(std::uint32_t mask, std::uint32_t codes) { return (mask << 20) | codes; }

  Choice value(std::uint32_t mask, std::uint32_t codes, const std::vector<double>& mass) {
    const auto k = key(mask, codes);
    if (auto it = memo_.find(k); it != memo_.end()) return it->second;
    double total = 0;
    for (double m : mass) total += m;
    Choice best{0.0, DoNothing};
    if (total <= 0.0) return memo_[k] = best;

    const auto depth = static_cast<std::size_t>(std::popcount(mask));
    bool have = false;
    auto consider = [&](double v, std::size_t a) {
      if (!have || v > best.value + 1e-12) best = {v, a};
      have = true;
    };
    for (std::size_t a = Approach; a < kNumExternalActions; ++a) {
      double v = 0;
      for (std::size_t c = 0; c < mass.size(); ++c) v += mass[c] * rewards_[c][a];
      if (mode_ == Mode::Ratio) v -= lambda_ * total;
      consider(v, a);
    }
    consider(mode_ == Mode::Ratio ? -lambda_ * static_cast<double>(kMaxEpisodeSteps - depth) * total : 0.0,
             DoNothing);
    if (depth < options_.max_questions) {
      for (std::size_t a : allowed_) {
        const std::size_t qi = a - kNumExternalActions;
        if (mask & (1u << qi)) continue;
        double v = 0;
        for (std::size_t t = 0; t < 3; ++t) {
          auto child = mass;
          for (std::size_t c = 0; c < mass.size(); ++c) child[c] *= answers_[c][qi][t];
          v += value(mask | (1u << qi), codes | static_cast<std::uint32_t>(t) << (2 * qi), child).value;
        }
        v = mode_ == Mode::Ratio ? v - lambda_ * total : gamma_ * v;
        consider(v, a);
      }
    }
    return memo_[k] = best;
  }

  void walk(std::uint32_t mask, std::uint32_t codes, const std::vector<double>& mass, Window& w, Policy& policy) {
    double total = 0;
    for (double m : mass) total += m;
    if (total <= 0.0) return;
    const std::size_t a = value(mask, codes, mass).action;
    policy[w] = a;
    if (!is_perceptual(a)) return;
    const std::size_t qi = a - kNumExternalActions;
    for (std::size_t t = 0; t < 3; ++t) {
      auto child = mass;
      for (std::size_t c = 0; c < mass.size(); ++c) child[c] *= answers_[c][qi][t];
      w.push_back(token_of(kAnswers[t]));
      walk(mask | (1u << qi), codes | static_cast<std::uint32_t>(t) << (2 * qi), child, w, policy);
      w.pop_back();
    }
  }

  std::vector<std::string> classes_;
  std::vector<double> root_mass_;
  OracleOptions options_;
  std::vector<std::size_t> allowed_;
  std::vector<std::array<double, kNumActions>> rewards_;
  std::vector<std::array<std::array<double, 3>, kNumPerceptualActions>> answers_;
  std::unordered_map<std::uint32_t, Choice> memo_;
  Mode mode_ = Mode::Ratio;
  double lambda_ = 0.0;
  double gamma_ = 0.9;
};

struct BroadGroup {
  std::string broad;
  std::vector<std::string> classes;
  std::vector<double> mass;
};

std::vector<BroadGroup> group_by_broad(const ClassCatalog& catalog, const FixtureTable& fixture,
                                       const OracleOptions& options) {
  if (catalog.empty()) throw ContractViolation("oracle: empty catalog");
  if (options.max_questions > kContextWindow - 1)
    throw ContractViolation("oracle: more questions than the window can hold");
  fixture.require_coverage(catalog.names(), fixture_questions());
  double total = 0;
  for (const auto& c : catalog.entries()) total += c.weight;
  std::vector<BroadGroup> groups;
  for (const auto& c : catalog.entries()) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const BroadGroup& g) { return g.broad == c.broad; });
    if (it == groups.end()) it = groups.insert(groups.end(), BroadGroup{c.broad, {}, {}});
    it->classes.push_back(c.name);
    it->mass.push_back(c.weight / total);
  }
  return groups;
}

}  // namespace

double PolicyValue::reward_per_step(const std::vector<std::string>& classes) const {
  double r = 0, l = 0;
  auto add = [&](const std::string& c) {
    const auto it = per_class.find(c);
    if (it == per_class.end()) throw ContractViolation("policy value has no class " + c);
    r += weights.at(c) * it->second.reward;
    l += weights.at(c) * it->second.length;
  };
  if (classes.empty())
    for (const auto& [c, _] : per_class) add(c);
  else
    for (const auto& c : classes) add(c);
  return l > 0 ? r / l : 0.0;
}

PolicyValue evaluate_policy(const PolicyFn& policy, const ClassCatalog& catalog, const FixtureTable& fixture) {
  fixture.require_coverage(catalog.names(), fixture_questions());
  PolicyValue v;
  for (const auto& c : catalog.entries()) {
    std::array<double, kNumActions> rewards{};
    for (std::size_t a = 0; a < kNumExternalActions; ++a) rewards[a] = expected_reward(fixture, c.name, a);
    EvalState root;
    root.window = {c.broad};
    ClassValue cv;
    evaluate_from(policy, fixture, c.name, rewards, root, 1.0, cv);
    v.per_class[c.name] = cv;
    v.weights[c.name] = c.weight;
  }
  return v;
}

PolicyValue evaluate_policy(const Policy& policy, const ClassCatalog& catalog, const FixtureTable& fixture) {
  return evaluate_policy(
      [&policy](const Window& w) {
        const auto it = policy.find(w);
        return it == policy.end() ? static_cast<std::size_t>(DoNothing) : it->second;
      },
      catalog, fixture);
}

OracleResult optimal_policy_oracle(const ClassCatalog& catalog, const FixtureTable& fixture,
                                   const OracleOptions& options) {
  const auto groups = group_by_broad(catalog, fixture, options);
  std::vector<Planner> planners;
  for (const auto& g : groups) planners.emplace_back(g.classes, g.mass, fixture, options);

  OracleResult result;
  double lambda = 0.0;
  for (int iter = 1; iter <= 100; ++iter) {
    double gain = 0;
    for (auto& p : planners) gain += p.solve(Planner::Mode::Ratio, lambda, 0.0);
    Policy policy;
    for (std::size_t i = 0; i < groups.size(); ++i) planners[i].extract(groups[i].broad, policy);
    PolicyValue value = evaluate_policy(policy, catalog, fixture);
    const double ratio = value.reward_per_step();
    result.iterations = iter;
    if (iter == 1 || ratio > result.reward_per_step) {
      result.policy = std::move(policy);
      result.value = std::move(value);
      result.reward_per_step = ratio;
    }
    if (gain <= 1e-12 || ratio <= lambda + 1e-12) break;
    lambda = ratio;
  }
  return result;
}

OracleResult optimal_policy_oracle(const ClassCatalog& catalog, const LtmOracle& oracle,
                                   const OracleOptions& options) {
  const FixtureTable* table = oracle.fixture();
  if (!table) throw ConfigError("the policy oracle needs a fixture-backed long-term memory");
  return optimal_policy_oracle(catalog, *table, options);
}

OracleResult discounted_optimal_policy(const ClassCatalog& catalog, const FixtureTable& fixture, double gamma,
                                       const OracleOptions& options) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ContractViolation("discount must lie in [0, 1)");
  const auto groups = group_by_broad(catalog, fixture, options);
  OracleResult result;
  for (const auto& g : groups) {
    Planner p(g.classes, g.mass, fixture, options);
    p.solve(Planner::Mode::Discounted, 0.0, gamma);
    p.extract(g.broad, result.policy);
  }
  result.value = evaluate_policy(result.policy, catalog, fixture);
  result.reward_per_step = result.value.reward_per_step();
  result.iterations = 1;
  return result;
}

}  // namespace cls
