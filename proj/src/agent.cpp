#include "cls/agent.hpp"

#include <algorithm>
#include <optional>

#include "cls/errors.hpp"

namespace cls {

namespace {

std::string window_key(const Window& w) {
  std::string k;
  for (const auto& t : w) {
    k += t;
    k += '\x1f';
  }
  return k;
}

std::vector<std::string> vocabulary_tokens() {
  std::vector<std::string> t = ClassCatalog::broad_classes();
  for (const char* s : {"yes", "no", "?"}) t.emplace_back(s);
  t.push_back(kPadToken);
  return t;
}

RecurrentEncoderConfig seeded(RecurrentEncoderConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Encoders::Encoders(std::uint64_t seed, const RecurrentEncoderConfig& recurrent)
    : seed_(seed),
      vocab_(vocabulary_tokens(), derive_seed(seed, 1)),
      recurrent_(vocab_, seeded(recurrent, derive_seed(seed, 2))),
      actions_(kNumActions, derive_seed(seed, 3)) {}

// ---------------------------------------------------------------------------

std::vector<QVector> QEstimator::q_values(const std::vector<Window>& windows) const {
  std::vector<QVector> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(q_values(w));
  return out;
}

double QEstimator::estimate(const Window& window, std::size_t action) const {
  if (action >= kNumActions) throw ContractViolation("action id out of range");
  return q_values(window)[action];
}

// ---------------------------------------------------------------------------

namespace {

SdmConfig sdm_config(const SdmEstimatorConfig& c, std::uint64_t seed) {
  SdmConfig s;
  s.capacity = c.capacity;
  s.key_dim = kContextEmbeddingDim + kActionEmbeddingDim;
  s.value_dim = 1;
  s.clique_size = c.clique_size;
  s.learning_rate = c.learning_rate;
  s.seed = seed;
  return s;
}

}  // namespace

SdmQEstimator::SdmQEstimator(std::shared_ptr<const Encoders> encoders, const SdmEstimatorConfig& config,
                             std::uint64_t seed)
    : encoders_(std::move(encoders)), memory_(sdm_config(config, seed)) {
  init_action_drive();
}

SdmQEstimator::SdmQEstimator(std::shared_ptr<const Encoders> encoders, SparseMemory memory)
    : encoders_(std::move(encoders)), memory_(std::move(memory)) {
  if (memory_.key_dim() != kContextEmbeddingDim + kActionEmbeddingDim || memory_.value_dim() != 1)
    throw ContractViolation("sdm estimator: memory must have 400-wide keys and scalar values");
  init_action_drive();
}

void SdmQEstimator::init_action_drive() {
  action_drive_.clear();
  for (std::size_t a = 0; a < kNumActions; ++a)
    action_drive_.push_back(memory_.project_columns(encoders_->actions().embed(a), kContextEmbeddingDim));
}

Vec SdmQEstimator::key(const Window& window, std::size_t action) const {
  Vec k = encoders_->recurrent().encode(window);
  const auto a = encoders_->actions().embed(action);
  k.insert(k.end(), a.begin(), a.end());
  return k;
}

const std::array<Clique, kNumActions>& SdmQEstimator::cliques(const Window& window) const {
  const std::string k = window_key(window);
  auto it = cache_.find(k);
  if (it != cache_.end()) return it->second;
  const Vec context = memory_.project_columns(encoders_->recurrent().encode(window), 0);
  std::array<Clique, kNumActions> c;
  Vec p(context.size());
  for (std::size_t a = 0; a < kNumActions; ++a) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = context[i] + action_drive_[a][i];
    c[a] = top_k(p, memory_.clique_size());
  }
  return cache_.emplace(k, std::move(c)).first->second;
}

const Clique& SdmQEstimator::clique(const Window& window, std::size_t action) const {
  if (action >= kNumActions) throw ContractViolation("action id out of range");
  return cliques(window)[action];
}

QVector SdmQEstimator::q_values(const Window& window) const {
  const auto& c = cliques(window);
  QVector q{};
  const auto& v = memory_.values();
  for (std::size_t a = 0; a < kNumActions; ++a) {
    double s = 0;
    for (std::uint32_t j : c[a]) s += v[j];
    q[a] = s;
  }
  return q;
}

void SdmQEstimator::update(const Window& window, std::size_t action, double target) {
  const double t[1] = {target};
  memory_.write_clique(clique(window, action), t);
  ++transitions_;
}

// ---------------------------------------------------------------------------

MlpQEstimator::MlpQEstimator(std::shared_ptr<const Encoders> encoders, const MlpConfig& config,
                             std::size_t minibatch)
    : encoders_(std::move(encoders)), model_(config), minibatch_(minibatch) {
  init();
}

MlpQEstimator::MlpQEstimator(std::shared_ptr<const Encoders> encoders, Mlp model, std::size_t minibatch)
    : encoders_(std::move(encoders)), model_(std::move(model)), minibatch_(minibatch) {
  init();
}

void MlpQEstimator::init() {
  const auto& c = model_.config();
  const std::size_t context_dim = kContextWindow * encoders_->vocab().dim();
  if (c.input_dim != context_dim + kActionEmbeddingDim || c.output_dim != 1)
    throw ContractViolation("mlp estimator: network must take 800 inputs and give one output");
  if (minibatch_ == 0) throw ContractViolation("mlp estimator: minibatch must be positive");
  action_table_.resize(static_cast<Eigen::Index>(kActionEmbeddingDim), static_cast<Eigen::Index>(kNumActions));
  for (std::size_t a = 0; a < kNumActions; ++a) {
    const auto e = encoders_->actions().embed(a);
    for (std::size_t i = 0; i < e.size(); ++i)
      action_table_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a)) = e[i];
  }
  batch_inputs_.resize(static_cast<Eigen::Index>(c.input_dim), static_cast<Eigen::Index>(minibatch_));
  batch_targets_.resize(1, static_cast<Eigen::Index>(minibatch_));
}

const Eigen::VectorXd& MlpQEstimator::context(const Window& window) const {
  const std::string k = window_key(window);
  auto it = contexts_.find(k);
  if (it != contexts_.end()) return it->second;
  const Vec flat = encode_flat(encoders_->vocab(), window);
  Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
  return contexts_.emplace(k, std::move(v)).first->second;
}

const SplitInputEvaluator& MlpQEstimator::evaluator() const {
  if (!evaluator_) evaluator_ = std::make_unique<SplitInputEvaluator>(model_, action_table_);
  return *evaluator_;
}

Eigen::VectorXd MlpQEstimator::input(const Window& window, std::size_t action) const {
  if (action >= kNumActions) throw ContractViolation("action id out of range");
  const Eigen::VectorXd& c = context(window);
  Eigen::VectorXd x(c.size() + action_table_.rows());
  x << c, action_table_.col(static_cast<Eigen::Index>(action));
  return x;
}

QVector MlpQEstimator::q_values(const Window& window) const { return q_values(std::vector<Window>{window})[0]; }

std::vector<QVector> MlpQEstimator::q_values(const std::vector<Window>& windows) const {
  if (windows.empty()) return {};
  const auto& first = context(windows[0]);
  Eigen::MatrixXd contexts(first.size(), static_cast<Eigen::Index>(windows.size()));
  for (std::size_t j = 0; j < windows.size(); ++j) contexts.col(static_cast<Eigen::Index>(j)) = context(windows[j]);
  const Eigen::MatrixXd q = evaluator().evaluate(contexts);
  std::vector<QVector> out(windows.size());
  for (std::size_t j = 0; j < windows.size(); ++j)
    for (std::size_t a = 0; a < kNumActions; ++a)
      out[j][a] = q(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j));
  return out;
}

void MlpQEstimator::update(const Window& window, std::size_t action, double target) {
  const auto col = static_cast<Eigen::Index>(pending_);
  batch_inputs_.col(col) = input(window, action);
  batch_targets_(0, col) = target;
  ++pending_;
  ++transitions_;
  if (pending_ < minibatch_) return;
  model_.train_step(batch_inputs_, batch_targets_);
  trained_ += pending_;
  pending_ = 0;
  evaluator_.reset();
}

void MlpQEstimator::save(const std::string& path) const {
  if (pending_ != 0) throw ContractViolation("mlp estimator: cannot snapshot with a partial minibatch pending");
  model_.save(path);
}

// ---------------------------------------------------------------------------

std::size_t greedy_action(const QVector& q) {
  return static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
}

std::size_t select_action(const QVector& q, double epsilon, std::mt19937_64& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractViolation("epsilon must lie in [0, 1]");
  if (epsilon > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < epsilon) return std::uniform_int_distribution<std::size_t>(0, kNumActions - 1)(rng);
  }
  return greedy_action(q);
}

double td_target(double reward, bool terminal, const QVector& next_q, double gamma) {
  if (terminal) return reward;
  return reward + gamma * *std::max_element(next_q.begin(), next_q.end());
}

// ---------------------------------------------------------------------------

double EvaluationResult::mean_reward_over(const std::vector<std::string>& classes) const {
  double r = 0;
  std::uint64_t s = 0;
  for (const auto& c : classes) {
    const auto it = per_class.find(c);
    if (it == per_class.end()) continue;
    r += it->second.reward;
    s += it->second.steps;
  }
  return s ? r / static_cast<double>(s) : 0.0;
}

EvaluationResult run_evaluation(const QEstimator& estimator, const ClassCatalog& catalog, LtmOracle& oracle,
                                std::uint64_t steps, std::uint64_t seed) {
  EvaluationResult r;
  std::mt19937_64 rng(seed);
  std::optional<EncounterState> s;
  for (std::uint64_t i = 0; i < steps; ++i) {
    if (!s || s->terminal) {
      s = sample_encounter(catalog, oracle, rng);
      ++r.episodes;
      ++r.per_class[s->specific].episodes;
    }
    const std::size_t a = greedy_action(estimator.q_values(s->window));
    const StepOutcome o = step(*s, a, oracle, rng);
    auto& c = r.per_class[s->specific];
    c.reward += o.reward;
    ++c.steps;
    r.total_reward += o.reward;
    ++r.steps;
  }
  r.mean_reward = r.steps ? r.total_reward / static_cast<double>(r.steps) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------

void TrainingOptions::validate() const {
  if (batch_size == 0) throw ConfigError("training: batch size must be positive");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("training: epsilon must lie in [0, 1]");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("training: discount must lie in [0, 1)");
  for (std::size_t i = 1; i < eval_at.size(); ++i)
    if (eval_at[i] <= eval_at[i - 1]) throw ConfigError("training: checkpoints must be strictly increasing");
}

TrainingSummary run_training(QEstimator& estimator, const ClassCatalog& catalog, LtmOracle& oracle,
                             const TrainingOptions& options, const std::vector<EvalSet>& evals,
                             TrainingObserver* observer) {
  options.validate();
  TrainingSummary summary;

  auto due = [&](std::uint64_t step) {
    if (!options.eval_at.empty())
      return std::binary_search(options.eval_at.begin(), options.eval_at.end(), step);
    if (step == options.batch_steps) return true;
    return options.eval_every > 0 && step % options.eval_every == 0;
  };
  auto evaluate = [&](std::uint64_t step) {
    for (const auto& e : evals) {
      EvalRecord rec{step, e.name, run_evaluation(estimator, e.catalog, oracle, options.eval_steps, options.eval_seed)};
      if (observer) observer->on_eval(rec);
      summary.evaluations.push_back(std::move(rec));
    }
  };

  if (options.batch_steps == 0) {
    if (due(0)) evaluate(0);
    return summary;
  }

  std::mt19937_64 rng(options.seed);
  const std::size_t lanes = options.batch_size;
  std::vector<EncounterState> state(lanes);
  std::vector<std::uint64_t> episode(lanes);
  for (std::size_t l = 0; l < lanes; ++l) {
    state[l] = sample_encounter(catalog, oracle, rng);
    episode[l] = summary.episodes++;
  }

  if (due(0)) evaluate(0);
  std::vector<Window> windows(lanes);
  std::vector<std::size_t> actions(lanes);
  std::vector<StepOutcome> outcomes(lanes);
  for (std::uint64_t step_no = 1; step_no <= options.batch_steps; ++step_no) {
    for (std::size_t l = 0; l < lanes; ++l) windows[l] = state[l].window;
    const auto q = estimator.q_values(windows);
    for (std::size_t l = 0; l < lanes; ++l) actions[l] = select_action(q[l], options.epsilon, rng);
    std::vector<Window> next_windows;
    for (std::size_t l = 0; l < lanes; ++l) {
      outcomes[l] = step(state[l], actions[l], oracle, rng);
      if (!outcomes[l].terminal) next_windows.push_back(state[l].window);
      summary.total_reward += outcomes[l].reward;
    }
    const auto next_q = estimator.q_values(next_windows);
    std::size_t next = 0;
    for (std::size_t l = 0; l < lanes; ++l) {
      const bool terminal = outcomes[l].terminal;
      const double target =
          terminal ? outcomes[l].reward : td_target(outcomes[l].reward, false, next_q[next++], options.gamma);
      estimator.update(windows[l], actions[l], target);
      ++summary.transitions;
      if (observer)
        observer->on_step({step_no, l, episode[l], actions[l], outcomes[l].reward, terminal, state[l].specific});
    }
    for (std::size_t l = 0; l < lanes; ++l) {
      if (!state[l].terminal) continue;
      state[l] = sample_encounter(catalog, oracle, rng);
      episode[l] = summary.episodes++;
    }
    summary.batch_steps = step_no;
    if (due(step_no)) evaluate(step_no);
  }
  return summary;
}

// ---------------------------------------------------------------------------

namespace {

struct WalkState {
  Window window;
  std::array<std::optional<Answer>, kNumPerceptualActions> cache{};
  std::size_t steps = 0;
};

void walk_greedy(const QEstimator& estimator, const FixtureTable& fixture, const std::string& cls,
                 const WalkState& s, Policy& policy) {
  const std::size_t a = greedy_action(estimator.q_values(s.window));
  policy[s.window] = a;
  if (!is_perceptual(a) || s.steps + 1 >= kMaxEpisodeSteps) return;
  const std::size_t qi = a - kNumExternalActions;
  auto follow = [&](Answer ans) {
    WalkState n = s;
    n.steps = s.steps + 1;
    n.cache[qi] = ans;
    if (n.window.size() == kContextWindow) n.window.erase(n.window.begin() + 1);
    n.window.push_back(token_of(ans));
    walk_greedy(estimator, fixture, cls, n, policy);
  };
  if (s.cache[qi]) {
    follow(*s.cache[qi]);
    return;
  }
  const auto& d = fixture.at(cls, question_of(a));
  for (Answer ans : {Answer::Yes, Answer::No, Answer::Unknown})
    if (d.probability(ans) > 0) follow(ans);
}

}  // namespace

Policy greedy_policy(const QEstimator& estimator, const ClassCatalog& catalog, const FixtureTable& fixture) {
  Policy policy;
  for (const auto& c : catalog.entries()) {
    WalkState root;
    root.window = {c.broad};
    walk_greedy(estimator, fixture, c.name, root, policy);
  }
  return policy;
}

}  // namespace cls
