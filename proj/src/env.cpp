#include "cls/env.hpp"

#include <algorithm>
#include <set>

#include "cls/encoding.hpp"
#include "cls/errors.hpp"
#include "json.hpp"

namespace cls {

const std::vector<std::string>& perceptual_questions() {
  static const std::vector<std::string> q = {
      "Does it look like a mouse?", "Is it bigger than me?", "Does it smell tasty?",
      "Does it have a long tail?",  "Does it have four legs?", "Is it red?",
      "Is it green?",               "Is it noisy?",            "Is it watching me?",
      "Is it coming towards me?"};
  return q;
}

const std::vector<std::string>& dynamics_questions() {
  static const std::vector<std::string> q = {"Is it friendly?", "Does it eat mice?", "Is it edible?",
                                             "Is it poisonous?", "Does it chase mice?"};
  return q;
}

std::vector<std::string> fixture_questions() {
  auto q = perceptual_questions();
  const auto& d = dynamics_questions();
  q.insert(q.end(), d.begin(), d.end());
  return q;
}

bool is_perceptual(std::size_t action) {
  if (action >= kNumActions) throw ContractViolation("action id out of range");
  return action >= kNumExternalActions;
}

const std::string& question_of(std::size_t perceptual_action) {
  if (!is_perceptual(perceptual_action)) throw ContractViolation("not a perceptual action");
  return perceptual_questions()[perceptual_action - kNumExternalActions];
}

std::string action_name(std::size_t action) {
  static const char* external[] = {"DoNothing", "Approach", "Eat", "Hide", "RunAway"};
  if (is_perceptual(action)) return "ask: " + question_of(action);
  return external[action];
}

double external_reward(std::size_t action, const std::array<Answer, kNumFacts>& facts) {
  auto yes = [&facts](Fact f) { return facts[f] == Answer::Yes ? 1.0 : 0.0; };
  switch (action) {
    case Approach: return yes(Friendly) - yes(EatsMice);
    case Eat: return yes(Edible) - yes(EatsMice) - yes(Poisonous);
    case Hide: return yes(EatsMice);
    case RunAway: return -yes(ChasesMice);
    default: return 0.0;
  }
}

// ---------------------------------------------------------------------------

ClassCatalog::ClassCatalog(std::vector<ClassEntry> entries) : entries_(std::move(entries)) { validate(); }

const std::vector<std::string>& ClassCatalog::broad_classes() {
  static const std::vector<std::string> b = {"Maybe edible object", "A bird", "A land animal", "A plant"};
  return b;
}

ClassCatalog ClassCatalog::garden() {
  const auto& b = broad_classes();
  std::vector<ClassEntry> e;
  for (const char* n : {"Cheese", "Tomato", "Carrot", "Slug pellets", "Cauliflower", "Radish"})
    e.push_back({n, b[0]});
  for (const char* n : {"Hawk", "Sparrow", "Eagle", "Pigeon", "Falcon"}) e.push_back({n, b[1]});
  for (const char* n : {"Cat", "Dog", "Fox", "Snake", "Farmer", "Beetle", "Horse", "Mouse", "Capybara"})
    e.push_back({n, b[2]});
  for (const char* n : {"Deadly nightshade", "Fly agaric mushroom", "Tree", "Grass"}) e.push_back({n, b[3]});
  return ClassCatalog(std::move(e));
}

void ClassCatalog::validate() const {
  std::set<std::string> seen;
  for (const auto& c : entries_) {
    if (c.name.empty()) throw ConfigError("catalog: empty class name");
    if (!seen.insert(c.name).second) throw ConfigError("catalog: duplicate class " + c.name);
    if (c.broad.empty()) throw ConfigError("catalog: class " + c.name + " has no broad class");
    if (!(c.weight > 0)) throw ConfigError("catalog: class " + c.name + " needs a positive weight");
  }
}

bool ClassCatalog::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const ClassEntry& c) { return c.name == name; });
}

std::size_t ClassCatalog::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw ConfigError("catalog: unknown class " + name);
}

const ClassEntry& ClassCatalog::at(const std::string& name) const { return entries_[index_of(name)]; }

std::vector<std::string> ClassCatalog::names() const {
  std::vector<std::string> out;
  for (const auto& c : entries_) out.push_back(c.name);
  return out;
}

void ClassCatalog::set_weight(const std::string& name, double weight) {
  entries_[index_of(name)].weight = weight;
  validate();
}

void ClassCatalog::set_broad(const std::string& name, const std::string& broad) {
  entries_[index_of(name)].broad = broad;
  validate();
}

ClassCatalog ClassCatalog::without(const std::vector<std::string>& names) const {
  for (const auto& n : names) at(n);
  std::vector<ClassEntry> kept;
  for (const auto& c : entries_)
    if (std::find(names.begin(), names.end(), c.name) == names.end()) kept.push_back(c);
  return ClassCatalog(std::move(kept));
}

ClassCatalog ClassCatalog::only(const std::vector<std::string>& names) const {
  for (const auto& n : names) at(n);
  std::vector<ClassEntry> kept;
  for (const auto& c : entries_)
    if (std::find(names.begin(), names.end(), c.name) != names.end()) kept.push_back(c);
  return ClassCatalog(std::move(kept));
}

const ClassEntry& ClassCatalog::sample(std::mt19937_64& rng) const {
  if (entries_.empty()) throw ContractViolation("cannot sample from an empty catalog");
  double total = 0;
  for (const auto& c : entries_) total += c.weight;
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (const auto& c : entries_) {
    if (u < c.weight) return c;
    u -= c.weight;
  }
  return entries_.back();
}

// ---------------------------------------------------------------------------

EncounterState sample_encounter(const ClassCatalog& catalog, LtmOracle& oracle, std::mt19937_64& rng) {
  const ClassEntry& c = catalog.sample(rng);
  EncounterState s;
  s.specific = c.name;
  s.broad = c.broad;
  for (std::size_t f = 0; f < kNumFacts; ++f) s.facts[f] = oracle.answer(c.name, dynamics_questions()[f], rng);
  s.window.push_back(c.broad);
  return s;
}

StepOutcome step(EncounterState& state, std::size_t action, LtmOracle& oracle, std::mt19937_64& rng) {
  if (state.terminal) throw ContractViolation("step on a terminal encounter");
  if (state.steps >= kMaxEpisodeSteps) throw ContractViolation("step beyond the episode limit");
  if (action >= kNumActions) throw ContractViolation("action id out of range");
  ++state.steps;
  StepOutcome out;
  if (is_perceptual(action)) {
    auto& cached = state.answers[action - kNumExternalActions];
    if (!cached) cached = oracle.answer(state.specific, question_of(action), rng);
    out.token = token_of(*cached);
    if (state.window.size() == kContextWindow) state.window.erase(state.window.begin() + 1);
    state.window.push_back(*out.token);
  } else if (action != DoNothing) {
    out.reward = external_reward(action, state.facts);
    out.terminal = true;
  }
  if (state.steps == kMaxEpisodeSteps) out.terminal = true;
  state.terminal = out.terminal;
  return out;
}

std::string trace_record(std::uint64_t episode, const EncounterState& after, std::size_t action,
                         const StepOutcome& outcome) {
  nlohmann::json j = {{"episode", episode},
                      {"step", after.steps},
                      {"class", after.specific},
                      {"action", action_name(action)},
                      {"reward", outcome.reward},
                      {"terminal", outcome.terminal},
                      {"window", after.window}};
  if (outcome.token) j["token"] = *outcome.token;
  return j.dump();
}

}  // namespace cls
