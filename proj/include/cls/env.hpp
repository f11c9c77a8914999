#pragma once

// The garden encounter environment: a mouse meets one object per episode,
// may query the long-term memory about it, and then responds.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cls/ltm.hpp"

namespace cls {

inline constexpr std::size_t kNumActions = 15;
inline constexpr std::size_t kNumExternalActions = 5;
inline constexpr std::size_t kNumPerceptualActions = kNumActions - kNumExternalActions;
inline constexpr std::size_t kMaxEpisodeSteps = 10;

enum Action : std::size_t { DoNothing = 0, Approach = 1, Eat = 2, Hide = 3, RunAway = 4 };

/// The ten observable-quality queries, indexed by action id - 5.
const std::vector<std::string>& perceptual_questions();

/// Questions that fix an encounter's reward dynamics.
enum Fact : std::size_t { Friendly = 0, EatsMice = 1, Edible = 2, Poisonous = 3, ChasesMice = 4 };
inline constexpr std::size_t kNumFacts = 5;
const std::vector<std::string>& dynamics_questions();

/// All fifteen questions a fixture must cover: perceptual then dynamics.
std::vector<std::string> fixture_questions();

bool is_perceptual(std::size_t action);
/// Display name, e.g. "Hide" or "ask: Is it red?".
std::string action_name(std::size_t action);
const std::string& question_of(std::size_t perceptual_action);

/// Reward for an external action given the encounter's facts. DoNothing and
/// perceptual actions pay 0. Unknown facts contribute nothing.
double external_reward(std::size_t action, const std::array<Answer, kNumFacts>& facts);

struct ClassEntry {
  std::string name;
  std::string broad;
  double weight = 1.0;
};

/// Specific classes with their broad class and sampling weight.
class ClassCatalog {
 public:
  ClassCatalog() = default;
  explicit ClassCatalog(std::vector<ClassEntry> entries);

  /// The 24 garden classes grouped into edible objects, birds, land animals
  /// and plants, uniform weights.
  static ClassCatalog garden();
  static const std::vector<std::string>& broad_classes();

  const std::vector<ClassEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool contains(const std::string& name) const;
  const ClassEntry& at(const std::string& name) const;
  /// Position in entries(); ConfigError for an unknown name.
  std::size_t index_of(const std::string& name) const;
  std::vector<std::string> names() const;

  void set_weight(const std::string& name, double weight);
  void set_broad(const std::string& name, const std::string& broad);

  /// Catalog without the named classes. Every name must exist.
  ClassCatalog without(const std::vector<std::string>& names) const;
  /// Catalog with only the named classes. Every name must exist.
  ClassCatalog only(const std::vector<std::string>& names) const;

  /// Weighted draw; throws ContractViolation on an empty catalog.
  const ClassEntry& sample(std::mt19937_64& rng) const;

 private:
  void validate() const;
  std::vector<ClassEntry> entries_;
};

struct EncounterState {
  std::string specific;  // hidden from the agent
  std::string broad;
  std::array<Answer, kNumFacts> facts{};
  std::array<std::optional<Answer>, kNumPerceptualActions> answers{};
  std::size_t steps = 0;
  /// Broad class followed by the most recent answer tokens; never longer
  /// than kContextWindow. The broad-class token stays in the first slot and
  /// the oldest answer is evicted when the window is full.
  std::vector<std::string> window;
  bool terminal = false;
};

struct StepOutcome {
  double reward = 0.0;
  std::optional<std::string> token;
  bool terminal = false;
};

/// Draws a class by weight, fixes its dynamics facts with one oracle query
/// each and opens the window with the broad-class token.
EncounterState sample_encounter(const ClassCatalog& catalog, LtmOracle& oracle, std::mt19937_64& rng);

/// Advances one step. Perceptual answers are drawn at most once per question
/// per episode. External actions other than DoNothing end the episode, as
/// does the tenth step.
StepOutcome step(EncounterState& state, std::size_t action, LtmOracle& oracle, std::mt19937_64& rng);

/// One JSON object describing a transition, for episode trace files.
std::string trace_record(std::uint64_t episode, const EncounterState& after, std::size_t action,
                         const StepOutcome& outcome);

}  // namespace cls
