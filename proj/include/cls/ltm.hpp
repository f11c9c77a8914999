#pragma once

// Long-term memory oracle: answers (object class, question) with a single
// token from {yes, no, ?}. Two backings: a stored probability table (the
// fixture) and a live Ollama-compatible completion endpoint.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace cls {

enum class Answer : std::uint8_t { Yes = 0, No = 1, Unknown = 2 };

const std::string& token_of(Answer a);
/// "yes" / "no" / "?"; anything else is a ContractViolation.
Answer answer_from_token(const std::string& token);

struct AnswerDistribution {
  double yes = 0.0;
  double no = 0.0;
  double unknown = 1.0;

  double probability(Answer a) const;
  /// Argmax; any tie resolves to Unknown.
  Answer mode() const;
  Answer sample(std::mt19937_64& rng) const;
  static AnswerDistribution certain(Answer a);
};

struct FixtureMetadata {
  std::string generator = "hand-authored";
  std::string model;
  std::uint64_t samples_per_entry = 0;
  std::uint64_t seed = 0;
  bool complete = true;
};

/// (class, question) -> answer distribution.
///
/// File format (JSON, "format": "cls-fixture", "version": 1):
///   {
///     "format": "cls-fixture", "version": 1,
///     "metadata": {"generator": ..., "model": ..., "samples_per_entry": N,
///                  "seed": S, "complete": true},
///     "entries": {
///       "<class>": {"<question>": "yes" | "no" | "?" | [p_yes, p_no, p_unknown], ...},
///       ...
///     }
///   }
/// A bare token is shorthand for a certain answer.
class FixtureTable {
 public:
  FixtureMetadata metadata;

  void set(const std::string& cls, const std::string& question, AnswerDistribution d);
  bool contains(const std::string& cls, const std::string& question) const;
  /// Throws ConfigError naming the missing (class, question) pair.
  const AnswerDistribution& at(const std::string& cls, const std::string& question) const;
  std::vector<std::string> classes() const;

  /// Throws ConfigError listing every missing pair.
  void require_coverage(const std::vector<std::string>& classes,
                        const std::vector<std::string>& questions) const;

  static FixtureTable load(const std::string& path);
  static FixtureTable parse(const std::string& json_text, const std::string& origin = "<string>");
  void save(const std::string& path) const;
  std::string dump() const;

 private:
  std::map<std::string, std::map<std::string, AnswerDistribution>> entries_;
};

Answer answer_fixture(const FixtureTable& table, const std::string& cls, const std::string& question,
                      std::mt19937_64& rng, bool deterministic = false);

class LtmOracle {
 public:
  virtual ~LtmOracle() = default;
  virtual Answer answer(const std::string& cls, const std::string& question, std::mt19937_64& rng) = 0;
  /// Non-null when the oracle is backed by a known probability table.
  virtual const FixtureTable* fixture() const { return nullptr; }
};

class FixtureOracle : public LtmOracle {
 public:
  explicit FixtureOracle(FixtureTable table, bool deterministic = false)
      : table_(std::move(table)), deterministic_(deterministic) {}

  Answer answer(const std::string& cls, const std::string& question, std::mt19937_64& rng) override {
    return answer_fixture(table_, cls, question, rng, deterministic_);
  }
  const FixtureTable* fixture() const override { return &table_; }

 private:
  FixtureTable table_;
  bool deterministic_;
};

// ---------------------------------------------------------------------------
// Live endpoint

struct LlmEndpointConfig {
  std::string base_url = "http://localhost:11434";
  std::string model = "mistral";
  std::string generate_path = "/api/generate";
  double timeout_seconds = 60.0;
  double temperature = 0.7;
  int max_retries = 3;
  /// {object} and {question} are substituted.
  std::string answer_template = "You're a mouse in the garden and you see a {object}. {question} Answer yes or no.";

  void validate() const;
  /// Applies LTM_ENDPOINT / LTM_MODEL when set.
  void apply_environment();
};

std::string render_prompt(const std::string& tmpl, const std::string& object, const std::string& question);

/// First word of the completion, lowercased with punctuation stripped:
/// "yes" -> Yes, "no" -> No, anything else -> Unknown.
Answer parse_llm_answer(const std::string& completion);

/// Thin blocking client for POST {base_url}{generate_path} with body
/// {"model", "prompt", "stream": false, "options": {"temperature"}}; the
/// completion text is read from the "response" field. Transport failures and
/// non-200 replies are retried up to max_retries times in total.
class LlmClient {
 public:
  explicit LlmClient(LlmEndpointConfig config);

  const LlmEndpointConfig& config() const { return config_; }
  /// Throws OracleUnavailable once retries are exhausted.
  std::string generate(const std::string& prompt) const;
  std::uint64_t requests_sent() const { return requests_; }

 private:
  LlmEndpointConfig config_;
  std::string host_;
  mutable std::atomic<std::uint64_t> requests_{0};
};

Answer answer_llm(const LlmClient& client, const std::string& cls, const std::string& question);

class LlmOracle : public LtmOracle {
 public:
  explicit LlmOracle(LlmEndpointConfig config) : client_(std::move(config)) {}
  Answer answer(const std::string& cls, const std::string& question, std::mt19937_64&) override {
    return answer_llm(client_, cls, question);
  }
  const LlmClient& client() const { return client_; }

 private:
  LlmClient client_;
};

struct FixtureGenerationOptions {
  std::uint64_t samples_per_entry = 10;
  std::size_t parallelism = 4;
  std::uint64_t seed = 0;
};

/// Samples every (class, question) pair and tabulates empirical frequencies.
/// If the endpoint fails part-way, the partial table (metadata.complete =
/// false) is written to partial_path when given and OracleUnavailable is
/// rethrown.
FixtureTable generate_fixture(const LlmClient& client, const std::vector<std::string>& classes,
                              const std::vector<std::string>& questions,
                              const FixtureGenerationOptions& options,
                              const std::string& partial_path = "");

struct ClassFrequencies {
  std::vector<std::pair<std::string, std::uint64_t>> ranked;  // descending count, then name
  std::uint64_t parse_failures = 0;
};

/// Leading noun phrase of an open completion: the text up to the first
/// sentence/list punctuation or newline, with a leading article dropped and
/// lowercased. Empty when nothing usable remains.
std::string extract_noun_phrase(const std::string& completion);

ClassFrequencies generate_class_list(const LlmClient& client, const std::string& prompt,
                                     std::uint64_t draws);

}  // namespace cls
