#include "cls/ltm.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "cls/errors.hpp"
#include "httplib.h"
#include "json.hpp"

namespace cls {

using nlohmann::json;

const std::string& token_of(Answer a) {
  static const std::string tokens[] = {"yes", "no", "?"};
  return tokens[static_cast<int>(a)];
}

Answer answer_from_token(const std::string& token) {
  if (token == "yes") return Answer::Yes;
  if (token == "no") return Answer::No;
  if (token == "?") return Answer::Unknown;
  throw ContractViolation("not an answer token: '" + token + "'");
}

double AnswerDistribution::probability(Answer a) const {
  switch (a) {
    case Answer::Yes: return yes;
    case Answer::No: return no;
    case Answer::Unknown: return unknown;
  }
  return 0.0;
}

Answer AnswerDistribution::mode() const {
  if (yes > no && yes > unknown) return Answer::Yes;
  if (no > yes && no > unknown) return Answer::No;
  return Answer::Unknown;
}

Answer AnswerDistribution::sample(std::mt19937_64& rng) const {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u < yes) return Answer::Yes;
  if (u < yes + no) return Answer::No;
  return Answer::Unknown;
}

AnswerDistribution AnswerDistribution::certain(Answer a) {
  AnswerDistribution d{0.0, 0.0, 0.0};
  if (a == Answer::Yes) d.yes = 1.0;
  if (a == Answer::No) d.no = 1.0;
  if (a == Answer::Unknown) d.unknown = 1.0;
  return d;
}

// ---------------------------------------------------------------------------

void FixtureTable::set(const std::string& cls, const std::string& question, AnswerDistribution d) {
  const double sum = d.yes + d.no + d.unknown;
  if (d.yes < 0 || d.no < 0 || d.unknown < 0 || std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("fixture entry (" + cls + ", " + question + ") is not a probability triple");
  entries_[cls][question] = d;
}

bool FixtureTable::contains(const std::string& cls, const std::string& question) const {
  auto it = entries_.find(cls);
  return it != entries_.end() && it->second.count(question) > 0;
}

const AnswerDistribution& FixtureTable::at(const std::string& cls, const std::string& question) const {
  auto it = entries_.find(cls);
  if (it != entries_.end()) {
    auto q = it->second.find(question);
    if (q != it->second.end()) return q->second;
  }
  throw ConfigError("fixture has no entry for (" + cls + ", " + question + ")");
}

std::vector<std::string> FixtureTable::classes() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

void FixtureTable::require_coverage(const std::vector<std::string>& classes,
                                    const std::vector<std::string>& questions) const {
  std::vector<std::string> missing;
  for (const auto& c : classes)
    for (const auto& q : questions)
      if (!contains(c, q)) missing.push_back("(" + c + ", " + q + ")");
  if (missing.empty()) return;
  std::string msg = "fixture is missing " + std::to_string(missing.size()) + " entries:";
  for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
  if (missing.size() > 10) msg += " ...";
  throw ConfigError(msg);
}

FixtureTable FixtureTable::parse(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  if (j.value("format", "") != "cls-fixture")
    throw ConfigError(origin + ": not a cls-fixture file");
  if (j.value("version", 0) != 1)
    throw ConfigError(origin + ": unsupported fixture version");
  FixtureTable t;
  if (j.contains("metadata")) {
    const auto& m = j["metadata"];
    t.metadata.generator = m.value("generator", "");
    t.metadata.model = m.value("model", "");
    t.metadata.samples_per_entry = m.value("samples_per_entry", std::uint64_t{0});
    t.metadata.seed = m.value("seed", std::uint64_t{0});
    t.metadata.complete = m.value("complete", true);
  }
  if (!j.contains("entries") || !j["entries"].is_object())
    throw ConfigError(origin + ": missing 'entries' object");
  for (const auto& [cls, questions] : j["entries"].items()) {
    for (const auto& [q, v] : questions.items()) {
      AnswerDistribution d;
      if (v.is_string()) {
        try {
          d = AnswerDistribution::certain(answer_from_token(v.get<std::string>()));
        } catch (const ContractViolation& e) {
          throw ConfigError(origin + ": (" + cls + ", " + q + "): " + e.what());
        }
      } else if (v.is_array() && v.size() == 3) {
        d = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
      } else {
        throw ConfigError(origin + ": (" + cls + ", " + q + ") must be a token or a triple");
      }
      t.set(cls, q, d);
    }
  }
  return t;
}

FixtureTable FixtureTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open fixture file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string FixtureTable::dump() const {
  json j;
  j["format"] = "cls-fixture";
  j["version"] = 1;
  j["metadata"] = {{"generator", metadata.generator},
                   {"model", metadata.model},
                   {"samples_per_entry", metadata.samples_per_entry},
                   {"seed", metadata.seed},
                   {"complete", metadata.complete}};
  json entries = json::object();
  for (const auto& [cls, qs] : entries_) {
    json row = json::object();
    for (const auto& [q, d] : qs) {
      if (d.yes == 1.0 || d.no == 1.0 || d.unknown == 1.0)
        row[q] = token_of(d.mode());
      else
        row[q] = {d.yes, d.no, d.unknown};
    }
    entries[cls] = row;
  }
  j["entries"] = entries;
  return j.dump(2);
}

void FixtureTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write fixture file: " + path);
  out << dump() << "\n";
}

Answer answer_fixture(const FixtureTable& table, const std::string& cls, const std::string& question,
                      std::mt19937_64& rng, bool deterministic) {
  const auto& d = table.at(cls, question);
  return deterministic ? d.mode() : d.sample(rng);
}

// ---------------------------------------------------------------------------

void LlmEndpointConfig::validate() const {
  const bool scheme = base_url.rfind("http://", 0) == 0 || base_url.rfind("https://", 0) == 0;
  if (!scheme || base_url.size() <= 8) throw ConfigError("LLM endpoint URL is not well-formed: " + base_url);
  if (!(timeout_seconds > 0)) throw ConfigError("LLM timeout must be positive");
  if (max_retries < 1) throw ConfigError("LLM max_retries must be at least 1");
  if (model.empty()) throw ConfigError("LLM model name is empty");
}

void LlmEndpointConfig::apply_environment() {
  if (const char* url = std::getenv("LTM_ENDPOINT"); url && *url) base_url = url;
  if (const char* m = std::getenv("LTM_MODEL"); m && *m) model = m;
}

std::string render_prompt(const std::string& tmpl, const std::string& object, const std::string& question) {
  std::string out = tmpl;
  auto replace = [&out](const std::string& key, const std::string& value) {
    for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
      out.replace(pos, key.size(), value);
  };
  replace("{object}", object);
  replace("{question}", question);
  return out;
}

Answer parse_llm_answer(const std::string& completion) {
  std::size_t i = 0;
  auto is_word = [](unsigned char c) { return std::isalnum(c) != 0; };
  while (i < completion.size() && !is_word(static_cast<unsigned char>(completion[i]))) ++i;
  std::string word;
  while (i < completion.size() && is_word(static_cast<unsigned char>(completion[i])))
    word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(completion[i++]))));
  if (word == "yes") return Answer::Yes;
  if (word == "no") return Answer::No;
  return Answer::Unknown;
}

LlmClient::LlmClient(LlmEndpointConfig config) : config_(std::move(config)) {
  config_.validate();
  host_ = config_.base_url;
  while (!host_.empty() && host_.back() == '/') host_.pop_back();
}

std::string LlmClient::generate(const std::string& prompt) const {
  const json body = {{"model", config_.model},
                     {"prompt", prompt},
                     {"stream", false},
                     {"options", {{"temperature", config_.temperature}}}};
  const std::string payload = body.dump();
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);

  std::string last_error;
  for (int attempt = 0; attempt < config_.max_retries; ++attempt) {
    httplib::Client cli(host_);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    ++requests_;
    auto res = cli.Post(config_.generate_path, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      const json reply = json::parse(res->body);
      return reply.at("response").get<std::string>();
    } catch (const json::exception& e) {
      last_error = std::string("malformed reply: ") + e.what();
    }
  }
  throw OracleUnavailable("LLM endpoint " + host_ + config_.generate_path + " failed after " +
                          std::to_string(config_.max_retries) + " attempts: " + last_error);
}

Answer answer_llm(const LlmClient& client, const std::string& cls, const std::string& question) {
  return parse_llm_answer(client.generate(render_prompt(client.config().answer_template, cls, question)));
}

FixtureTable generate_fixture(const LlmClient& client, const std::vector<std::string>& classes,
                              const std::vector<std::string>& questions,
                              const FixtureGenerationOptions& options, const std::string& partial_path) {
  if (options.samples_per_entry < 1) throw ContractViolation("samples_per_entry must be at least 1");
  struct Cell {
    std::string cls, question;
    std::uint64_t counts[3] = {0, 0, 0};
    bool done = false;
  };
  std::vector<Cell> cells;
  for (const auto& c : classes)
    for (const auto& q : questions) cells.push_back({c, q});

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::string error;
  auto worker = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= cells.size()) return;
      Cell& cell = cells[i];
      try {
        for (std::uint64_t s = 0; s < options.samples_per_entry; ++s)
          ++cell.counts[static_cast<int>(answer_llm(client, cell.cls, cell.question))];
        cell.done = true;
      } catch (const OracleUnavailable& e) {
        std::lock_guard lock(error_mutex);
        if (!failed.exchange(true)) error = e.what();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.parallelism, cells.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  FixtureTable table;
  table.metadata.generator = "gen-fixture";
  table.metadata.model = client.config().model;
  table.metadata.samples_per_entry = options.samples_per_entry;
  table.metadata.seed = options.seed;
  table.metadata.complete = !failed;
  const double n = static_cast<double>(options.samples_per_entry);
  for (const auto& cell : cells) {
    if (!cell.done) continue;
    table.set(cell.cls, cell.question,
              {static_cast<double>(cell.counts[0]) / n, static_cast<double>(cell.counts[1]) / n,
               static_cast<double>(cell.counts[2]) / n});
  }
  if (failed) {
    if (!partial_path.empty()) table.save(partial_path);
    throw OracleUnavailable(error);
  }
  return table;
}

std::string extract_noun_phrase(const std::string& completion) {
  std::string clause;
  for (char c : completion) {
    if (c == ',' || c == '.' || c == ';' || c == ':' || c == '!' || c == '?' || c == '\n') break;
    clause.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  std::istringstream words(clause);
  std::vector<std::string> parts;
  for (std::string w; words >> w;) parts.push_back(w);
  if (!parts.empty() && (parts.front() == "a" || parts.front() == "an" || parts.front() == "the"))
    parts.erase(parts.begin());
  std::string out;
  for (const auto& w : parts) out += (out.empty() ? "" : " ") + w;
  return out;
}

ClassFrequencies generate_class_list(const LlmClient& client, const std::string& prompt, std::uint64_t draws) {
  std::map<std::string, std::uint64_t> counts;
  ClassFrequencies out;
  for (std::uint64_t i = 0; i < draws; ++i) {
    const std::string phrase = extract_noun_phrase(client.generate(prompt));
    if (phrase.empty()) {
      ++out.parse_failures;
      continue;
    }
    ++counts[phrase];
  }
  out.ranked.assign(counts.begin(), counts.end());
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

}  // namespace cls
