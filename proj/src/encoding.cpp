#include "cls/encoding.hpp"

#include <cmath>

#include "cls/errors.hpp"
#include "json.hpp"

namespace cls {

TokenVocabulary::TokenVocabulary(const std::vector<std::string>& tokens, std::uint64_t seed,
                                 std::size_t dim)
    : dim_(dim), seed_(seed) {
  auto add = [this](const std::string& t) {
    if (ids_.count(t)) return;
    ids_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  };
  add(kPadToken);
  add("yes");
  add("no");
  add(kUnknownToken);
  for (const auto& t : tokens) add(t);
  table_ = random_normal_matrix(tokens_.size(), dim_, 1.0, seed);
}

std::size_t TokenVocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? ids_.at(kUnknownToken) : it->second;
}

std::span<const double> TokenVocabulary::embed(const std::string& token) const {
  return embed_id(id(token));
}

std::span<const double> TokenVocabulary::embed_id(std::size_t id) const {
  if (id >= tokens_.size()) throw ContractViolation("vocabulary: token id out of range");
  return {table_.data() + id * dim_, dim_};
}

std::string TokenVocabulary::to_json() const {
  nlohmann::json j;
  j["seed"] = seed_;
  j["dim"] = dim_;
  j["tokens"] = tokens_;
  auto& rows = j["embeddings"] = nlohmann::json::array();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto e = embed_id(i);
    rows.push_back(std::vector<double>(e.begin(), e.end()));
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------

RecurrentSparseEncoder::RecurrentSparseEncoder(const TokenVocabulary& vocab,
                                               const RecurrentEncoderConfig& config)
    : vocab_(&vocab), config_(config) {
  if (config_.active == 0 || config_.active > config_.hidden)
    throw ContractViolation("encoder: active units must satisfy 0 < k_enc <= hidden");
  const double k = static_cast<double>(config_.active);
  // Both pre-activation terms come out with unit variance per hidden unit.
  input_ = random_normal_matrix(config_.hidden, vocab.dim(), std::sqrt(static_cast<double>(vocab.dim())),
                                config_.seed);
  recurrent_ = random_normal_matrix(config_.hidden, config_.hidden, std::sqrt(k), config_.seed + 1);
  readout_ = random_normal_matrix(config_.hidden, config_.output, std::sqrt(k), config_.seed + 2);

  // W_in embed(token) for every vocabulary entry.
  const std::size_t h = config_.hidden;
  token_drive_.assign(vocab.size() * h, 0.0);
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    const auto e = vocab.embed_id(t);
    for (std::size_t i = 0; i < h; ++i) {
      const double* row = input_.data() + i * e.size();
      double acc = 0.0;
      for (std::size_t j = 0; j < e.size(); ++j) acc += row[j] * e[j];
      token_drive_[t * h + i] = acc;
    }
  }
}

Clique RecurrentSparseEncoder::step(const std::string& token, const Clique& previous) const {
  const std::size_t h = config_.hidden;
  const double* drive = token_drive_.data() + vocab_->id(token) * h;
  Vec pre(drive, drive + h);
  for (std::uint32_t j : previous) {
    const double* col = recurrent_.data() + static_cast<std::size_t>(j) * h;
    for (std::size_t i = 0; i < h; ++i) pre[i] += col[i];
  }
  return top_k(pre, config_.active);
}

std::vector<Clique> RecurrentSparseEncoder::trace(std::span<const std::string> window) const {
  if (window.size() > config_.max_window)
    throw ContractViolation("encoder: window of " + std::to_string(window.size()) +
                            " tokens exceeds " + std::to_string(config_.max_window));
  std::vector<Clique> states;
  Clique state;
  for (const auto& token : window) {
    state = step(token, state);
    states.push_back(state);
  }
  return states;
}

Vec RecurrentSparseEncoder::encode(std::span<const std::string> window) const {
  const auto states = trace(window);
  Vec out(config_.output, 0.0);
  if (states.empty()) return out;
  for (std::uint32_t j : states.back()) {
    const double* col = readout_.data() + static_cast<std::size_t>(j) * config_.output;
    for (std::size_t i = 0; i < config_.output; ++i) out[i] += col[i];
  }
  return out;
}

Vec encode_flat(const TokenVocabulary& vocab, std::span<const std::string> window,
                std::size_t max_window) {
  if (window.size() > max_window)
    throw ContractViolation("flat encoder: window of " + std::to_string(window.size()) +
                            " tokens exceeds " + std::to_string(max_window));
  Vec out;
  out.reserve(max_window * vocab.dim());
  const auto pad = vocab.embed(kPadToken);
  for (std::size_t i = window.size(); i < max_window; ++i) out.insert(out.end(), pad.begin(), pad.end());
  for (const auto& t : window) {
    const auto e = vocab.embed(t);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

ActionEmbedding::ActionEmbedding(std::size_t num_actions, std::uint64_t seed, std::size_t dim)
    : num_actions_(num_actions), dim_(dim), table_(random_normal_matrix(num_actions, dim, 1.0, seed)) {}

std::span<const double> ActionEmbedding::embed(std::size_t action) const {
  if (action >= num_actions_) throw ContractViolation("action id out of range");
  return {table_.data() + action * dim_, dim_};
}

}  // namespace cls
