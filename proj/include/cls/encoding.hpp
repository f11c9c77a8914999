#pragma once

// Fixed random encoders for LTM answer tokens and agent actions.

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cls/sdm.hpp"

namespace cls {

inline constexpr std::size_t kTokenEmbeddingDim = 100;
inline constexpr std::size_t kContextEmbeddingDim = 200;
inline constexpr std::size_t kActionEmbeddingDim = 200;
inline constexpr std::size_t kContextWindow = 6;

inline const std::string kPadToken = "<pad>";
inline const std::string kUnknownToken = "?";

/// Token -> id map with a fixed N(0, 1) embedding table. "yes", "no", "?"
/// and the padding token are always present; unmapped tokens embed as "?".
class TokenVocabulary {
 public:
  TokenVocabulary(const std::vector<std::string>& tokens, std::uint64_t seed,
                  std::size_t dim = kTokenEmbeddingDim);

  std::size_t size() const { return tokens_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t id(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::span<const double> embed(const std::string& token) const;
  std::span<const double> embed_id(std::size_t id) const;

  /// {"seed":..., "dim":..., "tokens":[...], "embeddings":[[...], ...]}
  std::string to_json() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<double> table_;
  std::size_t dim_;
  std::uint64_t seed_;
};

struct RecurrentEncoderConfig {
  std::size_t hidden = 2000;   // h
  std::size_t active = 32;     // k_enc
  std::size_t output = kContextEmbeddingDim;
  std::size_t max_window = kContextWindow;
  std::uint64_t seed = 0;
};

/// Runs the window through a fixed sparse recurrence:
///
///   pre_t  = W_in embed(token_t) + W_rec s_{t-1}
///   s_t    = indicator of the k_enc largest entries of pre_t
///   output = W_out s_T
///
/// with s_0 = 0. Nothing is learned; the map is a pure function of the seed
/// and the window.
class RecurrentSparseEncoder {
 public:
  RecurrentSparseEncoder(const TokenVocabulary& vocab, const RecurrentEncoderConfig& config);

  const RecurrentEncoderConfig& config() const { return config_; }

  Vec encode(std::span<const std::string> window) const;
  /// Active hidden units after each token.
  std::vector<Clique> trace(std::span<const std::string> window) const;

 private:
  Clique step(const std::string& token, const Clique& previous) const;

  const TokenVocabulary* vocab_;
  RecurrentEncoderConfig config_;
  std::vector<double> input_;      // [hidden, token_dim]
  std::vector<double> recurrent_;  // transposed: row j = column j of W_rec
  std::vector<double> readout_;    // transposed: row j = column j of W_out
  std::vector<double> token_drive_;  // [vocab, hidden]: W_in embed(token)
};

/// Concatenates the embeddings of the window, left-padded to max_window
/// slots so the newest token always sits in the last slot.
Vec encode_flat(const TokenVocabulary& vocab, std::span<const std::string> window,
                std::size_t max_window = kContextWindow);

/// Fixed N(0, 1) vector per action id.
class ActionEmbedding {
 public:
  ActionEmbedding(std::size_t num_actions, std::uint64_t seed,
                  std::size_t dim = kActionEmbeddingDim);

  std::size_t num_actions() const { return num_actions_; }
  std::size_t dim() const { return dim_; }
  std::span<const double> embed(std::size_t action) const;

 private:
  std::size_t num_actions_;
  std::size_t dim_;
  std::vector<double> table_;
};

}  // namespace cls
