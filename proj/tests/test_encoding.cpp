#include <cmath>
#include <random>

#include "cls/encoding.hpp"
#include "cls/errors.hpp"
#include "doctest.h"

using namespace cls;

namespace {

const std::vector<std::string> kBroad = {"Maybe edible object", "A bird", "A land animal", "A plant"};

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("token embeddings") {
  TokenVocabulary vocab(kBroad, 1);
  CHECK(vocab.size() == 8);
  CHECK(vocab.dim() == 100);
  const auto a = vocab.embed("yes");
  const auto b = vocab.embed("yes");
  CHECK(std::equal(a.begin(), a.end(), b.begin()));

  const auto banana = vocab.embed("banana");
  const auto unknown = vocab.embed("?");
  CHECK(std::equal(banana.begin(), banana.end(), unknown.begin()));

  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TokenVocabulary v(kBroad, seed);
    CHECK(cosine(v.embed("yes"), v.embed("no")) < 0.5);
  }
}

TEST_CASE("vocabulary dumps to json") {
  TokenVocabulary vocab(kBroad, 3);
  const std::string js = vocab.to_json();
  CHECK(js.find("\"A bird\"") != std::string::npos);
  CHECK(js.find("\"embeddings\"") != std::string::npos);
}

TEST_CASE("recurrent encoder basics") {
  TokenVocabulary vocab(kBroad, 0);
  RecurrentSparseEncoder enc(vocab, RecurrentEncoderConfig{});

  const std::vector<std::string> empty;
  CHECK(enc.encode(empty) == Vec(200, 0.0));

  const std::vector<std::string> ab{"A bird", "yes"};
  const std::vector<std::string> ba{"yes", "A bird"};
  const Vec x = enc.encode(ab);
  const Vec y = enc.encode(ba);
  CHECK(x.size() == 200);
  double diff = 0;
  for (std::size_t i = 0; i < 200; ++i) diff += (x[i] - y[i]) * (x[i] - y[i]);
  CHECK(diff > 0.0);

  const std::vector<std::string> one{"no"};
  CHECK(enc.encode(one) == enc.encode(one));
  // Interleaving other calls does not leak state.
  enc.encode(ab);
  CHECK(enc.encode(one) == enc.encode(one));

  const std::vector<std::string> seven(7, "yes");
  CHECK_THROWS_AS(enc.encode(seven), ContractViolation);
}

TEST_CASE("recurrent encoder is a pure function with exactly k_enc active units") {
  TokenVocabulary vocab(kBroad, 5);
  RecurrentEncoderConfig cfg;
  cfg.seed = 9;
  RecurrentSparseEncoder enc(vocab, cfg);
  RecurrentSparseEncoder twin(vocab, cfg);
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> len(0, 6), pick(0, vocab.size() - 1);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<std::string> w(len(rng));
    for (auto& t : w) t = vocab.tokens()[pick(rng)];
    const Vec a = enc.encode(w);
    CHECK(a == enc.encode(w));
    CHECK(a == twin.encode(w));
    CHECK(a.size() == 200);
    for (const auto& state : enc.trace(w)) CHECK(state.size() == 32);
  }
}

TEST_CASE("distinct windows rarely collide") {
  std::vector<std::string> tokens;
  for (int i = 0; i < 26; ++i) tokens.push_back("t" + std::to_string(i));
  TokenVocabulary vocab(tokens, 2);
  REQUIRE(vocab.size() == 30);
  RecurrentSparseEncoder enc(vocab, RecurrentEncoderConfig{});
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::size_t> pick(0, 29);
  int pairs = 0, collisions = 0;
  while (pairs < 10000) {
    std::vector<std::string> a(6), b(6);
    for (auto& t : a) t = vocab.tokens()[pick(rng)];
    for (auto& t : b) t = vocab.tokens()[pick(rng)];
    if (a == b) continue;
    ++pairs;
    collisions += enc.trace(a).back() == enc.trace(b).back() ? 1 : 0;
  }
  MESSAGE("collisions: " << collisions << " / " << pairs);
  CHECK(collisions < 100);
}

TEST_CASE("flat encoder left-pads") {
  TokenVocabulary vocab(kBroad, 4);
  const auto pad = vocab.embed(kPadToken);
  auto segment = [](const Vec& v, std::size_t j) {
    return std::vector<double>(v.begin() + static_cast<long>(j * 100),
                               v.begin() + static_cast<long>((j + 1) * 100));
  };
  const std::vector<std::string> full{"A bird", "yes", "no", "?", "yes", "no"};
  const Vec f = encode_flat(vocab, full);
  REQUIRE(f.size() == 600);
  for (std::size_t j = 0; j < 6; ++j) {
    const auto e = vocab.embed(full[j]);
    CHECK(segment(f, j) == std::vector<double>(e.begin(), e.end()));
  }

  const Vec empty = encode_flat(vocab, std::vector<std::string>{});
  for (std::size_t j = 0; j < 6; ++j) CHECK(segment(empty, j) == std::vector<double>(pad.begin(), pad.end()));

  const std::vector<std::string> two{"A plant", "no"};
  const Vec t = encode_flat(vocab, two);
  for (std::size_t j = 0; j < 4; ++j) CHECK(segment(t, j) == std::vector<double>(pad.begin(), pad.end()));
  const auto p = vocab.embed("A plant");
  const auto n = vocab.embed("no");
  CHECK(segment(t, 4) == std::vector<double>(p.begin(), p.end()));
  CHECK(segment(t, 5) == std::vector<double>(n.begin(), n.end()));

  CHECK_THROWS_AS(encode_flat(vocab, std::vector<std::string>(7, "no")), ContractViolation);
}

TEST_CASE("action embeddings") {
  ActionEmbedding actions(15, 8);
  CHECK(actions.dim() == 200);
  for (std::size_t a = 0; a < 15; ++a)
    for (std::size_t b = a + 1; b < 15; ++b) {
      const auto x = actions.embed(a);
      const auto y = actions.embed(b);
      CHECK_FALSE(std::equal(x.begin(), x.end(), y.begin()));
    }
  CHECK_THROWS_AS(actions.embed(15), ContractViolation);
}
