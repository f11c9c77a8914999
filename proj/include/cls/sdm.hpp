#pragma once

// Sparse distributed memory.
//
// A key x of length n is projected through a fixed random matrix P [m, n].
// The k largest entries of p = P x select a clique of cells; the prediction
// is the sum of the value rows V[j] over the clique. Writing moves every
// clique row by the same amount so that the summed prediction approaches the
// target:
//
//   delta = (v_hat - v) * eta / k
//   V[j] <- V[j] - delta           for j in clique
//
// Only the k clique rows change, which is what makes memories with disjoint
// cliques non-interfering.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cls {

using Vec = std::vector<double>;

/// Sorted, duplicate-free set of active cell indices.
class Clique {
 public:
  Clique() = default;
  /// Validates (sorted, distinct, < capacity) and throws ContractViolation
  /// otherwise. Size is not checked here; see SparseMemory.
  Clique(std::vector<std::uint32_t> indices, std::size_t capacity);

  const std::vector<std::uint32_t>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  bool contains(std::uint32_t i) const;
  std::size_t overlap(const Clique& other) const;

  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }

  friend bool operator==(const Clique&, const Clique&) = default;

 private:
  std::vector<std::uint32_t> indices_;
};

/// Indices of the k largest entries of p, ties broken towards the lower
/// index, returned in ascending order.
Clique top_k(std::span<const double> p, std::size_t k);

struct SdmConfig {
  std::size_t capacity = 10000;  // m
  std::size_t key_dim = 400;     // n
  std::size_t value_dim = 1;     // d_v
  std::size_t clique_size = 32;  // k
  double learning_rate = 0.1;    // eta
  std::uint64_t seed = 0;

  void validate() const;
};

struct ReadResult {
  Vec prediction;
  Clique clique;
};

struct WriteReport {
  Clique clique;
  Vec delta;
};

class SparseMemory {
 public:
  explicit SparseMemory(const SdmConfig& config);

  const SdmConfig& config() const { return config_; }
  std::size_t capacity() const { return config_.capacity; }
  std::size_t key_dim() const { return config_.key_dim; }
  std::size_t value_dim() const { return config_.value_dim; }
  std::size_t clique_size() const { return config_.clique_size; }

  /// p = P x.
  Vec project(std::span<const double> key) const;
  /// P[:, offset : offset + part.size()] * part. Lets callers whose keys are
  /// concatenations reuse the projection of a shared prefix.
  Vec project_columns(std::span<const double> part, std::size_t column_offset) const;

  ReadResult read(std::span<const double> key) const;
  Vec read_clique(const Clique& clique) const;

  WriteReport write(std::span<const double> key, std::span<const double> target);
  WriteReport write_clique(const Clique& clique, std::span<const double> target);

  /// Adds N(0, magnitude^2) noise to projection rows of cells that have never
  /// been written through. Returns the number of rows touched.
  std::size_t perturb_unused(double magnitude, std::uint64_t noise_seed);

  std::span<const double> projection_row(std::size_t cell) const;
  std::span<const double> value_row(std::size_t cell) const;
  const std::vector<double>& values() const { return values_; }
  const std::vector<std::uint64_t>& usage_counts() const { return usage_; }
  std::uint64_t write_count() const { return writes_; }
  /// True once perturb_unused has changed P; P is then no longer a pure
  /// function of the seed.
  bool projection_modified() const { return projection_modified_; }

  void save(const std::string& path) const;
  static SparseMemory load(const std::string& path);

  friend bool operator==(const SparseMemory& a, const SparseMemory& b);

 private:
  void check_clique(const Clique& clique) const;

  SdmConfig config_;
  std::vector<double> projection_;  // row-major [m, n]
  std::vector<double> values_;      // row-major [m, d_v]
  std::vector<std::uint64_t> usage_;
  std::uint64_t writes_ = 0;
  bool projection_modified_ = false;
};

/// Fills a row-major [rows, cols] matrix with N(0, 1) / scale draws.
std::vector<double> random_normal_matrix(std::size_t rows, std::size_t cols, double scale,
                                         std::uint64_t seed);

struct AssociativeConfig {
  std::size_t capacity = 10000;             // m of the primary memory
  std::size_t clique_size = 32;             // k
  std::size_t dense_dim = 500;              // length of d = M s
  std::size_t completion_capacity = 1000;   // cells of the completion memory
  std::size_t completion_clique_size = 32;
  std::size_t settle_iterations = 2;        // re-cue passes after the first read
  std::uint64_t seed = 0;
};

struct Completion {
  Clique clique;
  double mass = 0.0;           // sum of the retrieved indicator over the clique
  double cue_coverage = 0.0;   // fraction of cue cells present in the clique
  bool confident = false;      // mass >= 0.5 k and cue_coverage >= 0.5
};

/// Stores cliques of a primary memory so they can be recovered from partial
/// cues. The clique indicator s is densified through a fixed matrix M and
/// used as the key of a second sparse memory whose value is s itself.
class AssociativeMemory {
 public:
  explicit AssociativeMemory(const AssociativeConfig& config);

  const AssociativeConfig& config() const { return config_; }
  const SparseMemory& completion_memory() const { return memory_; }

  /// d = M s for the indicator s of the given indices.
  Vec densify(std::span<const std::uint32_t> indices) const;

  void store(const Clique& clique);
  Completion complete(std::span<const std::uint32_t> partial) const;

 private:
  Completion read_once(std::span<const std::uint32_t> cue) const;

  AssociativeConfig config_;
  std::vector<double> clique_projection_;  // M transposed: row j is column j of M
  SparseMemory memory_;
};

}  // namespace cls
