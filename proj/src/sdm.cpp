#include "cls/sdm.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "cls/errors.hpp"
#include "cls/snapshot.hpp"

namespace cls {

Clique::Clique(std::vector<std::uint32_t> indices, std::size_t capacity)
    : indices_(std::move(indices)) {
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (indices_[i] >= capacity)
      throw ContractViolation("clique index " + std::to_string(indices_[i]) +
                              " out of range for capacity " + std::to_string(capacity));
    if (i > 0 && indices_[i] <= indices_[i - 1])
      throw ContractViolation("clique indices must be strictly ascending");
  }
}

bool Clique::contains(std::uint32_t i) const {
  return std::binary_search(indices_.begin(), indices_.end(), i);
}

std::size_t Clique::overlap(const Clique& other) const {
  std::size_t n = 0;
  auto a = indices_.begin();
  auto b = other.indices_.begin();
  while (a != indices_.end() && b != other.indices_.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++n;
      ++a;
      ++b;
    }
  }
  return n;
}

Clique top_k(std::span<const double> p, std::size_t k) {
  if (k > p.size())
    throw ContractViolation("top_k: k=" + std::to_string(k) + " exceeds length " +
                            std::to_string(p.size()));
  std::vector<std::uint32_t> order(p.size());
  std::iota(order.begin(), order.end(), 0u);
  auto better = [&p](std::uint32_t a, std::uint32_t b) {
    return p[a] > p[b] || (p[a] == p[b] && a < b);
  };
  if (k < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                     better);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  return Clique(std::move(order), p.size());
}

void SdmConfig::validate() const {
  if (capacity == 0 || key_dim == 0 || value_dim == 0)
    throw ContractViolation("sdm: capacity, key_dim and value_dim must be positive");
  if (clique_size == 0 || clique_size > capacity)
    throw ContractViolation("sdm: clique size must satisfy 0 < k <= m");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0))
    throw ContractViolation("sdm: learning rate must lie in (0, 1]");
}

std::vector<double> random_normal_matrix(std::size_t rows, std::size_t cols, double scale,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(rows * cols);
  for (auto& x : out) x = normal(rng) / scale;
  return out;
}

SparseMemory::SparseMemory(const SdmConfig& config) : config_(config) {
  config_.validate();
  projection_ = random_normal_matrix(config_.capacity, config_.key_dim,
                                     static_cast<double>(config_.key_dim), config_.seed);
  values_.assign(config_.capacity * config_.value_dim, 0.0);
  usage_.assign(config_.capacity, 0);
}

Vec SparseMemory::project(std::span<const double> key) const {
  if (key.size() != config_.key_dim)
    throw ContractViolation("sdm: key length " + std::to_string(key.size()) + " != " +
                            std::to_string(config_.key_dim));
  return project_columns(key, 0);
}

Vec SparseMemory::project_columns(std::span<const double> part, std::size_t column_offset) const {
  const std::size_t n = config_.key_dim;
  if (column_offset + part.size() > n)
    throw ContractViolation("sdm: column range exceeds key dimension");
  Vec p(config_.capacity, 0.0);
  for (std::size_t i = 0; i < config_.capacity; ++i) {
    const double* row = projection_.data() + i * n + column_offset;
    double acc = 0.0;
    for (std::size_t j = 0; j < part.size(); ++j) acc += row[j] * part[j];
    p[i] = acc;
  }
  return p;
}

void SparseMemory::check_clique(const Clique& clique) const {
  if (clique.size() != config_.clique_size)
    throw ContractViolation("sdm: clique has " + std::to_string(clique.size()) +
                            " cells, expected " + std::to_string(config_.clique_size));
  if (!clique.indices().empty() && clique.indices().back() >= config_.capacity)
    throw ContractViolation("sdm: clique index out of range");
}

ReadResult SparseMemory::read(std::span<const double> key) const {
  Clique clique = top_k(project(key), config_.clique_size);
  Vec prediction = read_clique(clique);
  return {std::move(prediction), std::move(clique)};
}

Vec SparseMemory::read_clique(const Clique& clique) const {
  check_clique(clique);
  const std::size_t d = config_.value_dim;
  Vec out(d, 0.0);
  for (std::uint32_t j : clique) {
    const double* row = values_.data() + static_cast<std::size_t>(j) * d;
    for (std::size_t c = 0; c < d; ++c) out[c] += row[c];
  }
  return out;
}

WriteReport SparseMemory::write(std::span<const double> key, std::span<const double> target) {
  if (target.size() != config_.value_dim)
    throw ContractViolation("sdm: target length " + std::to_string(target.size()) + " != " +
                            std::to_string(config_.value_dim));
  return write_clique(top_k(project(key), config_.clique_size), target);
}

WriteReport SparseMemory::write_clique(const Clique& clique, std::span<const double> target) {
  if (target.size() != config_.value_dim)
    throw ContractViolation("sdm: target length " + std::to_string(target.size()) + " != " +
                            std::to_string(config_.value_dim));
  const Vec predicted = read_clique(clique);
  const std::size_t d = config_.value_dim;
  const double scale = config_.learning_rate / static_cast<double>(config_.clique_size);
  Vec delta(d);
  for (std::size_t c = 0; c < d; ++c) delta[c] = (predicted[c] - target[c]) * scale;
  for (std::uint32_t j : clique) {
    double* row = values_.data() + static_cast<std::size_t>(j) * d;
    for (std::size_t c = 0; c < d; ++c) row[c] -= delta[c];
    ++usage_[j];
  }
  ++writes_;
  return {clique, std::move(delta)};
}

std::size_t SparseMemory::perturb_unused(double magnitude, std::uint64_t noise_seed) {
  if (!(magnitude > 0.0)) throw ContractViolation("perturb_unused: magnitude must be positive");
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, magnitude);
  const std::size_t n = config_.key_dim;
  std::size_t touched = 0;
  for (std::size_t i = 0; i < config_.capacity; ++i) {
    if (usage_[i] != 0) continue;
    double* row = projection_.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += normal(rng);
    ++touched;
  }
  if (touched > 0) projection_modified_ = true;
  return touched;
}

std::span<const double> SparseMemory::projection_row(std::size_t cell) const {
  return {projection_.data() + cell * config_.key_dim, config_.key_dim};
}

std::span<const double> SparseMemory::value_row(std::size_t cell) const {
  return {values_.data() + cell * config_.value_dim, config_.value_dim};
}

void SparseMemory::save(const std::string& path) const {
  snapshot::Writer w(path, "sdm");
  w.u64(config_.capacity);
  w.u64(config_.key_dim);
  w.u64(config_.value_dim);
  w.u64(config_.clique_size);
  w.f64(config_.learning_rate);
  w.u64(config_.seed);
  w.u64(writes_);
  w.u64(projection_modified_ ? 1 : 0);
  if (projection_modified_) w.f64s(projection_);
  w.f64s(values_);
  w.u64s(usage_);
  w.close();
}

SparseMemory SparseMemory::load(const std::string& path) {
  snapshot::Reader r(path, "sdm");
  SdmConfig c;
  c.capacity = r.u64();
  c.key_dim = r.u64();
  c.value_dim = r.u64();
  c.clique_size = r.u64();
  c.learning_rate = r.f64();
  c.seed = r.u64();
  SparseMemory mem(c);
  mem.writes_ = r.u64();
  if (r.u64() != 0) {
    mem.projection_ = r.f64s();
    mem.projection_modified_ = true;
    if (mem.projection_.size() != c.capacity * c.key_dim)
      throw FormatError(path + ": projection size mismatch");
  }
  mem.values_ = r.f64s();
  mem.usage_ = r.u64s();
  if (mem.values_.size() != c.capacity * c.value_dim || mem.usage_.size() != c.capacity)
    throw FormatError(path + ": value table size mismatch");
  return mem;
}

bool operator==(const SparseMemory& a, const SparseMemory& b) {
  const auto& x = a.config_;
  const auto& y = b.config_;
  return x.capacity == y.capacity && x.key_dim == y.key_dim && x.value_dim == y.value_dim &&
         x.clique_size == y.clique_size && x.learning_rate == y.learning_rate &&
         x.seed == y.seed && a.projection_ == b.projection_ && a.values_ == b.values_ &&
         a.usage_ == b.usage_;
}

// ---------------------------------------------------------------------------

namespace {

SdmConfig completion_config(const AssociativeConfig& c) {
  SdmConfig s;
  s.capacity = c.completion_capacity;
  s.key_dim = c.dense_dim;
  s.value_dim = c.capacity;
  s.clique_size = c.completion_clique_size;
  s.learning_rate = 1.0;
  s.seed = c.seed ^ 0x9e3779b97f4a7c15ULL;
  return s;
}

}  // namespace

AssociativeMemory::AssociativeMemory(const AssociativeConfig& config)
    : config_(config), memory_(completion_config(config)) {
  if (config_.clique_size == 0 || config_.clique_size > config_.capacity)
    throw ContractViolation("associative memory: invalid clique size");
  // Stored transposed ([capacity, dense_dim]) so column j of M is contiguous.
  clique_projection_ = random_normal_matrix(config_.capacity, config_.dense_dim,
                                            static_cast<double>(config_.capacity), config_.seed);
}

Vec AssociativeMemory::densify(std::span<const std::uint32_t> indices) const {
  Vec d(config_.dense_dim, 0.0);
  for (std::uint32_t j : indices) {
    if (j >= config_.capacity) throw ContractViolation("associative memory: cue index out of range");
    const double* col = clique_projection_.data() + static_cast<std::size_t>(j) * config_.dense_dim;
    for (std::size_t r = 0; r < config_.dense_dim; ++r) d[r] += col[r];
  }
  return d;
}

void AssociativeMemory::store(const Clique& clique) {
  if (clique.size() != config_.clique_size)
    throw ContractViolation("associative memory: clique must have exactly k cells");
  Vec indicator(config_.capacity, 0.0);
  for (std::uint32_t j : clique) indicator[j] = 1.0;
  memory_.write(densify(clique.indices()), indicator);
}

Completion AssociativeMemory::read_once(std::span<const std::uint32_t> cue) const {
  const ReadResult r = memory_.read(densify(cue));
  Completion out;
  out.clique = top_k(r.prediction, config_.clique_size);
  for (std::uint32_t j : out.clique) out.mass += r.prediction[j];
  out.confident = out.mass >= 0.5 * static_cast<double>(config_.clique_size);
  return out;
}

Completion AssociativeMemory::complete(std::span<const std::uint32_t> partial) const {
  if (partial.empty()) throw ContractViolation("associative memory: empty cue");
  std::vector<std::uint32_t> cue(partial.begin(), partial.end());
  std::sort(cue.begin(), cue.end());
  cue.erase(std::unique(cue.begin(), cue.end()), cue.end());
  Completion result = read_once(cue);
  for (std::size_t i = 0; i < config_.settle_iterations; ++i) {
    Completion next = read_once(result.clique.indices());
    const bool fixed_point = next.clique == result.clique;
    result = std::move(next);
    if (fixed_point) break;
  }
  std::size_t covered = 0;
  for (std::uint32_t j : cue) covered += result.clique.contains(j) ? 1 : 0;
  result.cue_coverage = static_cast<double>(covered) / static_cast<double>(cue.size());
  result.confident = result.confident && result.cue_coverage >= 0.5;
  return result;
}

}  // namespace cls
