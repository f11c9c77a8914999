#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "cls/errors.hpp"
#include "cls/sdm.hpp"
#include "doctest.h"

using namespace cls;

namespace {

Vec random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

double norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

SdmConfig small_config(double eta = 1.0) {
  SdmConfig c;
  c.capacity = 2000;
  c.key_dim = 64;
  c.value_dim = 3;
  c.clique_size = 16;
  c.learning_rate = eta;
  c.seed = 7;
  return c;
}

// Full-sort reference for top_k.
std::vector<std::uint32_t> sorted_top(const Vec& p, std::size_t k) {
  std::vector<std::uint32_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return p[a] > p[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

TEST_CASE("project is the linear map P x") {
  SparseMemory mem(small_config());
  CHECK(mem.project(Vec(64, 0.0)) == Vec(2000, 0.0));

  SdmConfig big;
  big.capacity = 10000;
  big.key_dim = 400;
  big.seed = 3;
  SparseMemory m2(big);
  std::mt19937_64 rng(11);
  const Vec key = random_vec(400, rng);
  const Vec p = m2.project(key);
  double worst = 0.0;
  for (std::size_t i = 0; i < 10000; ++i) {
    auto row = m2.projection_row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < 400; ++j) acc += row[j] * key[j];
    worst = std::max(worst, std::abs(acc - p[i]));
  }
  CHECK(worst < 1e-9);

  CHECK_THROWS_AS(mem.project(Vec(63, 0.0)), ContractViolation);
}

TEST_CASE("projection entries are scaled standard normals") {
  SdmConfig c;
  c.capacity = 2000;
  c.key_dim = 100;
  SparseMemory mem(c);
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < c.capacity; ++i)
    for (double x : mem.projection_row(i)) {
      sum += x;
      sq += x * x;
    }
  const double n = static_cast<double>(c.capacity * c.key_dim);
  const double sd = std::sqrt(sq / n - (sum / n) * (sum / n));
  CHECK(sd == doctest::Approx(1.0 / 100.0).epsilon(0.02));
}

TEST_CASE("top_k ordering and tie-breaking") {
  CHECK(top_k(Vec{3, 1, 2}, 2).indices() == std::vector<std::uint32_t>{0, 2});
  CHECK(top_k(Vec{5, 5, 5}, 2).indices() == std::vector<std::uint32_t>{0, 1});
  CHECK(top_k(Vec{1, 2}, 0).size() == 0);
  CHECK_THROWS_AS(top_k(Vec{1, 2}, 3), ContractViolation);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec p = random_vec(5000, rng);
    CHECK(top_k(p, 32).indices() == sorted_top(p, 32));
  }
  // Heavy ties: integer-valued entries.
  std::uniform_int_distribution<int> small(0, 4);
  for (int trial = 0; trial < 20; ++trial) {
    Vec p(300);
    for (auto& x : p) x = small(rng);
    CHECK(top_k(p, 40).indices() == sorted_top(p, 40));
  }
}

TEST_CASE("clique validation") {
  CHECK_THROWS_AS(Clique({3, 1}, 10), ContractViolation);
  CHECK_THROWS_AS(Clique({1, 1}, 10), ContractViolation);
  CHECK_THROWS_AS(Clique({1, 10}, 10), ContractViolation);
  Clique a({1, 4, 7}, 10), b({0, 4, 7, 9}, 10);
  CHECK(a.overlap(b) == 2);
  CHECK(a.contains(4));
  CHECK_FALSE(a.contains(5));
}

TEST_CASE("hand-sized projection") {
  // P is fixed at construction, so check the map through a 2x2 memory whose
  // rows we read back.
  SdmConfig c;
  c.capacity = 2;
  c.key_dim = 2;
  c.clique_size = 1;
  SparseMemory mem(c);
  const Vec key{3, 4};
  const Vec p = mem.project(key);
  for (std::size_t i = 0; i < 2; ++i) {
    auto r = mem.projection_row(i);
    CHECK(p[i] == doctest::Approx(3 * r[0] + 4 * r[1]));
  }
}

TEST_CASE("fresh read is zero and read has no side effects") {
  SparseMemory mem(small_config());
  std::mt19937_64 rng(1);
  const Vec key = random_vec(64, rng);
  const auto r = mem.read(key);
  CHECK(r.prediction == Vec(3, 0.0));
  CHECK(r.clique.size() == 16);
  const auto again = mem.read(key);
  CHECK(again.clique == r.clique);
  CHECK(mem.write_count() == 0);
}

TEST_CASE("one-shot storage and partial learning rate") {
  std::mt19937_64 rng(2);
  const Vec key = random_vec(64, rng);
  const Vec v{1.5, -2.0, 0.25};
  {
    SparseMemory mem(small_config(1.0));
    mem.write(key, v);
    const Vec got = mem.read(key).prediction;
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(got[c] - v[c]) < 1e-9);
    // Scalar hand calculation: each of the k rows holds v / k.
    const auto clique = mem.read(key).clique;
    CHECK(mem.value_row(clique.indices()[0])[0] == doctest::Approx(1.5 / 16.0));
  }
  {
    SparseMemory mem(small_config(0.5));
    mem.write(key, v);
    const Vec got = mem.read(key).prediction;
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(got[c] - 0.5 * v[c]) < 1e-9);
  }
}

TEST_CASE("writing the current prediction is a fixed point") {
  SparseMemory mem(small_config(0.3));
  std::mt19937_64 rng(3);
  const Vec key = random_vec(64, rng);
  mem.write(key, Vec{1, 2, 3});
  const auto before = mem.values();
  const Vec current = mem.read(key).prediction;
  const auto report = mem.write(key, current);
  for (double d : report.delta) CHECK(d == 0.0);
  CHECK(mem.values() == before);
}

TEST_CASE("writes touch exactly the clique rows") {
  SparseMemory mem(small_config(0.7));
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec key = random_vec(64, rng);
    const Vec target = random_vec(3, rng);
    const auto before = mem.values();
    const auto report = mem.write(key, target);
    const auto& after = mem.values();
    for (std::size_t row = 0; row < mem.capacity(); ++row) {
      bool changed = false;
      for (std::size_t c = 0; c < 3; ++c) changed |= before[row * 3 + c] != after[row * 3 + c];
      if (!report.clique.contains(static_cast<std::uint32_t>(row))) CHECK_FALSE(changed);
    }
  }
}

TEST_CASE("disjoint cliques do not interfere") {
  SparseMemory mem(small_config(1.0));
  std::mt19937_64 rng(5);
  const Vec a = random_vec(64, rng);
  Vec b;
  do {
    b = random_vec(64, rng);
  } while (mem.read(a).clique.overlap(mem.read(b).clique) != 0);
  mem.write(b, Vec{0.3, 0.2, 0.1});
  const Vec before = mem.read(b).prediction;
  mem.write(a, Vec{9, 9, 9});
  CHECK(mem.read(b).prediction == before);
}

TEST_CASE("interference equals overlap times delta") {
  SparseMemory mem(small_config(0.8));
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 40; ++trial) {
    const Vec a = random_vec(64, rng);
    // Correlated partner so overlaps span a useful range.
    Vec b = a;
    std::normal_distribution<double> noise(0.0, 0.2 * trial / 10.0);
    for (auto& x : b) x += noise(rng);
    const Vec before = mem.read(b).prediction;
    const std::size_t o = mem.read(a).clique.overlap(mem.read(b).clique);
    const auto report = mem.write(a, random_vec(3, rng));
    const Vec after = mem.read(b).prediction;
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(std::abs((after[c] - before[c]) + static_cast<double>(o) * report.delta[c]) < 1e-9);
  }
}

TEST_CASE("repeated writes contract the error by (1 - eta)") {
  SparseMemory mem(small_config(0.1));
  std::mt19937_64 rng(7);
  const Vec key = random_vec(64, rng);
  const Vec target{2.0, -1.0, 0.5};
  auto error = [&] {
    Vec p = mem.read(key).prediction;
    for (std::size_t c = 0; c < 3; ++c) p[c] -= target[c];
    return norm(p);
  };
  double prev = error();
  for (int i = 0; i < 50; ++i) {
    mem.write(key, target);
    const double e = error();
    CHECK(std::abs(e / prev - 0.9) < 1e-9);
    prev = e;
  }
}

TEST_CASE("identical seeds and operations give identical memories") {
  SparseMemory a(small_config(0.4)), b(small_config(0.4));
  std::mt19937_64 ra(8), rb(8);
  for (int i = 0; i < 100; ++i) {
    const auto wa = a.write(random_vec(64, ra), random_vec(3, ra));
    const auto wb = b.write(random_vec(64, rb), random_vec(3, rb));
    CHECK(wa.clique == wb.clique);
  }
  CHECK(a == b);
}

namespace {

// Stores n keys whose cliques pairwise overlap in fewer than k/2 cells, in
// sequence at eta = 1, then returns mean read error norm / mean target norm.
double streaming_error_ratio(std::size_t n) {
  SdmConfig c;
  c.capacity = 10000;
  c.key_dim = 400;
  c.value_dim = 4;
  c.clique_size = 32;
  c.learning_rate = 1.0;
  c.seed = 21;
  SparseMemory mem(c);
  std::mt19937_64 rng(22);
  std::vector<Vec> targets;
  std::vector<Clique> cliques;
  while (cliques.size() < n) {
    Clique cl = mem.read(random_vec(400, rng)).clique;
    bool ok = true;
    for (const auto& other : cliques) ok &= other.overlap(cl) < 16;
    if (!ok) continue;
    cliques.push_back(std::move(cl));
    targets.push_back(random_vec(4, rng));
  }
  for (std::size_t i = 0; i < n; ++i) mem.write_clique(cliques[i], targets[i]);
  double err = 0.0, tnorm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Vec p = mem.read_clique(cliques[i]);
    for (std::size_t d = 0; d < 4; ++d) p[d] -= targets[i][d];
    err += norm(p);
    tnorm += norm(targets[i]);
  }
  return err / tnorm;
}

}  // namespace

TEST_CASE("streaming capacity: 100 keys stay under 10% error") {
  CHECK(streaming_error_ratio(100) < 0.1);
}

// Each later write shifts an earlier key's read by overlap * delta, with an
// expected overlap of k^2/m = 0.1 cells per pair of random keys. The residual
// error after N sequential one-shot writes is about sqrt(N / 2m) of the target
// norm, i.e. ~0.16 for N = 500, so the 10% figure cannot hold at that load.
TEST_CASE("streaming capacity: 500 keys under 10% error" * doctest::should_fail()) {
  const double ratio = streaming_error_ratio(500);
  MESSAGE("measured error ratio at N=500: " << ratio);
  CHECK(ratio < 0.1);
}

TEST_CASE("perturb_unused only moves rows that were never written") {
  SparseMemory fresh(small_config());
  CHECK(fresh.perturb_unused(0.01, 99) == 2000);
  CHECK(fresh.projection_modified());
  CHECK_THROWS_AS(fresh.perturb_unused(0.0, 1), ContractViolation);

  SparseMemory mem(small_config());
  const SparseMemory reference(small_config());
  std::mt19937_64 rng(9);
  const auto report = mem.write(random_vec(64, rng), Vec{1, 1, 1});
  const std::size_t touched = mem.perturb_unused(0.01, 1234);
  CHECK(touched == 2000 - 16);

  // Regenerate the noise stream independently and compare row by row.
  std::mt19937_64 noise_rng(1234);
  std::normal_distribution<double> noise(0.0, 0.01);
  for (std::size_t i = 0; i < 2000; ++i) {
    auto now = mem.projection_row(i);
    auto was = reference.projection_row(i);
    if (report.clique.contains(static_cast<std::uint32_t>(i))) {
      CHECK(std::equal(now.begin(), now.end(), was.begin()));
    } else {
      for (std::size_t j = 0; j < 64; ++j) CHECK(now[j] == was[j] + noise(noise_rng));
    }
  }
}

TEST_CASE("snapshot round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "cls_test_sdm";
  std::filesystem::create_directories(dir);
  SparseMemory mem(small_config(0.5));
  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) mem.write(random_vec(64, rng), random_vec(3, rng));
  mem.save((dir / "plain.snap").string());
  CHECK(SparseMemory::load((dir / "plain.snap").string()) == mem);

  mem.perturb_unused(0.05, 3);
  mem.save((dir / "perturbed.snap").string());
  const auto loaded = SparseMemory::load((dir / "perturbed.snap").string());
  CHECK(loaded == mem);
  CHECK(loaded.projection_modified());

  CHECK_THROWS_AS(SparseMemory::load((dir / "missing.snap").string()), FormatError);
}

// ---------------------------------------------------------------------------

namespace {

Clique random_clique(std::size_t m, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::uint32_t> all(m);
  std::iota(all.begin(), all.end(), 0u);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return Clique(all, m);
}

}  // namespace

TEST_CASE("associative memory self-retrieval for 200 cliques") {
  AssociativeMemory assoc(AssociativeConfig{});
  std::mt19937_64 rng(31);
  std::vector<Clique> stored;
  for (int i = 0; i < 200; ++i) {
    stored.push_back(random_clique(10000, 32, rng));
    assoc.store(stored.back());
  }
  for (const auto& c : stored) {
    const auto got = assoc.complete(c.indices());
    CHECK(got.clique == c);
    CHECK(got.confident);
  }
}

TEST_CASE("associative completion prefers the cued clique") {
  AssociativeMemory assoc(AssociativeConfig{});
  std::mt19937_64 rng(32);
  Clique first = random_clique(10000, 32, rng);
  // Second clique sharing 6 (< k/4) cells with the first.
  std::vector<std::uint32_t> second_idx(first.indices().begin(), first.indices().begin() + 6);
  while (second_idx.size() < 32) {
    std::uniform_int_distribution<std::uint32_t> cell(0, 9999);
    const auto c = cell(rng);
    if (!first.contains(c) && std::find(second_idx.begin(), second_idx.end(), c) == second_idx.end())
      second_idx.push_back(c);
  }
  std::sort(second_idx.begin(), second_idx.end());
  Clique second(second_idx, 10000);
  assoc.store(first);
  assoc.store(second);

  std::vector<std::uint32_t> cue(first.indices().begin(), first.indices().begin() + 16);
  CHECK(assoc.complete(cue).clique == first);
  std::vector<std::uint32_t> cue2(second.indices().end() - 16, second.indices().end());
  CHECK(assoc.complete(cue2).clique == second);
}

TEST_CASE("never-stored cue is flagged low confidence") {
  AssociativeMemory assoc(AssociativeConfig{});
  std::mt19937_64 rng(33);
  for (int i = 0; i < 50; ++i) assoc.store(random_clique(10000, 32, rng));
  int flagged = 0;
  for (int i = 0; i < 20; ++i) {
    const Clique novel = random_clique(10000, 32, rng);
    flagged += assoc.complete(novel.indices()).confident ? 0 : 1;
  }
  CHECK(flagged == 20);
  CHECK_THROWS_AS(assoc.complete(std::vector<std::uint32_t>{}), ContractViolation);
  CHECK_THROWS_AS(assoc.complete(std::vector<std::uint32_t>{10000}), ContractViolation);
}
