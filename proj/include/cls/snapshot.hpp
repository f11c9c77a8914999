#pragma once

// Versioned binary container shared by memory and network snapshots.
//
// Layout (little-endian):
//   magic   "CLSSNAP1" (8 bytes)
//   version u32 (currently 1)
//   kind    u32 length + bytes ("sdm", "mlp", ...)
//   payload sequence of typed fields written by the owner
//
// Every field is prefixed with a one-byte tag so a reader that drifts out of
// sync fails loudly instead of reinterpreting bytes.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace cls::snapshot {

inline constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  Writer(const std::string& path, const std::string& kind);

  void u64(std::uint64_t v);
  void f64(double v);
  void str(const std::string& s);
  void f64s(const std::vector<double>& v);
  void u64s(const std::vector<std::uint64_t>& v);

  void close();

 private:
  void tag(char t);
  std::ofstream out_;
  std::string path_;
};

class Reader {
 public:
  Reader(const std::string& path, const std::string& expected_kind);

  std::uint64_t u64();
  double f64();
  std::string str();
  std::vector<double> f64s();
  std::vector<std::uint64_t> u64s();

 private:
  void expect(char t);
  void raw(void* dst, std::size_t n);
  std::ifstream in_;
  std::string path_;
};

}  // namespace cls::snapshot
