#include "cls/snapshot.hpp"

#include <cstring>

#include "cls/errors.hpp"

namespace cls::snapshot {
namespace {

constexpr char kMagic[8] = {'C', 'L', 'S', 'S', 'N', 'A', 'P', '1'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Writer::Writer(const std::string& path, const std::string& kind)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) throw FormatError("cannot open snapshot for writing: " + path);
  out_.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out_, kVersion);
  put<std::uint32_t>(out_, static_cast<std::uint32_t>(kind.size()));
  out_.write(kind.data(), static_cast<std::streamsize>(kind.size()));
}

void Writer::tag(char t) { out_.put(t); }

void Writer::u64(std::uint64_t v) {
  tag('u');
  put(out_, v);
}

void Writer::f64(double v) {
  tag('d');
  put(out_, v);
}

void Writer::str(const std::string& s) {
  tag('s');
  put<std::uint64_t>(out_, s.size());
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void Writer::f64s(const std::vector<double>& v) {
  tag('D');
  put<std::uint64_t>(out_, v.size());
  out_.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void Writer::u64s(const std::vector<std::uint64_t>& v) {
  tag('U');
  put<std::uint64_t>(out_, v.size());
  out_.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(std::uint64_t)));
}

void Writer::close() {
  out_.flush();
  if (!out_) throw FormatError("failed writing snapshot: " + path_);
  out_.close();
}

Reader::Reader(const std::string& path, const std::string& expected_kind)
    : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw FormatError("cannot open snapshot: " + path);
  char magic[8];
  raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError(path + ": not a snapshot file");
  std::uint32_t version = 0;
  raw(&version, sizeof(version));
  if (version != kVersion)
    throw FormatError(path + ": unsupported snapshot version " + std::to_string(version));
  std::uint32_t len = 0;
  raw(&len, sizeof(len));
  std::string kind(len, '\0');
  raw(kind.data(), len);
  if (kind != expected_kind)
    throw FormatError(path + ": snapshot holds '" + kind + "', expected '" + expected_kind + "'");
}

void Reader::raw(void* dst, std::size_t n) {
  in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (!in_) throw FormatError(path_ + ": truncated snapshot");
}

void Reader::expect(char t) {
  char got = 0;
  raw(&got, 1);
  if (got != t)
    throw FormatError(path_ + ": field tag mismatch (expected '" + std::string(1, t) + "')");
}

std::uint64_t Reader::u64() {
  expect('u');
  std::uint64_t v;
  raw(&v, sizeof(v));
  return v;
}

double Reader::f64() {
  expect('d');
  double v;
  raw(&v, sizeof(v));
  return v;
}

std::string Reader::str() {
  expect('s');
  std::uint64_t n;
  raw(&n, sizeof(n));
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

std::vector<double> Reader::f64s() {
  expect('D');
  std::uint64_t n;
  raw(&n, sizeof(n));
  std::vector<double> v(n);
  raw(v.data(), n * sizeof(double));
  return v;
}

std::vector<std::uint64_t> Reader::u64s() {
  expect('U');
  std::uint64_t n;
  raw(&n, sizeof(n));
  std::vector<std::uint64_t> v(n);
  raw(v.data(), n * sizeof(std::uint64_t));
  return v;
}

}  // namespace cls::snapshot
