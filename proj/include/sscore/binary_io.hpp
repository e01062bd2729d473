#pragma once

// Little-endian binary encoding shared by the weights, dataset and tensor
// file formats. Readers load the whole file up front and validate before any
// caller state is touched.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sscore/error.hpp"

namespace sscore::io {

class Writer {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void f64s(std::span<const double> values) {
    bytes_.reserve(bytes_.size() + 8 * values.size());
    for (double v : values) f64(v);
  }

  const std::vector<char>& bytes() const { return bytes_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "cannot open ", path.string(), " for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    require(static_cast<bool>(out), "write failed: ", path.string());
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes_;
};

class Reader {
 public:
  static Reader open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open ", path.string());
    Reader r;
    r.name_ = path.string();
    r.bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
  }

  void expect_magic(std::string_view tag) {
    need(tag.size());
    require(std::string_view(bytes_.data() + pos_, tag.size()) == tag, name_, ": bad magic, expected \"", tag,
            "\"");
    pos_ += tag.size();
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::vector<double> f64s(std::size_t n) {
    require(n <= (bytes_.size() - pos_) / 8, name_, ": truncated file (need ", n, " doubles at offset ", pos_, ")");
    std::vector<double> out(n);
    for (auto& v : out) v = f64();
    return out;
  }
  void expect_end() const {
    require(pos_ == bytes_.size(), name_, ": ", bytes_.size() - pos_, " trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    require(bytes_.size() - pos_ >= n, name_, ": truncated file at offset ", pos_);
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string name_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace sscore::io
