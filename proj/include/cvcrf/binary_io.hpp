#pragma once

// Little-endian binary streams for the dataset cache and checkpoint files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvcrf::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open for writing: " + path);
  }

  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    write_bytes(&value, sizeof(T));
  }

  template <class T>
  void put_span(std::span<const T> values) {
    static_assert(std::is_trivially_copyable_v<T>);
    write_bytes(values.data(), values.size_bytes());
  }

  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    write_bytes(s.data(), s.size());
  }

  void put_magic(const char (&magic)[9]) { write_bytes(magic, 8); }

  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_);
  }

 private:
  void write_bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_);
  }

  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open for reading: " + path);
  }

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    read_bytes(&value, sizeof(T));
    return value;
  }

  template <class T>
  std::vector<T> get_vector(std::size_t count) {
    std::vector<T> values(count);
    read_bytes(values.data(), count * sizeof(T));
    return values;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    read_bytes(s.data(), n);
    return s;
  }

  void expect_magic(const char (&magic)[9]) {
    char got[8];
    read_bytes(got, 8);
    if (std::memcmp(got, magic, 8) != 0) throw IoError("bad magic in " + path_);
  }

  const std::string& path() const noexcept { return path_; }

 private:
  void read_bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError("truncated file: " + path_);
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace cvcrf::io
