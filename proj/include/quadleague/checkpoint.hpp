#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "quadleague/rng.hpp"
#include "quadleague/tape.hpp"

namespace quadleague {

// Versioned binary container for parameter tensors, optimizer moments and
// run metadata. Round trips are bit-stable: save -> load -> save yields
// identical bytes.
template <class S>
struct Checkpoint {
  static constexpr uint32_t kMagic = 0x4b434c51;  // "QLCK"
  static constexpr uint32_t kVersion = 1;

  std::map<std::string, int64_t> meta_int;      // iteration, config shape fields, ...
  std::map<std::string, double> meta_double;    // curriculum progress, ...
  std::map<std::string, uint64_t> rng_cursors;  // generator states
  std::vector<std::pair<std::string, nn::Mat<S>>> tensors;

  void put_tensor(const std::string& name, const nn::Mat<S>& m) { tensors.emplace_back(name, m); }

  const nn::Mat<S>& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw std::runtime_error("Checkpoint: missing tensor " + name);
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return true;
    return false;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Checkpoint: cannot write " + path);
    write_u32(f, kMagic);
    write_u32(f, kVersion);
    write_u32(f, static_cast<uint32_t>(sizeof(S)));

    write_u32(f, static_cast<uint32_t>(meta_int.size()));
    for (const auto& [k, v] : meta_int) {
      write_str(f, k);
      f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    write_u32(f, static_cast<uint32_t>(meta_double.size()));
    for (const auto& [k, v] : meta_double) {
      write_str(f, k);
      f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    write_u32(f, static_cast<uint32_t>(rng_cursors.size()));
    for (const auto& [k, v] : rng_cursors) {
      write_str(f, k);
      f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    write_u32(f, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
      write_str(f, name);
      write_u32(f, static_cast<uint32_t>(m.rows()));
      write_u32(f, static_cast<uint32_t>(m.cols()));
      f.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(S) * static_cast<size_t>(m.size())));
    }
    if (!f) throw std::runtime_error("Checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Checkpoint: cannot open " + path);
    Checkpoint c;
    if (read_u32(f) != kMagic) throw std::runtime_error("Checkpoint: bad magic in " + path);
    const uint32_t version = read_u32(f);
    if (version != kVersion) throw std::runtime_error("Checkpoint: unsupported version");
    if (read_u32(f) != sizeof(S)) throw std::runtime_error("Checkpoint: scalar width mismatch");

    for (uint32_t i = 0, n = read_u32(f); i < n; ++i) {
      const std::string k = read_str(f);
      int64_t v;
      f.read(reinterpret_cast<char*>(&v), sizeof(v));
      c.meta_int[k] = v;
    }
    for (uint32_t i = 0, n = read_u32(f); i < n; ++i) {
      const std::string k = read_str(f);
      double v;
      f.read(reinterpret_cast<char*>(&v), sizeof(v));
      c.meta_double[k] = v;
    }
    for (uint32_t i = 0, n = read_u32(f); i < n; ++i) {
      const std::string k = read_str(f);
      uint64_t v;
      f.read(reinterpret_cast<char*>(&v), sizeof(v));
      c.rng_cursors[k] = v;
    }
    for (uint32_t i = 0, n = read_u32(f); i < n; ++i) {
      const std::string name = read_str(f);
      const uint32_t rows = read_u32(f);
      const uint32_t cols = read_u32(f);
      nn::Mat<S> m(rows, cols);
      f.read(reinterpret_cast<char*>(m.data()),
             static_cast<std::streamsize>(sizeof(S) * static_cast<size_t>(m.size())));
      c.tensors.emplace_back(name, std::move(m));
    }
    if (!f) throw std::runtime_error("Checkpoint: truncated file " + path);
    return c;
  }

 private:
  static void write_u32(std::ostream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static uint32_t read_u32(std::istream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static void write_str(std::ostream& f, const std::string& s) {
    write_u32(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_str(std::istream& f) {
    const uint32_t n = read_u32(f);
    std::string s(n, '\0');
    f.read(s.data(), n);
    return s;
  }
};

inline uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("file_hash: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    h = fnv1a64(buf, static_cast<size_t>(f.gcount()), h);
    if (!f) break;
  }
  return h;
}

}  // namespace quadleague
