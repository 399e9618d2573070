#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ciseq/common.hpp"

namespace ciseq::io {

/// Named-tensor blob: magic, count, then per tensor
/// {u32 name_len, name, u64 rows, u64 cols, f64 column-major data}.
inline void write_tensors(
    const std::string& path,
    const std::vector<std::pair<std::string, const Eigen::MatrixXd*>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "write_tensors: cannot write " + path);
  const char magic[8] = {'C', 'S', 'Q', 'T', 'N', 'S', 'R', '1'};
  out.write(magic, 8);
  const uint32_t n = static_cast<uint32_t>(tensors.size());
  out.write(reinterpret_cast<const char*>(&n), 4);
  for (const auto& [name, m] : tensors) {
    const uint32_t len = static_cast<uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(name.data(), len);
    const uint64_t r = static_cast<uint64_t>(m->rows());
    const uint64_t c = static_cast<uint64_t>(m->cols());
    out.write(reinterpret_cast<const char*>(&r), 8);
    out.write(reinterpret_cast<const char*>(&c), 8);
    out.write(reinterpret_cast<const char*>(m->data()),
              static_cast<std::streamsize>(sizeof(double) * m->size()));
  }
  require(out.good(), "write_tensors: write failed for " + path);
}

inline std::map<std::string, Eigen::MatrixXd> read_tensors(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "read_tensors: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::string(magic, 8) == "CSQTNSR1",
          "read_tensors: bad magic in " + path);
  uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  std::map<std::string, Eigen::MatrixXd> out;
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    in.read(name.data(), len);
    uint64_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), 8);
    in.read(reinterpret_cast<char*>(&c), 8);
    Eigen::MatrixXd m(static_cast<long>(r), static_cast<long>(c));
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    require(in.good(), "read_tensors: truncated blob " + path);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace ciseq::io
