#pragma once

#include <charconv>
#include <fstream>
#include <string>
#include <vector>

#include "dln/tensor.hpp"

namespace dln {

// Feature files: one vector per line, space-separated decimal floats. Values
// are written in shortest round-trip form so write/read is bitwise stable.

inline std::vector<Tensor<float>> parse_features(std::istream& is, const std::string& origin = "<stream>") {
  std::vector<Tensor<float>> out;
  std::string line;
  std::size_t dim = 0;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    std::vector<float> vals;
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      float v = 0;
      auto r = std::from_chars(p, end, v);
      if (r.ec != std::errc())
        throw FormatError(origin + ":" + std::to_string(lineno) + ": malformed number");
      vals.push_back(v);
      p = r.ptr;
    }
    if (vals.empty()) continue;
    if (dim == 0) dim = vals.size();
    if (vals.size() != dim)
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                        " values, found " + std::to_string(vals.size()));
    out.push_back(Tensor<float>::vector(std::move(vals)));
  }
  return out;
}

inline std::vector<Tensor<float>> load_features(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read feature file '" + path + "'");
  return parse_features(is, path);
}

inline void write_features(std::ostream& os, const std::vector<Tensor<float>>& feats) {
  char buf[32];
  for (const auto& f : feats) {
    for (std::size_t i = 0; i < f.size(); ++i) {
      auto r = std::to_chars(buf, buf + sizeof(buf), f[i]);
      if (i) os << ' ';
      os.write(buf, r.ptr - buf);
    }
    os << '\n';
  }
}

inline void save_features(const std::string& path, const std::vector<Tensor<float>>& feats) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write feature file '" + path + "'");
  write_features(os, feats);
}

}  // namespace dln
