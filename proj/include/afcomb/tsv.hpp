#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "afcomb/errors.hpp"

namespace afcomb {

// Shortest round-trip decimal form; reloading reproduces the double bit-exactly.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view cell, const std::string& context) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || cell.empty())
    throw NonNumericCell("non-numeric cell '" + std::string(cell) + "' " + context);
  return v;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

struct TsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline TsvTable read_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  TsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto sv : split_tabs(line)) cells.emplace_back(sv);
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  if (first) throw IoError("empty file " + path);
  return table;
}

class TsvWriter {
public:
  explicit TsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write " + path);
    path_ = path;
  }

  void field(std::string_view s) {
    if (!first_) out_ << '\t';
    out_ << s;
    first_ = false;
  }
  void field(double v) { field(format_double(v)); }
  void field(long long v) { field(std::to_string(v)); }
  void field(int v) { field(static_cast<long long>(v)); }
  void field(std::size_t v) { field(std::to_string(v)); }

  void endrow() {
    out_ << '\n';
    first_ = true;
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("write failed for " + path_);
  }

private:
  std::ofstream out_;
  std::string path_;
  bool first_ = true;
};

}  // namespace afcomb
