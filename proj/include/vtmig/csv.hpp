#pragma once

// Strict CSV reading shared by the data and scenario loaders: a required
// header, a fixed field count per row, and errors that carry file:line.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "vtmig/error.hpp"

namespace vtmig::data {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

class CsvReader {
 public:
  CsvReader(const std::filesystem::path& path, std::vector<std::string> expected)
      : path_(path), in_(path) {
    if (!in_) throw ValidationError("cannot open " + path.string());
    std::string header;
    if (!std::getline(in_, header)) throw ValidationError(path.string() + ": empty file");
    ++line_no_;
    if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
    const auto cols = split(header);
    for (const auto& name : expected) {
      const auto it = std::find(cols.begin(), cols.end(), name);
      if (it == cols.end()) {
        throw ValidationError(path.string() + ": missing column '" + name + "'");
      }
      index_.push_back(static_cast<std::size_t>(it - cols.begin()));
    }
    n_cols_ = cols.size();
  }

  // Returns false at end of file. Blank lines are skipped.
  bool next(std::vector<std::string_view>& fields) {
    while (std::getline(in_, line_)) {
      ++line_no_;
      if (trim(line_).empty()) continue;
      auto cols = split(line_);
      if (cols.size() != n_cols_) fail("expected " + std::to_string(n_cols_) + " fields");
      fields.clear();
      for (auto i : index_) fields.push_back(cols[i]);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError(path_.string() + ":" + std::to_string(line_no_) + ": " + msg);
  }

  int parse_int(std::string_view s) const {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      fail("malformed integer '" + std::string(s) + "'");
    }
    return v;
  }

  double parse_double(std::string_view s) const {
    // std::from_chars for double is unavailable on older libstdc++
    std::string tmp(s);
    char* end = nullptr;
    const double v = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) {
      fail("malformed number '" + tmp + "'");
    }
    return v;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::string line_;
  std::vector<std::size_t> index_;
  std::size_t n_cols_ = 0;
  int line_no_ = 0;
};

}  // namespace vtmig::data
