#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "psnrlab/errors.hpp"
#include "psnrlab/graph.hpp"

namespace psnrlab {

/// Deterministic CSV writer: doubles are printed with %.17g so reruns with
/// identical inputs produce byte-identical files.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw MalformedInputError("cannot open for writing: " + path);
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  CsvWriter& field(const std::string& s) {
    sep();
    out_ << s;
    return *this;
  }
  CsvWriter& field(const char* s) { return field(std::string(s)); }
  CsvWriter& field(double v) { return field(detail::fmt_double(v)); }
  CsvWriter& field(int v) { return field(std::to_string(v)); }
  CsvWriter& field(long v) { return field(std::to_string(v)); }
  CsvWriter& field(std::uint64_t v) { return field(std::to_string(v)); }

  void endrow() {
    out_ << '\n';
    first_ = true;
  }

 private:
  void sep() {
    if (!first_) out_ << ',';
    first_ = false;
  }
  std::ofstream out_;
  bool first_ = true;
};

}  // namespace psnrlab
