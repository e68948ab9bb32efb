#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mfglab::harness {

// Doubles with 17 significant digits; round-trips every binary64 value.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// In-memory CSV table with a mandatory header row.
class CsvTable {
 public:
  class Row {
   public:
    Row& add(double x) { return add_raw(format_double(x)); }
    Row& add(std::size_t x) { return add_raw(std::to_string(x)); }
    Row& add(int x) { return add_raw(std::to_string(x)); }
    Row& add(std::string_view s) { return add_raw(std::string(s)); }
    Row& add(const char* s) { return add_raw(s); }
    Row& empty() { return add_raw(""); }

   private:
    friend class CsvTable;
    Row& add_raw(std::string cell) {
      cells_.push_back(std::move(cell));
      return *this;
    }
    std::vector<std::string> cells_;
  };

  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  Row& row() {
    rows_.emplace_back();
    return rows_.back();
  }

  const std::vector<std::string>& header() const noexcept { return header_; }
  std::size_t size() const noexcept { return rows_.size(); }

  std::string str() const {
    std::string out;
    append_line(out, header_);
    for (const auto& r : rows_) {
      if (r.cells_.size() != header_.size())
        throw std::logic_error("CsvTable: row width " + std::to_string(r.cells_.size()) + " != header width " +
                               std::to_string(header_.size()));
      append_line(out, r.cells_);
    }
    return out;
  }

 private:
  static void append_line(std::string& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  }

  std::vector<std::string> header_;
  std::vector<Row> rows_;
};

// 64-bit FNV-1a content hash, hex encoded.
inline std::string fnv1a64_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mfglab::harness
