#pragma once

// Minimal RFC 4180 reader/writer: quoted fields, doubled quotes, CRLF.

#include <charconv>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "trailcam/error.hpp"

namespace trailcam::csv {

struct Row {
  std::size_t line = 0;  // 1-based physical line where the record starts
  std::vector<std::string> fields;
};

inline std::vector<Row> read(std::istream& in) {
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Row row;
    row.line = line_no;
    std::string field;
    bool quoted = false;
    std::size_t i = 0;
    for (;;) {
      if (i == line.size()) {
        if (quoted) {
          // quoted field spans a newline
          std::string next;
          if (!std::getline(in, next)) throw ValidationError("line " + std::to_string(row.line) + ": unterminated quote");
          ++line_no;
          if (!next.empty() && next.back() == '\r') next.pop_back();
          field += '\n';
          line = next;
          i = 0;
          continue;
        }
        break;
      }
      const char c = line[i];
      if (quoted) {
        if (c == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            field += '"';
            ++i;
          } else {
            quoted = false;
          }
        } else {
          field += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        row.fields.push_back(std::move(field));
        field.clear();
      } else {
        field += c;
      }
      ++i;
    }
    row.fields.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << escape(fields[i]);
  }
  out << '\n';
}

// Shortest decimal form that round-trips.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace trailcam::csv
