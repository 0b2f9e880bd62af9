#pragma once

// Minimal RFC-4180-ish CSV reading: quoted fields, doubled quotes, CRLF.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stormnet/error.hpp"

namespace stormnet::csv {

using Row = std::vector<std::string>;

inline Row split_line(const std::string& line) {
  Row out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

struct Table {
  Row header;
  std::vector<Row> rows;
};

/// Reads a CSV with a header line; every row must match the header width.
inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    Row r = split_line(line);
    if (r.size() != t.header.size()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, got " +
                       std::to_string(r.size()));
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": not a number: '" + s + "'");
  }
}

inline long long parse_int(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(where + ": not an integer: '" + s + "'");
  }
}

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::stod(buf) == v) break;
  }
  return buf;
}

}  // namespace stormnet::csv
