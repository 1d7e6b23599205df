#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sepcross/errors.hpp"

namespace sepcross::io {

/// A numeric table with a fixed header.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row) {
    if (row.size() != header.size()) {
      throw PreconditionError("csv: row has " + std::to_string(row.size()) + " fields, header has " +
                              std::to_string(header.size()));
    }
    rows.push_back(std::move(row));
  }
};

/// 17 significant digits: parses back to the same double.
inline std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string to_csv(const CsvTable& t) {
  std::string out;
  for (std::size_t i = 0; i < t.header.size(); ++i) {
    if (i) out += ',';
    out += t.header[i];
  }
  out += '\n';
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw PreconditionError("csv: row does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += format_number(row[i]);
    }
    out += '\n';
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << text;
  f.close();
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) { write_text(path, to_csv(t)); }

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("csv: missing header");
  {
    std::istringstream hs(line);
    std::string field;
    while (std::getline(hs, field, ',')) t.header.push_back(field);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream rs(line);
    std::string field;
    while (std::getline(rs, field, ',')) {
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') throw ConfigError("csv: bad number '" + field + "'");
      row.push_back(v);
    }
    t.add(std::move(row));
  }
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace sepcross::io
