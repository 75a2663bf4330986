#pragma once

// Minimal RFC 4180 CSV: quoting on write, quoted fields and CRLF on read.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "advise/common.hpp"

namespace advise::csv {

inline std::string field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += field(fields[i]);
  }
  return out + "\n";
}

using Record = std::map<std::string, std::string>;

/// Parses a CSV document with a header line into name -> value records.
inline std::vector<Record> parse(const std::string& text, const std::string& where) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> cur;
  std::string f;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          f += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        f += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      cur.push_back(std::move(f));
      f.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !f.empty()) {
        cur.push_back(std::move(f));
        rows.push_back(std::move(cur));
      }
      cur.clear();
      f.clear();
      any = false;
    } else {
      f += c;
      any = true;
    }
  }
  if (quoted) throw ValidationError(where + ": unterminated quoted field");
  if (any || !f.empty()) {
    cur.push_back(std::move(f));
    rows.push_back(std::move(cur));
  }
  if (rows.empty()) throw ValidationError(where + ": empty CSV");
  const auto& header = rows.front();
  std::vector<Record> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != header.size())
      throw ValidationError(where + ": line " + std::to_string(r + 1) + " has " + std::to_string(rows[r].size()) +
                            " fields, header has " + std::to_string(header.size()));
    Record rec;
    for (std::size_t c = 0; c < header.size(); ++c) rec[header[c]] = rows[r][c];
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<Record> read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

}  // namespace advise::csv
