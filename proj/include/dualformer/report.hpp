#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dualformer/error.hpp"

namespace dualformer::report {

// One line of a structured report: a record type followed by key=value
// fields in a fixed order. Reals are printed with %.17g so that parsing a
// report back reproduces every value bit for bit. Values contain no spaces.
//
//   <type> <key>=<value> <key>=<value> ...
//
// Lines starting with '#' are comments.
struct Record {
  std::string type;
  std::vector<std::pair<std::string, std::string>> fields;

  Record& add(const std::string& key, const std::string& value) {
    fields.emplace_back(key, value);
    return *this;
  }
  Record& add(const std::string& key, const char* value) { return add(key, std::string(value)); }
  Record& add(const std::string& key, double value) { return add(key, format_real(value)); }
  Record& add(const std::string& key, std::size_t value) { return add(key, std::to_string(value)); }
  Record& add(const std::string& key, int value) { return add(key, std::to_string(value)); }
  Record& add(const std::string& key, bool value) { return add(key, std::string(value ? "true" : "false")); }
  Record& add(const std::string& key, const std::optional<double>& value) {
    return value ? add(key, *value) : add(key, std::string("na"));
  }

  const std::string* find(const std::string& key) const {
    for (const auto& [k, v] : fields)
      if (k == key) return &v;
    return nullptr;
  }

  const std::string& get(const std::string& key) const {
    if (auto* v = find(key)) return *v;
    throw ParseError("report: record '" + type + "' has no field '" + key + "'");
  }

  double real(const std::string& key) const {
    const auto& v = get(key);
    if (v == "nan") return std::nan("");
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ParseError("report: field '" + key + "' is not a number: '" + v + "'");
    return out;
  }

  std::optional<double> optional_real(const std::string& key) const {
    if (get(key) == "na") return std::nullopt;
    return real(key);
  }

  std::size_t count(const std::string& key) const {
    const auto& v = get(key);
    std::size_t used = 0;
    unsigned long long out = 0;
    try {
      out = std::stoull(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ParseError("report: field '" + key + "' is not a count: '" + v + "'");
    return static_cast<std::size_t>(out);
  }

  static std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }
};

// Makes free text safe as a field value: '%', whitespace and '=' become
// %XX escapes.
inline std::string escape(const std::string& text) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char ch : text) {
    if (ch == '%' || ch == '=' || std::isspace(ch)) {
      out += '%';
      out += hex[ch >> 4];
      out += hex[ch & 15];
    } else {
      out += static_cast<char>(ch);
    }
  }
  return out.empty() ? "%00" : out;
}

inline std::string unescape(const std::string& value) {
  if (value == "%00") return "";
  std::string out;
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (value[i] == '%' && i + 2 < value.size() && std::isxdigit(static_cast<unsigned char>(value[i + 1])) &&
        std::isxdigit(static_cast<unsigned char>(value[i + 2]))) {
      out += static_cast<char>(std::stoi(value.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      out += value[i];
    }
  }
  return out;
}

inline void write(std::ostream& os, const Record& r) {
  os << r.type;
  for (const auto& [k, v] : r.fields) os << ' ' << k << '=' << v;
  os << '\n';
}

inline std::string to_string(const std::vector<Record>& records) {
  std::ostringstream os;
  for (const auto& r : records) write(os, r);
  return os.str();
}

inline std::vector<Record> parse(std::istream& in) {
  std::vector<Record> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Record r;
    ls >> r.type;
    std::string tok;
    while (ls >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ParseError("report line " + std::to_string(n) + ": field '" + tok + "' is not key=value");
      r.fields.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<Record> parse(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

}  // namespace dualformer::report
