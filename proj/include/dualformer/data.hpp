#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dualformer/synthetic.hpp"
#include "dualformer/tensor.hpp"

namespace dualformer::data {

// Row-major length x channels table of reals.
struct Dataset {
  std::string name;
  std::vector<std::string> timestamps;  // empty when the file has no date column
  std::vector<std::string> channel_names;
  std::vector<double> values;
  std::size_t length = 0;
  std::size_t channels = 0;

  double at(std::size_t row, std::size_t col) const { return values[row * channels + col]; }

  // Rows [r0, r1) as a new dataset.
  Dataset rows(std::size_t r0, std::size_t r1) const {
    if (r0 > r1 || r1 > length) throw ContractError("Dataset::rows: range outside the table");
    Dataset out{name, {}, channel_names, {}, r1 - r0, channels};
    if (!timestamps.empty())
      out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(r0),
                            timestamps.begin() + static_cast<std::ptrdiff_t>(r1));
    out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(r0 * channels),
                      values.begin() + static_cast<std::ptrdiff_t>(r1 * channels));
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  auto t = s.substr(b, e - b + 1);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
  return t;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return cells;
}

// Plain decimal or scientific notation, whole cell consumed.
inline bool parse_number(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* begin = cell.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + cell.size();
}

inline bool is_number(const std::string& cell) {
  double v = 0.0;
  return parse_number(cell, v);
}

}  // namespace detail

// CSV with an optional header row and an optional leading date/ID column.
// A first column whose last-row cell is not numeric is taken as the date
// column; a first row with any non-numeric value cell is taken as the header.
inline Dataset parse_csv(std::istream& in, const std::string& name = "") {
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (detail::trim(line).empty()) continue;
    lines.emplace_back(n, line);
  }
  if (lines.empty()) throw ParseError(name + ": empty file");

  const auto last = detail::split_csv_line(lines.back().second);
  const bool date_col = !detail::is_number(last.front());
  const std::size_t first_value = date_col ? 1 : 0;
  const auto head = detail::split_csv_line(lines.front().second);
  bool header = false;
  for (std::size_t c = first_value; c < head.size(); ++c)
    if (!detail::is_number(head[c])) header = true;
  if (lines.size() == 1 && header) throw ParseError(name + ": header without data rows");

  const std::size_t width = head.size();
  if (width <= first_value) throw ParseError(name + ": no value columns");
  Dataset ds;
  ds.name = name;
  ds.channels = width - first_value;
  for (std::size_t c = first_value; c < width; ++c)
    ds.channel_names.push_back(header ? head[c] : "ch" + std::to_string(c - first_value));

  for (std::size_t i = header ? 1 : 0; i < lines.size(); ++i) {
    const auto& [lineno, text] = lines[i];
    const auto cells = detail::split_csv_line(text);
    if (cells.size() != width)
      throw ParseError(name + ": row " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                       " columns, expected " + std::to_string(width));
    if (date_col) ds.timestamps.push_back(cells[0]);
    for (std::size_t c = first_value; c < width; ++c) {
      double v = 0.0;
      if (!detail::parse_number(cells[c], v))
        throw ParseError(name + ": row " + std::to_string(lineno) + ", column " + std::to_string(c + 1) +
                         ": '" + cells[c] + "' is not a number");
      if (!std::isfinite(v))
        throw ParseError(name + ": row " + std::to_string(lineno) + ", column " + std::to_string(c + 1) +
                         ": missing or non-finite value '" + cells[c] + "'");
      ds.values.push_back(v);
    }
    ++ds.length;
  }
  return ds;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  return parse_csv(in, path);
}

inline void write_csv(const Dataset& ds, std::ostream& os) {
  const bool dates = !ds.timestamps.empty();
  if (dates) os << "date";
  for (std::size_t c = 0; c < ds.channels; ++c) os << (c || dates ? "," : "") << ds.channel_names[c];
  os << '\n';
  char buf[32];
  for (std::size_t r = 0; r < ds.length; ++r) {
    if (dates) os << ds.timestamps[r];
    for (std::size_t c = 0; c < ds.channels; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.at(r, c));
      os << (c || dates ? "," : "") << buf;
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train = 0.6, val = 0.2, test = 0.2;
};

struct Segment {
  std::size_t begin = 0, end = 0;
  std::size_t length() const { return end - begin; }
};

struct Split {
  Segment train, val, test;
  std::vector<std::string> warnings;
};

// Boundaries floor(r_train * len) and floor((r_train + r_val) * len); a
// segment shorter than min_len (usually L + T) is reported in warnings.
inline Split split(std::size_t len, const SplitSpec& spec, std::size_t min_len = 0) {
  for (double r : {spec.train, spec.val, spec.test})
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split: ratios must lie in [0, 1]");
  if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw ConfigError("split: ratios sum to " + std::to_string(spec.train + spec.val + spec.test) + ", not 1");
  const double n = static_cast<double>(len);
  // Slack keeps 0.8 * 10 = 7.999999999999999 on the intended side.
  auto b1 = static_cast<std::size_t>(std::floor(spec.train * n + 1e-9));
  auto b2 = static_cast<std::size_t>(std::floor((spec.train + spec.val) * n + 1e-9));
  b1 = std::min(b1, len);
  b2 = std::min(std::max(b2, b1), len);
  Split s{{0, b1}, {b1, b2}, {b2, len}, {}};
  const char* names[] = {"train", "val", "test"};
  const Segment* segs[] = {&s.train, &s.val, &s.test};
  for (int i = 0; i < 3; ++i)
    if (segs[i]->length() < min_len)
      s.warnings.push_back(std::string(names[i]) + " segment has " + std::to_string(segs[i]->length()) +
                           " rows, fewer than the " + std::to_string(min_len) + " needed for one window");
  return s;
}

// ---------------------------------------------------------------------------
// Z-score statistics
// ---------------------------------------------------------------------------

struct NormStats {
  std::vector<double> mean, std;

  double apply(double v, std::size_t c) const { return (v - mean[c]) / std[c]; }
  double invert(double v, std::size_t c) const { return v * std[c] + mean[c]; }

  Dataset apply(const Dataset& ds) const {
    Dataset out = ds;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = apply(out.values[i], i % ds.channels);
    return out;
  }
  Dataset invert(const Dataset& ds) const {
    Dataset out = ds;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = invert(out.values[i], i % ds.channels);
    return out;
  }
};

inline constexpr double kMinStd = 1e-8;

// Per-channel mean and population std over the rows of `seg`, std floored.
inline NormStats normalize_stats(const Dataset& ds, const Segment& seg) {
  if (seg.length() == 0) throw ContractError("normalize_stats: empty train segment");
  if (seg.end > ds.length) throw ContractError("normalize_stats: segment outside the dataset");
  const auto C = ds.channels;
  NormStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double n = static_cast<double>(seg.length());
  for (std::size_t r = seg.begin; r < seg.end; ++r)
    for (std::size_t c = 0; c < C; ++c) s.mean[c] += ds.at(r, c);
  for (auto& m : s.mean) m /= n;
  for (std::size_t r = seg.begin; r < seg.end; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double d = ds.at(r, c) - s.mean[c];
      s.std[c] += d * d;
    }
  for (auto& v : s.std) v = std::max(std::sqrt(v / n), kMinStd);
  return s;
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

struct WindowSpec {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t stride = 1;
};

struct Window {
  std::size_t start = 0;  // absolute row of x[0]
  Tensor x;               // [L x C], rows [start, start + L)
  Tensor y;               // [T x C], rows [start + L, start + L + T)
};

// Every (x, y) pair lying entirely inside one segment, stride 1.
class Windows {
 public:
  Windows(const Dataset& ds, Segment seg, WindowSpec spec) : ds_(&ds), seg_(seg), spec_(spec) {
    if (spec.lookback == 0 || spec.horizon == 0) throw ConfigError("windows: L and T must be positive");
    if (spec.stride != 1) throw ConfigError("windows: only stride 1 is supported");
    if (seg.end > ds.length || seg.begin > seg.end) throw ContractError("windows: segment outside the dataset");
    const auto need = spec.lookback + spec.horizon;
    if (seg.length() < need) {
      warnings_.push_back("segment of " + std::to_string(seg.length()) + " rows is shorter than L + T = " +
                          std::to_string(need) + "; no windows");
      count_ = 0;
    } else {
      count_ = seg.length() - need + 1;
    }
  }

  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const WindowSpec& spec() const { return spec_; }

  Window operator[](std::size_t i) const {
    if (i >= count_) throw ContractError("windows: index " + std::to_string(i) + " out of range");
    const auto C = ds_->channels, L = spec_.lookback, T = spec_.horizon;
    const auto start = seg_.begin + i;
    auto first = ds_->values.begin() + static_cast<std::ptrdiff_t>(start * C);
    std::vector<double> x(first, first + static_cast<std::ptrdiff_t>(L * C));
    std::vector<double> y(first + static_cast<std::ptrdiff_t>(L * C), first + static_cast<std::ptrdiff_t>((L + T) * C));
    return {start, Tensor({L, C}, std::move(x)), Tensor({T, C}, std::move(y))};
  }

 private:
  const Dataset* ds_;
  Segment seg_;
  WindowSpec spec_;
  std::vector<std::string> warnings_;
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic tables
// ---------------------------------------------------------------------------

// One column per channel, each an independent draw of `spec` with seed
// spec.seed + c.
inline Dataset synth_dataset(const SyntheticPeriodicSignal& spec, std::size_t channels) {
  Dataset ds;
  ds.name = "synthetic";
  ds.channels = channels;
  ds.length = spec.length();
  ds.values.assign(ds.length * channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    auto s = spec;
    s.seed = spec.seed + c;
    const auto series = synth_generate(s).series;
    for (std::size_t t = 0; t < ds.length; ++t) ds.values[t * channels + c] = series[t];
    ds.channel_names.push_back("ch" + std::to_string(c));
  }
  return ds;
}

// Sum of two sinusoids plus Gaussian noise per channel; periods, amplitudes
// and phases drawn from the seed.
inline Dataset two_tone_dataset(std::size_t len, std::size_t channels, double noise_sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> period1(12.0, 32.0), period2(4.0, 10.0), phase(0.0, 2.0 * std::numbers::pi),
      amp(0.5, 1.5);
  if (noise_sigma < 0.0) throw ConfigError("two_tone_dataset: noise sigma must be non-negative");
  std::normal_distribution<double> noise(0.0, std::max(noise_sigma, 1e-300));
  Dataset ds;
  ds.name = "two_tone";
  ds.channels = channels;
  ds.length = len;
  ds.values.assign(len * channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double p1 = period1(rng), p2 = period2(rng), f1 = phase(rng), f2 = phase(rng), a1 = amp(rng),
                 a2 = 0.5 * amp(rng);
    for (std::size_t t = 0; t < len; ++t) {
      const double tt = static_cast<double>(t);
      ds.values[t * channels + c] = a1 * std::sin(2.0 * std::numbers::pi * tt / p1 + f1) +
                                    a2 * std::sin(2.0 * std::numbers::pi * tt / p2 + f2);
    }
    ds.channel_names.push_back("ch" + std::to_string(c));
  }
  // Noise drawn after the tones so the clean part does not depend on sigma.
  if (noise_sigma > 0.0)
    for (auto& v : ds.values) v += noise(rng);
  return ds;
}

}  // namespace dualformer::data
