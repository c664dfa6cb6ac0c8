#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dualformer/data.hpp"
#include "dualformer/model.hpp"
#include "dualformer/pipeline.hpp"
#include "dualformer/report.hpp"
#include "dualformer/theorem.hpp"

namespace dualformer::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,       // unexpected error
  kUsage = 2,         // bad flags
  kConfig = 3,        // invalid configuration
  kData = 4,          // unreadable or incompatible data
  kTraining = 5,      // optimisation failed
  kVerification = 6,  // a check ran and did not pass
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const DataError*>(&e)) return kData;
  if (dynamic_cast<const TrainingError*>(&e) || dynamic_cast<const NumericError*>(&e)) return kTraining;
  return kFailure;
}

// ---------------------------------------------------------------------------
// key=value configuration text
// ---------------------------------------------------------------------------

// "key = value" or "key=value" per line; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::istream& in, const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = data::detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + " line " + std::to_string(n) + ": expected key=value, got '" + line + "'");
    auto key = data::detail::trim(line.substr(0, eq));
    auto value = data::detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + " line " + std::to_string(n) + ": empty key");
    out.emplace_back(key, value);
  }
  return out;
}

inline std::pair<std::string, std::string> split_assignment(const std::string& text) {
  auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + text + "'");
  return {data::detail::trim(text.substr(0, eq)), data::detail::trim(text.substr(eq + 1))};
}

// Applies a config file (optional) and then --set overrides through `apply`,
// which returns false for keys outside the schema.
template <class Apply>
void apply_sources(const std::string& config_path, const std::vector<std::string>& overrides, Apply&& apply) {
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError(config_path + ": cannot open config file");
    for (const auto& [k, v] : parse_key_values(in, config_path))
      if (!apply(k, v)) throw ConfigError(config_path + ": unknown key '" + k + "'");
  }
  for (const auto& s : overrides) {
    auto [k, v] = split_assignment(s);
    if (!apply(k, v)) throw ConfigError("--set: unknown key '" + k + "'");
  }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

// Schema, in canonical order:
//   model:  L T C D heads N alpha k_lags lag_policy n_harmonics ffn_mult seed
//           per_channel_weighting
//   train:  batch_size max_epochs patience lr max_steps
//   split:  split_train split_val split_test
//   run:    data max_rows ablation out_dir
// `seed` drives both initialisation and shuffling. C is replaced by the
// channel count of the dataset.
struct RunConfig {
  model::ModelConfig model;
  pipeline::TrainConfig train;
  data::SplitSpec split;
  std::string data;
  std::size_t max_rows = 0;  // 0 keeps every row
  model::Ablation ablation = model::Ablation::full;
  std::string out_dir = "run";

  bool apply(const std::string& key, const std::string& value) {
    using model::detail::parse_double;
    using model::detail::parse_uint;
    if (key == "seed") {
      model.seed = parse_uint(key, value);
      train.seed = model.seed;
      return true;
    }
    if (model::apply_config_key(model, key, value)) return true;
    if (key == "batch_size") train.batch_size = parse_uint(key, value);
    else if (key == "max_epochs") train.max_epochs = parse_uint(key, value);
    else if (key == "patience") train.patience = parse_uint(key, value);
    else if (key == "lr") train.lr = parse_double(key, value);
    else if (key == "max_steps") train.max_steps = parse_uint(key, value);
    else if (key == "split_train") split.train = parse_double(key, value);
    else if (key == "split_val") split.val = parse_double(key, value);
    else if (key == "split_test") split.test = parse_double(key, value);
    else if (key == "data") data = value;
    else if (key == "max_rows") max_rows = parse_uint(key, value);
    else if (key == "ablation") ablation = model::parse_ablation(value);
    else if (key == "out_dir") out_dir = value;
    else return false;
    return true;
  }

  std::vector<std::pair<std::string, std::string>> entries() const {
    auto out = model::config_entries(model);
    auto real = report::Record::format_real;
    out.emplace_back("batch_size", std::to_string(train.batch_size));
    out.emplace_back("max_epochs", std::to_string(train.max_epochs));
    out.emplace_back("patience", std::to_string(train.patience));
    out.emplace_back("lr", real(train.lr));
    out.emplace_back("max_steps", std::to_string(train.max_steps));
    out.emplace_back("split_train", real(split.train));
    out.emplace_back("split_val", real(split.val));
    out.emplace_back("split_test", real(split.test));
    out.emplace_back("data", data);
    out.emplace_back("max_rows", std::to_string(max_rows));
    out.emplace_back("ablation", model::ablation_name(ablation));
    out.emplace_back("out_dir", out_dir);
    return out;
  }

  report::Record to_record() const {
    // out_dir is left out so that reruns into another directory match.
    report::Record r{"config", {}};
    for (const auto& [k, v] : entries())
      if (k != "out_dir") r.add(k, report::escape(v));
    return r;
  }
};

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                                 RunConfig base = {}) {
  apply_sources(path, overrides, [&](const std::string& k, const std::string& v) { return base.apply(k, v); });
  return base;
}

// Smallest setup on which finite differences stay cheap.
inline RunConfig gradcheck_defaults() {
  RunConfig rc;
  rc.model.lookback = 32;
  rc.model.horizon = 8;
  rc.model.channels = 2;
  rc.model.width = 8;
  rc.model.heads = 2;
  rc.model.layers = 2;
  rc.model.alpha = 0.5;
  return rc;
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

inline data::Dataset load_dataset(const std::string& path, std::size_t max_rows) {
  if (path.empty()) throw ConfigError("data: no dataset path given");
  auto ds = data::load_csv(path);
  if (max_rows && ds.length > max_rows) ds = ds.rows(0, max_rows);
  return ds;
}

struct Prepared {
  data::Dataset normalized;
  data::Split split;
  data::NormStats stats;
  data::WindowSpec windows;

  data::Segment segment(const std::string& name) const {
    if (name == "train") return split.train;
    if (name == "val") return split.val;
    if (name == "test") return split.test;
    throw ConfigError("split must be train, val or test, got '" + name + "'");
  }
  data::Windows of(const std::string& name) const { return {normalized, segment(name), windows}; }
};

// Split, train-only z-score statistics, normalised copy.
inline Prepared prepare(const data::Dataset& ds, const RunConfig& rc) {
  Prepared p;
  p.windows = {rc.model.lookback, rc.model.horizon, 1};
  p.split = data::split(ds.length, rc.split, rc.model.lookback + rc.model.horizon);
  if (p.split.train.length() == 0) throw DataError(ds.name + ": train segment is empty");
  p.stats = data::normalize_stats(ds, p.split.train);
  p.normalized = p.stats.apply(ds);
  return p;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Train + evaluate
// ---------------------------------------------------------------------------

struct TrainOutcome {
  model::DualformerModel model;
  pipeline::TrainResult result;
  pipeline::MetricsReport test, naive;
  std::vector<report::Record> history;  // run, config, split, epochs, summary
  std::vector<report::Record> metrics;  // run, model, naive
  std::vector<std::string> warnings;
};

inline report::Record run_record(const std::string& command, const RunConfig& rc) {
  report::Record r{"run", {}};
  r.add("command", command)
      .add("seed", std::to_string(rc.model.seed))
      .add("ablation", model::ablation_name(rc.ablation))
      .add("data", report::escape(rc.data));
  return r;
}

inline TrainOutcome train_and_evaluate(const data::Dataset& ds, RunConfig rc,
                                       const std::function<void(const report::Record&)>& on_record = {}) {
  rc.model.channels = ds.channels;
  rc.model.validate();
  rc.train.validate();
  auto prep = prepare(ds, rc);
  auto train_w = prep.of("train"), val_w = prep.of("val"), test_w = prep.of("test");
  TrainOutcome out;
  for (const auto& w : prep.split.warnings) out.warnings.push_back(w);
  if (train_w.empty()) throw DataError(ds.name + ": no training windows (" + prep.split.warnings.front() + ")");
  if (test_w.empty()) throw DataError(ds.name + ": no test windows for L + T = " +
                                      std::to_string(rc.model.lookback + rc.model.horizon));

  auto emit = [&](std::vector<report::Record>& sink, const report::Record& r) {
    sink.push_back(r);
    if (on_record) on_record(r);
  };
  emit(out.history, run_record("train", rc));
  emit(out.history, rc.to_record());
  report::Record split{"split", {}};
  split.add("rows", ds.length)
      .add("channels", ds.channels)
      .add("train_windows", train_w.size())
      .add("val_windows", val_w.size())
      .add("test_windows", test_w.size());
  emit(out.history, split);

  out.model = model::ablation_variant(model::init_model(rc.model), rc.ablation);
  out.result = pipeline::train(out.model, train_w, val_w, rc.train,
                               [&](const pipeline::EpochRecord& e) { emit(out.history, pipeline::epoch_record(e)); });
  report::Record summary{"summary", {}};
  summary.add("best_epoch", out.result.best_epoch)
      .add("best_score", out.result.best_score)
      .add("steps", out.result.steps)
      .add("early_stopped", out.result.early_stopped)
      .add("checksum", hex64(model::parameter_checksum(out.model)));
  emit(out.history, summary);

  out.test = pipeline::evaluate(out.model, test_w, prep.stats, "model");
  out.naive = pipeline::evaluate_naive(test_w, prep.stats);
  out.metrics.push_back(run_record("train", rc));
  out.metrics.push_back(out.test.to_record());
  out.metrics.push_back(out.naive.to_record());
  return out;
}

inline void write_report_file(const std::filesystem::path& path, const std::vector<report::Record>& records) {
  std::ofstream f(path);
  if (!f) throw ConfigError(path.string() + ": cannot write report");
  for (const auto& r : records) report::write(f, r);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  auto ds = load_dataset(rc.data, rc.max_rows);
  auto outcome = train_and_evaluate(ds, rc, [&](const report::Record& r) {
    report::write(out, r);
    out.flush();
  });
  for (const auto& w : outcome.warnings) err << "warning: " << w << '\n';
  for (std::size_t i = 1; i < outcome.metrics.size(); ++i) report::write(out, outcome.metrics[i]);

  std::filesystem::path dir(rc.out_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "checkpoint.txt");
    if (!f) throw ConfigError((dir / "checkpoint.txt").string() + ": cannot write checkpoint");
    model::save_checkpoint(outcome.model, f);
  }
  write_report_file(dir / "history.txt", outcome.history);
  write_report_file(dir / "metrics.txt", outcome.metrics);
  return kOk;
}

inline int cmd_eval(const std::string& checkpoint, const RunConfig& rc, const std::string& split_name,
                    std::ostream& out) {
  std::ifstream f(checkpoint);
  if (!f) throw ParseError(checkpoint + ": cannot open checkpoint");
  auto m = model::load_checkpoint(f);
  auto ds = load_dataset(rc.data, rc.max_rows);
  if (ds.channels != m.cfg.channels)
    throw DataError("checkpoint expects C=" + std::to_string(m.cfg.channels) + " channels, " + ds.name + " has C=" +
                    std::to_string(ds.channels));
  RunConfig eff = rc;
  eff.model = m.cfg;
  eff.ablation = m.mode;
  auto prep = prepare(ds, eff);
  auto w = prep.of(split_name);
  if (w.empty())
    throw DataError(ds.name + ": " + split_name + " segment has no windows for L + T = " +
                    std::to_string(m.cfg.lookback + m.cfg.horizon));
  auto run = run_record("eval", eff);
  run.add("split", split_name).add("checksum", hex64(model::parameter_checksum(m)));
  report::write(out, run);
  report::write(out, pipeline::evaluate(m, w, prep.stats, "model").to_record());
  report::write(out, pipeline::evaluate_naive(w, prep.stats).to_record());
  return kOk;
}

struct AnalyzeOptions {
  std::size_t window = 96;
  std::size_t stride = 1;
  std::size_t n_harmonics = 3;
};

// Sliding-window w_f per channel on the z-scored window.
inline int cmd_analyze(const data::Dataset& ds, const AnalyzeOptions& opt, std::ostream& out) {
  if (opt.window < 2) throw ConfigError("window must be at least 2");
  if (opt.stride == 0) throw ConfigError("stride must be positive");
  if (opt.n_harmonics == 0) throw ConfigError("n_harmonics must be positive");
  if (ds.length < opt.window)
    throw DataError(ds.name + ": " + std::to_string(ds.length) + " rows, fewer than the window " +
                    std::to_string(opt.window));
  report::Record run{"run", {}};
  run.add("command", "analyze")
      .add("data", report::escape(ds.name))
      .add("window", opt.window)
      .add("stride", opt.stride)
      .add("n_harmonics", opt.n_harmonics);
  report::write(out, run);
  const auto C = ds.channels;
  std::vector<std::vector<double>> per_channel(C);
  std::vector<std::size_t> flat_count(C, 0);
  for (std::size_t start = 0; start + opt.window <= ds.length; start += opt.stride) {
    const auto block = ds.rows(start, start + opt.window);
    Tensor x({opt.window, C}, block.values);
    const auto z = model::revin_standardize(x, model::revin_stats(x, 1e-5));
    const auto w = model::channel_periodicity(z, opt.n_harmonics);
    for (std::size_t c = 0; c < C; ++c) {
      report::Record r{"window", {}};
      r.add("start", start).add("channel", c).add("k", w[c].basis).add("w_f", w[c].w_f).add("flat", w[c].flat);
      report::write(out, r);
      per_channel[c].push_back(w[c].w_f);
      flat_count[c] += w[c].flat;
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    auto v = per_channel[c];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    const double median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    report::Record r{"channel", {}};
    r.add("index", c)
        .add("name", report::escape(ds.channel_names[c]))
        .add("windows", n)
        .add("mean_w_f", mean)
        .add("median_w_f", median)
        .add("flat_windows", flat_count[c]);
    report::write(out, r);
  }
  return kOk;
}

struct TheoremOptions {
  std::size_t count = 200;
  double lambda_min = 4.5;
  double lambda_max = 100.0;
  std::uint64_t seed = 0;
  bool records = false;
};

inline int cmd_verify_theorem(const TheoremOptions& opt, std::ostream& out) {
  if (opt.count == 0) throw ConfigError("count must be positive");
  if (!(opt.lambda_min > 0.0 && opt.lambda_min <= opt.lambda_max))
    throw ConfigError("need 0 < lambda-min <= lambda-max");
  const auto sweep = spectral::run_theorem_sweep(opt.count, opt.lambda_min, opt.lambda_max, opt.seed);
  if (opt.records)
    for (std::size_t i = 0; i < sweep.reports.size(); ++i) {
      const auto& r = sweep.reports[i];
      report::Record rec{"spec", {}};
      rec.add("index", i)
          .add("lambda", r.lambda)
          .add("ratio", r.measured_ratio)
          .add("bound", r.bound)
          .add("binding", r.binding)
          .add("holds", r.holds);
      report::write(out, rec);
    }
  report::Record s{"theorem", {}};
  s.add("count", sweep.trials)
      .add("binding", sweep.binding)
      .add("violations", sweep.violations)
      .add("min_margin", sweep.binding ? std::optional<double>(sweep.min_margin) : std::nullopt)
      .add("lambda_min", opt.lambda_min)
      .add("lambda_max", opt.lambda_max)
      .add("seed", std::to_string(opt.seed))
      .add("pass", sweep.violations == 0);
  report::write(out, s);
  return sweep.violations == 0 ? kOk : kVerification;
}

struct GradcheckOptions {
  double tolerance = 1e-3;
  double step = 1e-6;
  // Test fixture: parameter whose gradient is cut off before the check.
  std::string corrupt;
};

inline std::vector<model::GroupGradError> run_gradcheck(const model::ModelConfig& cfg, const GradcheckOptions& opt) {
  auto m = model::init_model(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> xv(cfg.lookback * cfg.channels), yv(cfg.horizon * cfg.channels);
  for (auto& v : xv) v = nd(rng);
  for (auto& v : yv) v = nd(rng);
  if (!opt.corrupt.empty()) {
    bool found = false;
    for (auto& [name, t] : m.named_parameters())
      if (name == opt.corrupt) {
        t.set_requires_grad(false);
        found = true;
      }
    if (!found) throw ConfigError("gradcheck: no parameter named '" + opt.corrupt + "'");
  }
  return model::gradient_check(m, Tensor({cfg.lookback, cfg.channels}, xv), Tensor({cfg.horizon, cfg.channels}, yv),
                               opt.step);
}

inline int cmd_gradcheck(const RunConfig& rc, const GradcheckOptions& opt, std::ostream& out) {
  const auto& cfg = rc.model;
  cfg.validate();
  if (cfg.lookback > 32 || cfg.width > 8)
    throw ConfigError("gradcheck needs a tiny config (L <= 32, D <= 8), got L=" + std::to_string(cfg.lookback) +
                      " D=" + std::to_string(cfg.width));
  if (!(opt.step > 0.0) || !(opt.tolerance > 0.0)) throw ConfigError("gradcheck: step and tolerance must be positive");
  const auto groups = run_gradcheck(cfg, opt);
  std::size_t worst = 0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    report::Record r{"group", {}};
    r.add("name", g.name)
        .add("count", g.count)
        .add("rel_error", g.rel_error)
        .add("max_coord_error", g.max_coord_error)
        .add("grad_norm", g.grad_norm);
    report::write(out, r);
    if (g.rel_error > groups[worst].rel_error) worst = i;
  }
  const bool pass = groups[worst].rel_error <= opt.tolerance;
  report::Record s{"gradcheck", {}};
  s.add("groups", groups.size())
      .add("worst_group", groups[worst].name)
      .add("worst_error", groups[worst].rel_error)
      .add("tolerance", opt.tolerance)
      .add("step", opt.step)
      .add("seed", std::to_string(cfg.seed))
      .add("pass", pass);
  report::write(out, s);
  return pass ? kOk : kVerification;
}

inline std::vector<std::string> default_sweep_values(const std::string& param) {
  if (param == "alpha") return {"0.2", "0.4", "0.6", "0.8", "1"};
  if (param == "k_lags" || param == "n_harmonics") return {"1", "2", "3", "4", "5"};
  throw ConfigError("sweep parameter must be alpha, k_lags or n_harmonics, got '" + param + "'");
}

struct SweepRow {
  std::string value;
  int code = kOk;
  std::string error;
  std::optional<TrainOutcome> outcome;
};

inline report::Record sweep_record(const std::string& param, const SweepRow& row, std::uint64_t seed) {
  report::Record r{"sweep", {}};
  r.add("param", param).add("value", row.value).add("seed", std::to_string(seed));
  if (!row.outcome) {
    r.add("status", "failed").add("code", row.code).add("error", report::escape(row.error));
    return r;
  }
  const auto& o = *row.outcome;
  r.add("status", "ok")
      .add("mse", o.test.mse)
      .add("mae", o.test.mae)
      .add("mae_raw", o.test.mae_raw)
      .add("rmse_raw", o.test.rmse_raw)
      .add("wape_raw", o.test.wape_raw)
      .add("naive_mse", o.naive.mse)
      .add("best_epoch", o.result.best_epoch)
      .add("steps", o.result.steps);
  return r;
}

// One train/evaluate run per value with the shared seed; runs are
// independent, so up to `jobs` of them execute at once.
inline int cmd_sweep(const RunConfig& rc, const std::string& param, std::vector<std::string> values, std::size_t jobs,
                     std::ostream& out, std::ostream& err) {
  if (values.empty()) values = default_sweep_values(param);
  else default_sweep_values(param);
  if (jobs == 0) throw ConfigError("jobs must be positive");
  auto ds = load_dataset(rc.data, rc.max_rows);
  std::vector<SweepRow> rows(values.size());
  auto run_one = [&](std::size_t i) {
    rows[i].value = values[i];
    try {
      RunConfig cell = rc;
      if (!cell.apply(param, values[i])) throw ConfigError("unknown key '" + param + "'");
      rows[i].outcome = train_and_evaluate(ds, cell);
    } catch (const std::exception& e) {
      rows[i].code = exit_code_for(e);
      rows[i].error = e.what();
    }
  };
  for (std::size_t i0 = 0; i0 < values.size(); i0 += jobs) {
    std::vector<std::future<void>> running;
    for (std::size_t i = i0; i < std::min(values.size(), i0 + jobs); ++i)
      running.push_back(std::async(std::launch::async, run_one, i));
    for (auto& f : running) f.get();
  }
  std::vector<report::Record> table{run_record("sweep", rc)};
  table.back().add("param", param);
  int code = kOk;
  for (const auto& row : rows) {
    table.push_back(sweep_record(param, row, rc.model.seed));
    if (row.code != kOk) {
      err << "sweep " << param << "=" << row.value << " failed: " << row.error << '\n';
      if (code == kOk) code = row.code;
    }
  }
  for (const auto& r : table) report::write(out, r);
  std::filesystem::create_directories(rc.out_dir);
  write_report_file(std::filesystem::path(rc.out_dir) / ("sweep_" + param + ".txt"), table);
  return code;
}

// Synthetic CSV. kind=periodic draws each channel from a periodic spec with
// seed + channel; kind=two_tone sums two random sinusoids plus noise.
struct SynthConfig {
  std::string kind = "periodic";
  std::size_t period = 24;
  std::size_t repeats = 40;
  std::vector<double> harmonics{1.0, 0.5};
  double sigma = 0.1;
  std::size_t channels = 1;
  std::uint64_t seed = 0;
  std::size_t length = 2000;  // two_tone only
  double noise = 0.1;         // two_tone only

  bool apply(const std::string& key, const std::string& value) {
    using model::detail::parse_double;
    using model::detail::parse_uint;
    if (key == "kind") {
      if (value != "periodic" && value != "two_tone") throw ConfigError("kind must be periodic or two_tone");
      kind = value;
    } else if (key == "period") period = parse_uint(key, value);
    else if (key == "repeats") repeats = parse_uint(key, value);
    else if (key == "harmonics") {
      harmonics.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) harmonics.push_back(parse_double(key, data::detail::trim(item)));
      if (harmonics.empty()) throw ConfigError("harmonics: need at least one coefficient");
    } else if (key == "sigma") sigma = parse_double(key, value);
    else if (key == "channels") channels = parse_uint(key, value);
    else if (key == "seed") seed = parse_uint(key, value);
    else if (key == "length") length = parse_uint(key, value);
    else if (key == "noise") noise = parse_double(key, value);
    else return false;
    return true;
  }
};

inline data::Dataset synth_table(const SynthConfig& sc) {
  if (sc.channels == 0) throw ConfigError("channels must be positive");
  if (sc.kind == "two_tone") {
    if (sc.length == 0) throw ConfigError("length must be positive");
    return data::two_tone_dataset(sc.length, sc.channels, sc.noise, sc.seed);
  }
  if (sc.sigma < 0.0) throw ConfigError("sigma must be non-negative");
  data::SyntheticPeriodicSignal spec;
  spec.period = sc.period;
  spec.repeats = sc.repeats;
  spec.harmonic_coeffs = sc.harmonics;
  spec.residual_sigma = sc.sigma;
  spec.seed = sc.seed;
  try {
    return data::synth_dataset(spec, sc.channels);
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

inline int cmd_synth(const SynthConfig& sc, const std::string& path, std::ostream& out) {
  auto ds = synth_table(sc);
  std::ofstream f(path);
  if (!f) throw ConfigError(path + ": cannot write");
  data::write_csv(ds, f);
  report::Record r{"synth", {}};
  r.add("kind", sc.kind)
      .add("rows", ds.length)
      .add("channels", ds.channels)
      .add("seed", std::to_string(sc.seed))
      .add("out", report::escape(path));
  report::write(out, r);
  return kOk;
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-branch long-term forecasting toolkit"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override one key, key=value (repeatable)")->take_all();
  };

  auto* train = app.add_subcommand("train", "train a model, write checkpoint, history and test metrics");
  add_config(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint against the naive baseline");
  std::string checkpoint, split_name = "test", eval_data;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "CSV dataset (overrides the data key)");
  eval->add_option("--split", split_name, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  add_config(eval);

  auto* analyze = app.add_subcommand("analyze", "sliding-window periodicity weight per channel");
  std::string analyze_data;
  std::size_t max_rows = 0;
  AnalyzeOptions aopt;
  analyze->add_option("--data", analyze_data, "CSV dataset")->required()->check(CLI::ExistingFile);
  analyze->add_option("--window", aopt.window, "window length L")->capture_default_str();
  analyze->add_option("--stride", aopt.stride, "step between window starts")->capture_default_str();
  analyze->add_option("--n-harmonics", aopt.n_harmonics, "harmonics counted in w_f")->capture_default_str();
  analyze->add_option("--max-rows", max_rows, "use only the first rows (0 = all)")->capture_default_str();

  auto* theorem = app.add_subcommand("verify-theorem", "check the harmonic energy lower bound on random signals");
  TheoremOptions topt;
  theorem->add_option("--count", topt.count, "number of random specs")->capture_default_str();
  theorem->add_option("--lambda-min", topt.lambda_min, "smallest target energy ratio")->capture_default_str();
  theorem->add_option("--lambda-max", topt.lambda_max, "largest target energy ratio")->capture_default_str();
  theorem->add_option("--seed", topt.seed, "random seed")->capture_default_str();
  theorem->add_flag("--records", topt.records, "emit one record per spec");

  auto* gradcheck = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  GradcheckOptions gopt;
  add_config(gradcheck);
  gradcheck->add_option("--tolerance", gopt.tolerance, "largest accepted relative error")->capture_default_str();
  gradcheck->add_option("--step", gopt.step, "central difference step")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "train and evaluate once per value of one parameter");
  std::string param;
  std::vector<std::string> values;
  std::size_t jobs = 1;
  add_config(sweep);
  sweep->add_option("--param", param, "alpha, k_lags or n_harmonics")
      ->required()
      ->check(CLI::IsMember({"alpha", "k_lags", "n_harmonics"}));
  sweep->add_option("--values", values, "comma separated values (default: the standard grid)")->delimiter(',');
  sweep->add_option("--jobs", jobs, "runs executed concurrently")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "write a synthetic CSV");
  std::string synth_out;
  add_config(synth);
  synth->add_option("--out", synth_out, "output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (*train) return cmd_train(load_run_config(config, sets), out, err);
    if (*eval) {
      auto rc = load_run_config(config, sets);
      if (!eval_data.empty()) rc.data = eval_data;
      return cmd_eval(checkpoint, rc, split_name, out);
    }
    if (*analyze) {
      auto ds = load_dataset(analyze_data, max_rows);
      return cmd_analyze(ds, aopt, out);
    }
    if (*theorem) return cmd_verify_theorem(topt, out);
    if (*gradcheck) return cmd_gradcheck(load_run_config(config, sets, gradcheck_defaults()), gopt, out);
    if (*sweep) return cmd_sweep(load_run_config(config, sets), param, values, jobs, out, err);
    if (*synth) {
      SynthConfig sc;
      apply_sources(config, sets, [&](const std::string& k, const std::string& v) { return sc.apply(k, v); });
      return cmd_synth(sc, synth_out, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"dualformer"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace dualformer::cli
