#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dualformer/data.hpp"
#include "dualformer/model.hpp"
#include "dualformer/report.hpp"

namespace dualformer::pipeline {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace detail {
inline void require_same_length(std::span<const double> p, std::span<const double> y, const char* who) {
  if (p.size() != y.size() || p.empty())
    throw DimensionError(std::string(who) + ": prediction has " + std::to_string(p.size()) + " values, target " +
                         std::to_string(y.size()));
}
}  // namespace detail

inline double mse(std::span<const double> p, std::span<const double> y) {
  detail::require_same_length(p, y, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  return s / static_cast<double>(p.size());
}

inline double mae(std::span<const double> p, std::span<const double> y) {
  detail::require_same_length(p, y, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - y[i]);
  return s / static_cast<double>(p.size());
}

inline double rmse(std::span<const double> p, std::span<const double> y) { return std::sqrt(mse(p, y)); }

// Empty when sum |y| == 0.
inline std::optional<double> wape(std::span<const double> p, std::span<const double> y) {
  detail::require_same_length(p, y, "wape");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    num += std::abs(p[i] - y[i]);
    den += std::abs(y[i]);
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline constexpr double kBaseLearningRate = 1e-4;

// One bias-corrected Adam update from the accumulated gradients of `params`.
inline void adam_step(std::vector<Tensor>& params, AdamState& s, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.size(), 0.0);
      s.v.emplace_back(p.size(), 0.0);
    }
  }
  if (s.m.size() != params.size()) throw ContractError("adam_step: state does not match the parameter list");
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.push_back(params[i].grad());
    if (grads.back().size() != s.m[i].size()) throw ContractError("adam_step: parameter shape changed");
    for (double g : grads.back())
      if (!std::isfinite(g))
        throw TrainingError("adam_step: non-finite gradient in parameter " + std::to_string(i) + " at step " +
                            std::to_string(s.t + 1));
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = s.m[i];
    auto& v = s.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
      v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + s.eps);
    }
  }
}

// base_lr * (1 + cos(pi * step / t_max)) / 2, step clamped to t_max.
inline double cosine_lr(std::size_t step, std::size_t t_max, double base_lr) {
  if (t_max == 0) return base_lr;
  const double s = static_cast<double>(std::min(step, t_max)) / static_cast<double>(t_max);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * s));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 3;
  double lr = kBaseLearningRate;
  std::uint64_t seed = 0;
  // Hard cap on optimiser steps; 0 means no cap.
  std::size_t max_steps = 0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (patience == 0) throw ConfigError("patience must be at least 1");
    if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_mse;
  double lr = 0.0;  // rate of the epoch's first step
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_score = std::numeric_limits<double>::infinity();
  std::size_t steps = 0;
  bool early_stopped = false;
};

// Patience counter over a score sequence, lower is better.
struct EarlyStopper {
  std::size_t patience = 3;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t bad_epochs = 0;

  // True when `score` is a new best.
  bool update(std::size_t epoch, double score) {
    if (score < best) {
      best = score;
      best_epoch = epoch;
      bad_epochs = 0;
      return true;
    }
    ++bad_epochs;
    return false;
  }
  bool should_stop() const { return bad_epochs >= patience; }
};

// Mean per-window MSE of the model on normalised windows.
inline double mean_loss(const model::DualformerModel& m, const data::Windows& windows) {
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto w = windows[i];
    total += mse(model::forward(m, w.x).data(), w.y.data());
  }
  return total / static_cast<double>(windows.size());
}

// Seeded mini-batch Adam on per-window MSE with cosine decay and early
// stopping on validation MSE (train loss when there are no val windows).
// The best-scoring parameters are restored on return.
inline TrainResult train(model::DualformerModel& m, const data::Windows& train_windows,
                         const data::Windows& val_windows, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (train_windows.empty()) throw TrainingError("train: no training windows");
  const auto n = train_windows.size();
  const auto steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t t_max = cfg.max_epochs * steps_per_epoch;
  if (cfg.max_steps) t_max = std::min(t_max, cfg.max_steps);

  auto params = m.parameters();
  AdamState adam;
  EarlyStopper stopper{cfg.patience};
  TrainResult result;
  auto best = model::snapshot(m);
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    for (std::size_t i = n - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(rng)]);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cosine_lr(result.steps, t_max, cfg.lr);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
      if (cfg.max_steps && result.steps >= cfg.max_steps) break;
      const auto b1 = std::min(n, b0 + cfg.batch_size);
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      m.zero_grad();
      for (std::size_t k = b0; k < b1; ++k) {
        auto w = train_windows[order[k]];
        Tensor loss;
        try {
          loss = mse_loss(model::forward(m, w.x), w.y);
        } catch (const NumericError& e) {
          throw TrainingError("train: epoch " + std::to_string(epoch) + ", step " + std::to_string(result.steps + 1) +
                              ", window " + std::to_string(w.start) + ": " + e.what());
        }
        loss_sum += loss.item();
        ++seen;
        backward(scale(loss, inv));
      }
      const double lr = cosine_lr(result.steps, t_max, cfg.lr);
      if (lr > 0.0) adam_step(params, adam, lr);
      ++result.steps;
    }
    m.zero_grad();
    if (seen == 0) break;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    if (!std::isfinite(rec.train_loss))
      throw TrainingError("train: non-finite training loss in epoch " + std::to_string(epoch));
    double score = rec.train_loss;
    if (!val_windows.empty()) {
      rec.val_mse = mean_loss(m, val_windows);
      score = *rec.val_mse;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stopper.update(epoch, score)) best = model::snapshot(m);
    if (stopper.should_stop()) {
      result.early_stopped = true;
      break;
    }
    if (cfg.max_steps && result.steps >= cfg.max_steps) break;
  }
  model::restore(m, best);
  result.best_epoch = stopper.best_epoch;
  result.best_score = stopper.best;
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MetricsReport {
  std::string label;
  std::size_t windows = 0;
  double mse = 0.0;  // normalised scale
  double mae = 0.0;
  double mae_raw = 0.0;  // re-normalised scale
  double rmse_raw = 0.0;
  std::optional<double> wape_raw;

  report::Record to_record(const std::string& type = "metrics") const {
    report::Record r{type, {}};
    r.add("label", label)
        .add("windows", windows)
        .add("mse", mse)
        .add("mae", mae)
        .add("mae_raw", mae_raw)
        .add("rmse_raw", rmse_raw)
        .add("wape_raw", wape_raw);
    return r;
  }

  static MetricsReport from_record(const report::Record& r) {
    MetricsReport m;
    m.label = r.get("label");
    m.windows = r.count("windows");
    m.mse = r.real("mse");
    m.mae = r.real("mae");
    m.mae_raw = r.real("mae_raw");
    m.rmse_raw = r.real("rmse_raw");
    m.wape_raw = r.optional_real("wape_raw");
    return m;
  }
};

using Predictor = std::function<Tensor(const Tensor&)>;

// Per-window MSE/MAE averaged over windows on the normalised scale, and
// MAE/RMSE/WAPE after inverting the z-score; RMSE is the root of the mean
// re-normalised MSE and WAPE pools absolute errors over all windows.
inline MetricsReport evaluate_predictor(const Predictor& predict, const data::Windows& windows,
                                        const data::NormStats& stats, const std::string& label) {
  if (windows.empty()) throw ContractError("evaluate: no windows to evaluate");
  MetricsReport r;
  r.label = label;
  r.windows = windows.size();
  double raw_mse = 0.0, abs_err = 0.0, abs_y = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto w = windows[i];
    auto p = predict(w.x);
    r.mse += mse(p.data(), w.y.data());
    r.mae += mae(p.data(), w.y.data());
    const auto C = w.y.dim(1);
    std::vector<double> pr(p.size()), yr(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
      pr[j] = stats.invert(p[j], j % C);
      yr[j] = stats.invert(w.y[j], j % C);
      abs_err += std::abs(pr[j] - yr[j]);
      abs_y += std::abs(yr[j]);
    }
    raw_mse += mse(pr, yr);
    r.mae_raw += mae(pr, yr);
  }
  const double nw = static_cast<double>(windows.size());
  r.mse /= nw;
  r.mae /= nw;
  r.mae_raw /= nw;
  r.rmse_raw = std::sqrt(raw_mse / nw);
  if (abs_y > 0.0) r.wape_raw = abs_err / abs_y;
  return r;
}

// Repeats the last observed row T times.
inline Tensor naive_baseline(const Tensor& x, std::size_t horizon) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ContractError("naive_baseline: need a non-empty L x C window");
  const auto L = x.dim(0), C = x.dim(1);
  std::vector<double> out(horizon * C);
  for (std::size_t t = 0; t < horizon; ++t)
    for (std::size_t c = 0; c < C; ++c) out[t * C + c] = x.at(L - 1, c);
  return Tensor({horizon, C}, std::move(out));
}

inline MetricsReport evaluate(const model::DualformerModel& m, const data::Windows& windows,
                              const data::NormStats& stats, const std::string& label = "model") {
  NoGradGuard guard;
  return evaluate_predictor([&](const Tensor& x) { return model::forward(m, x); }, windows, stats, label);
}

inline MetricsReport evaluate_naive(const data::Windows& windows, const data::NormStats& stats) {
  const auto T = windows.spec().horizon;
  return evaluate_predictor([T](const Tensor& x) { return naive_baseline(x, T); }, windows, stats, "naive");
}

inline report::Record epoch_record(const EpochRecord& e) {
  report::Record r{"epoch", {}};
  r.add("epoch", e.epoch).add("train_loss", e.train_loss).add("val_mse", e.val_mse).add("lr", e.lr);
  return r;
}

inline EpochRecord epoch_from_record(const report::Record& r) {
  return {r.count("epoch"), r.real("train_loss"), r.optional_real("val_mse"), r.real("lr")};
}

}  // namespace dualformer::pipeline
