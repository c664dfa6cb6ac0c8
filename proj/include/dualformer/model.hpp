#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dualformer/attention.hpp"
#include "dualformer/gradcheck.hpp"
#include "dualformer/ops.hpp"
#include "dualformer/spectral.hpp"

namespace dualformer::model {

using attention::BranchProjections;
using attention::LagPolicy;

struct ModelConfig {
  std::size_t lookback = 96;  // L
  std::size_t horizon = 96;   // T
  std::size_t channels = 7;   // C
  std::size_t width = 16;     // D
  std::size_t heads = 4;
  std::size_t layers = 3;     // N
  double alpha = 0.5;
  std::size_t k_lags = 3;
  LagPolicy lag_policy = LagPolicy::factor;
  std::size_t n_harmonics = 3;
  std::size_t ffn_mult = 4;
  std::uint64_t seed = 0;
  bool per_channel_weighting = false;

  void validate() const {
    auto positive = [](std::size_t v, const char* key) {
      if (v == 0) throw ConfigError(std::string(key) + " must be positive");
    };
    positive(lookback, "L");
    positive(horizon, "T");
    positive(channels, "C");
    positive(width, "D");
    positive(heads, "heads");
    positive(layers, "N");
    positive(k_lags, "k_lags");
    positive(n_harmonics, "n_harmonics");
    positive(ffn_mult, "ffn_mult");
    if (width % heads != 0)
      throw ConfigError("D=" + std::to_string(width) + " is not divisible by heads=" + std::to_string(heads));
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
    if (lookback < 2) throw ConfigError("L must be at least 2");
    if (spectral::one_sided_bins(lookback) < layers)
      throw ConfigError("L=" + std::to_string(lookback) + " has too few frequency bins for N=" + std::to_string(layers));
  }

  std::size_t lag_count() const { return attention::lag_count(lag_policy, k_lags, lookback); }
};

inline std::string lag_policy_name(LagPolicy p) { return p == LagPolicy::factor ? "factor" : "direct"; }

inline LagPolicy parse_lag_policy(const std::string& s) {
  if (s == "factor") return LagPolicy::factor;
  if (s == "direct") return LagPolicy::direct;
  throw ConfigError("lag_policy must be factor or direct, got '" + s + "'");
}

enum class Ablation { full, time_only, freq_only, uniform_weighting, no_revin };

inline std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::time_only: return "time_only";
    case Ablation::freq_only: return "freq_only";
    case Ablation::uniform_weighting: return "uniform_weighting";
    case Ablation::no_revin: return "no_revin";
  }
  return "full";
}

inline Ablation parse_ablation(const std::string& s) {
  for (auto a : {Ablation::full, Ablation::time_only, Ablation::freq_only, Ablation::uniform_weighting,
                 Ablation::no_revin})
    if (ablation_name(a) == s) return a;
  throw ConfigError("unknown ablation mode '" + s + "'");
}

// Model keys in canonical order, as written to checkpoints and run configs.
inline std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& c) {
  char alpha[32];
  std::snprintf(alpha, sizeof alpha, "%.17g", c.alpha);
  return {{"L", std::to_string(c.lookback)},
          {"T", std::to_string(c.horizon)},
          {"C", std::to_string(c.channels)},
          {"D", std::to_string(c.width)},
          {"heads", std::to_string(c.heads)},
          {"N", std::to_string(c.layers)},
          {"alpha", alpha},
          {"k_lags", std::to_string(c.k_lags)},
          {"lag_policy", lag_policy_name(c.lag_policy)},
          {"n_harmonics", std::to_string(c.n_harmonics)},
          {"ffn_mult", std::to_string(c.ffn_mult)},
          {"seed", std::to_string(c.seed)},
          {"per_channel_weighting", c.per_channel_weighting ? "true" : "false"}};
}

namespace detail {

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(out))
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

}  // namespace detail

// Applies one key; false when the key is not a model key.
inline bool apply_config_key(ModelConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_uint;
  if (key == "L") c.lookback = parse_uint(key, value);
  else if (key == "T") c.horizon = parse_uint(key, value);
  else if (key == "C") c.channels = parse_uint(key, value);
  else if (key == "D") c.width = parse_uint(key, value);
  else if (key == "heads") c.heads = parse_uint(key, value);
  else if (key == "N") c.layers = parse_uint(key, value);
  else if (key == "alpha") c.alpha = detail::parse_double(key, value);
  else if (key == "k_lags") c.k_lags = parse_uint(key, value);
  else if (key == "lag_policy") c.lag_policy = parse_lag_policy(value);
  else if (key == "n_harmonics") c.n_harmonics = parse_uint(key, value);
  else if (key == "ffn_mult") c.ffn_mult = parse_uint(key, value);
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "per_channel_weighting") c.per_channel_weighting = detail::parse_bool(key, value);
  else return false;
  return true;
}

// ---------------------------------------------------------------------------
// RevIN
// ---------------------------------------------------------------------------

struct RevIN {
  Tensor gamma, beta;  // [C]
  double eps = 1e-5;
};

// Statistics captured from one input window.
struct RevINState {
  std::vector<double> mean, std;
};

inline RevINState revin_stats(const Tensor& x, double eps) {
  dualformer::detail::require_matrix(x, "revin");
  const auto rows = x.dim(0), cols = x.dim(1);
  RevINState s{std::vector<double>(cols, 0.0), std::vector<double>(cols, 0.0)};
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) s.mean[c] += x.at(r, c);
  for (auto& m : s.mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = x.at(r, c) - s.mean[c];
      s.std[c] += d * d;
    }
  for (auto& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(rows)), eps);
  return s;
}

// (x - mean) / std, no affine.
inline Tensor revin_standardize(const Tensor& x, const RevINState& s) {
  std::vector<double> neg(s.mean.size());
  for (std::size_t c = 0; c < neg.size(); ++c) neg[c] = -s.mean[c];
  return div_row(add_row(x, Tensor::vector(neg)), Tensor::vector(s.std));
}

inline Tensor revin_normalize(const Tensor& x, const RevIN& r, RevINState& state) {
  state = revin_stats(x, r.eps);
  return add_row(mul_row(revin_standardize(x, state), r.gamma), r.beta);
}

inline Tensor revin_denormalize(const Tensor& y, const RevIN& r, const RevINState& state) {
  auto z = div_row(add_row(y, scale(r.beta, -1.0)), r.gamma);
  return add_row(mul_row(z, Tensor::vector(state.std)), Tensor::vector(state.mean));
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct EncoderLayer {
  BranchProjections time, freq;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Per-forward probes and overrides.
struct ForwardContext {
  attention::LagTape* tape = nullptr;
  std::optional<double> w_f_override;
  std::size_t time_calls = 0;
  std::size_t freq_calls = 0;
  double last_w_f = 0.0;
  double last_w_t = 0.0;
  std::vector<double> channel_w_f;
  // Per-channel mode: hidden-unit w_f of the last pass; reused as is when
  // replay_unit_weights is set.
  std::vector<double> unit_w_f;
  bool replay_unit_weights = false;
};

struct DualformerModel {
  ModelConfig cfg;
  RevIN revin;
  Tensor embed_w, embed_b;  // [C x D], [D]
  std::vector<EncoderLayer> layers;
  Tensor head_w, head_b;  // [(L*D) x (T*C)], [T*C]
  spectral::SamplingPlan plan;
  Ablation mode = Ablation::full;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out{{"revin.gamma", revin.gamma},
                                                    {"revin.beta", revin.beta},
                                                    {"embed.weight", embed_w},
                                                    {"embed.bias", embed_b}};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const auto pre = "layers." + std::to_string(i) + ".";
      for (auto [branch, proj] : {std::pair{"time", &l.time}, std::pair{"freq", &l.freq}}) {
        out.emplace_back(pre + branch + ".w_q", proj->w_q);
        out.emplace_back(pre + branch + ".w_k", proj->w_k);
        out.emplace_back(pre + branch + ".w_v", proj->w_v);
        out.emplace_back(pre + branch + ".w_out", proj->w_out);
      }
      out.emplace_back(pre + "ln1.gamma", l.ln1_gamma);
      out.emplace_back(pre + "ln1.beta", l.ln1_beta);
      out.emplace_back(pre + "ln2.gamma", l.ln2_gamma);
      out.emplace_back(pre + "ln2.beta", l.ln2_beta);
      out.emplace_back(pre + "ffn.w1", l.ffn_w1);
      out.emplace_back(pre + "ffn.b1", l.ffn_b1);
      out.emplace_back(pre + "ffn.w2", l.ffn_w2);
      out.emplace_back(pre + "ffn.b2", l.ffn_b2);
    }
    out.emplace_back("head.weight", head_w);
    out.emplace_back("head.bias", head_b);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto p : parameters()) p.zero_grad();
  }
};

// Order-sensitive FNV-1a over the raw parameter bytes.
inline std::uint64_t parameter_checksum(const DualformerModel& m) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : m.parameters())
    for (double v : p.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (auto b : bytes) h = (h ^ b) * 1099511628211ull;
    }
  return h;
}

inline std::vector<std::vector<double>> snapshot(const DualformerModel& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.values());
  return out;
}

inline void restore(DualformerModel& m, const std::vector<std::vector<double>>& values) {
  auto params = m.parameters();
  if (params.size() != values.size()) throw ContractError("restore: parameter count differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i].size()) throw ContractError("restore: parameter size differs");
    std::copy(values[i].begin(), values[i].end(), params[i].mutable_data().begin());
  }
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases; ones and
// zeros for the normalisation affines.
inline DualformerModel init_model(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
  };
  const auto C = cfg.channels, D = cfg.width, H = cfg.ffn_mult * cfg.width;

  DualformerModel m;
  m.cfg = cfg;
  m.revin.gamma = Tensor::full({C}, 1.0, true);
  m.revin.beta = Tensor::zeros({C}, true);
  m.embed_w = uniform({C, D}, C);
  m.embed_b = uniform({D}, C);
  for (std::size_t n = 0; n < cfg.layers; ++n) {
    EncoderLayer l;
    l.time = BranchProjections::init(D, cfg.heads, rng);
    l.freq = BranchProjections::init(D, cfg.heads, rng);
    l.ln1_gamma = Tensor::full({D}, 1.0, true);
    l.ln1_beta = Tensor::zeros({D}, true);
    l.ln2_gamma = Tensor::full({D}, 1.0, true);
    l.ln2_beta = Tensor::zeros({D}, true);
    l.ffn_w1 = uniform({D, H}, D);
    l.ffn_b1 = uniform({H}, D);
    l.ffn_w2 = uniform({H, D}, H);
    l.ffn_b2 = uniform({D}, H);
    m.layers.push_back(std::move(l));
  }
  m.head_w = uniform({cfg.lookback * D, cfg.horizon * C}, cfg.lookback * D);
  m.head_b = uniform({cfg.horizon * C}, cfg.lookback * D);
  m.plan = spectral::make_plan(cfg.layers, cfg.alpha, cfg.lookback);
  return m;
}

// Same parameters (shared storage), different wiring.
inline DualformerModel ablation_variant(const DualformerModel& m, Ablation mode) {
  DualformerModel v = m;
  v.mode = mode;
  return v;
}

struct ChannelPeriodicity {
  double w_f = 0.0;
  std::size_t basis = 0;  // 0 for flat channels
  bool flat = false;
};

// Per-channel harmonic energy ratio of a window; a constant channel, or one
// whose spectrum has no basis frequency, is flat with w_f = 0.
inline std::vector<ChannelPeriodicity> channel_periodicity(const Tensor& x, std::size_t n_harmonics) {
  const auto L = x.dim(0), C = x.dim(1);
  const auto s = spectral::rfft(x.data(), C);
  std::vector<ChannelPeriodicity> out(C);
  for (std::size_t c = 0; c < C; ++c) {
    double lo = x.at(0, c), hi = lo;
    for (std::size_t t = 1; t < L; ++t) {
      lo = std::min(lo, x.at(t, c));
      hi = std::max(hi, x.at(t, c));
    }
    if (lo == hi) {
      out[c].flat = true;
      continue;
    }
    try {
      const auto w = spectral::harmonic_energy_ratio(s, n_harmonics, c);
      out[c].w_f = w.w_f;
      out[c].basis = w.basis_freq;
    } catch (const NoDominantFrequency&) {
      out[c].flat = true;
    } catch (const DegenerateSignal&) {
      out[c].flat = true;
    }
  }
  return out;
}

inline std::vector<double> channel_weights(const Tensor& x, std::size_t n_harmonics) {
  std::vector<double> out;
  for (const auto& p : channel_periodicity(x, n_harmonics)) out.push_back(p.w_f);
  return out;
}

inline Tensor forward(const DualformerModel& m, const Tensor& x, ForwardContext* ctx = nullptr) {
  const auto& cfg = m.cfg;
  if (x.rank() != 2 || x.dim(0) != cfg.lookback || x.dim(1) != cfg.channels)
    throw ContractError("forward: expected input [" + std::to_string(cfg.lookback) + "x" +
                        std::to_string(cfg.channels) + "], got " + shape_str(x.shape()));
  const bool use_revin = m.mode != Ablation::no_revin;
  RevINState stats;
  Tensor standardized = x, xn = x;
  if (use_revin) {
    stats = revin_stats(x, m.revin.eps);
    standardized = revin_standardize(x, stats);
    xn = add_row(mul_row(standardized, m.revin.gamma), m.revin.beta);
  }

  // Fusion weights: constants derived from the standardised input.
  std::vector<double> cw = channel_weights(standardized.detach(), cfg.n_harmonics);
  double w_f = 0.0;
  for (double v : cw) w_f += v;
  w_f /= static_cast<double>(cw.size());
  switch (m.mode) {
    case Ablation::time_only: w_f = 0.0; break;
    case Ablation::freq_only: w_f = 1.0; break;
    case Ablation::uniform_weighting: w_f = 0.5; break;
    default: break;
  }
  if (ctx && ctx->w_f_override) w_f = *ctx->w_f_override;
  const double w_t = 1.0 - w_f;
  const bool per_channel = cfg.per_channel_weighting && m.mode != Ablation::time_only &&
                           m.mode != Ablation::freq_only && m.mode != Ablation::uniform_weighting &&
                           !(ctx && ctx->w_f_override);
  if (ctx) {
    ctx->last_w_f = w_f;
    ctx->last_w_t = w_t;
    ctx->channel_w_f = cw;
  }

  // Per-channel mode: hidden unit d takes the channel weights mixed by the
  // share of |embed_w[c][d]| that each channel contributes.
  Tensor wf_row, wt_row;
  bool any_f = w_f != 0.0, any_t = w_t != 0.0;
  if (per_channel) {
    const auto C = cfg.channels, D = cfg.width;
    std::vector<double> wf(D, 0.0), wt(D, 0.0);
    if (ctx && ctx->replay_unit_weights) {
      if (ctx->unit_w_f.size() != D) throw ContractError("forward: no recorded unit weights to replay");
      wf = ctx->unit_w_f;
    } else {
      for (std::size_t d = 0; d < D; ++d) {
        double total = 0.0, acc = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          const double a = std::abs(m.embed_w.at(c, d));
          total += a;
          acc += a * cw[c];
        }
        wf[d] = total > 0.0 ? acc / total : w_f;
      }
      if (ctx) ctx->unit_w_f = wf;
    }
    for (std::size_t d = 0; d < D; ++d) wt[d] = 1.0 - wf[d];
    any_f = std::any_of(wf.begin(), wf.end(), [](double v) { return v != 0.0; });
    any_t = std::any_of(wt.begin(), wt.end(), [](double v) { return v != 0.0; });
    wf_row = Tensor::vector(std::move(wf));
    wt_row = Tensor::vector(std::move(wt));
  }

  const auto lags = cfg.lag_count();
  Tensor h = add_row(matmul(xn, m.embed_w), m.embed_b);
  for (std::size_t n = 0; n < m.layers.size(); ++n) {
    const auto& layer = m.layers[n];
    const auto& band = m.plan.band(n + 1);
    Tensor fused = h;
    if (any_t) {
      auto t = attention::time_branch(h, band, layer.time);
      fused = add(fused, per_channel ? mul_row(t, wt_row) : scale(t, w_t));
      if (ctx) ++ctx->time_calls;
    }
    if (any_f) {
      auto f = attention::freq_branch(h, band, layer.freq, lags, ctx ? ctx->tape : nullptr);
      fused = add(fused, per_channel ? mul_row(f, wf_row) : scale(f, w_f));
      if (ctx) ++ctx->freq_calls;
    }
    auto u = layer_norm(fused, layer.ln1_gamma, layer.ln1_beta);
    auto ffn = add_row(matmul(gelu(add_row(matmul(u, layer.ffn_w1), layer.ffn_b1)), layer.ffn_w2), layer.ffn_b2);
    h = layer_norm(add(u, ffn), layer.ln2_gamma, layer.ln2_beta);
  }
  auto flat = reshape(h, {1, cfg.lookback * cfg.width});
  auto y = reshape(add_row(matmul(flat, m.head_w), m.head_b), {cfg.horizon, cfg.channels});
  return use_revin ? revin_denormalize(y, m.revin, stats) : y;
}

// rel_error is the group-wise ||a - n|| / (||a|| + ||n|| + 1e-12);
// max_coord_error the worst single coordinate, for diagnostics.
struct GroupGradError {
  std::string name;
  std::size_t count = 0;
  double rel_error = 0.0;
  double max_coord_error = 0.0;
  double grad_norm = 0.0;
};

// Analytic vs central-difference gradients of mse(forward(x), y) for every
// parameter group. Lags and per-unit fusion weights are recorded on the
// first pass and replayed.
inline std::vector<GroupGradError> gradient_check(DualformerModel& m, const Tensor& x, const Tensor& y,
                                                  double step = 1e-6) {
  attention::LagTape tape;
  ForwardContext ctx;
  ctx.tape = &tape;
  auto loss = [&] {
    tape.rewind(true);
    return mse_loss(forward(m, x, &ctx), y);
  };
  tape.rewind(false);
  m.zero_grad();
  backward(mse_loss(forward(m, x, &ctx), y));
  ctx.replay_unit_weights = true;

  std::vector<GroupGradError> out;
  for (auto& [name, p] : m.named_parameters()) {
    const auto analytic = p.grad();
    auto numeric = central_differences([&] { return loss().item(); }, p, step);
    GroupGradError g{name, p.size()};
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      g.max_coord_error = std::max(g.max_coord_error, grad_rel_error(analytic[i], numeric[i]));
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    g.grad_norm = std::sqrt(na);
    g.rel_error = std::sqrt(diff) / (std::sqrt(na) + std::sqrt(nn) + 1e-12);
    out.push_back(g);
  }
  m.zero_grad();
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------
//
//   dualformer-checkpoint 1
//   config <key> <value>        (one per model key)
//   mode <ablation>
//   param <name> <rank> <extents...>
//   <values, space separated, %.17g>
//   end

inline void save_checkpoint(const DualformerModel& m, std::ostream& os) {
  os << "dualformer-checkpoint 1\n";
  for (const auto& [k, v] : config_entries(m.cfg)) os << "config " << k << ' ' << v << '\n';
  os << "mode " << ablation_name(m.mode) << '\n';
  char buf[32];
  for (const auto& [name, t] : m.named_parameters()) {
    os << "param " << name << ' ' << t.rank();
    for (auto e : t.shape()) os << ' ' << e;
    os << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", t[i]);
      os << (i ? " " : "") << buf;
    }
    os << '\n';
  }
  os << "end\n";
}

inline DualformerModel load_checkpoint(std::istream& is) {
  std::string line, word;
  if (!std::getline(is, line) || line != "dualformer-checkpoint 1")
    throw ParseError("checkpoint: missing header 'dualformer-checkpoint 1'");
  ModelConfig cfg;
  Ablation mode = Ablation::full;
  std::map<std::string, std::pair<Shape, std::vector<double>>> params;
  std::size_t lineno = 1;
  bool ended = false;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    ls >> word;
    if (word == "end") {
      ended = true;
      break;
    }
    if (word == "mode") {
      std::string name;
      ls >> name;
      try {
        mode = parse_ablation(name);
      } catch (const ConfigError& e) {
        throw ParseError("checkpoint line " + std::to_string(lineno) + ": " + e.what());
      }
    } else if (word == "config") {
      std::string key, value;
      ls >> key >> value;
      try {
        if (!apply_config_key(cfg, key, value)) throw ParseError("unknown config key '" + key + "'");
      } catch (const ConfigError& e) {
        throw ParseError("checkpoint line " + std::to_string(lineno) + ": " + e.what());
      }
    } else if (word == "param") {
      std::string name;
      std::size_t rank = 0;
      ls >> name >> rank;
      Shape shape(rank);
      for (auto& e : shape) ls >> e;
      if (!ls) throw ParseError("checkpoint line " + std::to_string(lineno) + ": bad param header");
      if (!std::getline(is, line)) throw ParseError("checkpoint: values missing for " + name);
      ++lineno;
      std::vector<double> values;
      values.reserve(shape_size(shape));
      const char* p = line.c_str();
      char* end = nullptr;
      for (;;) {
        const double v = std::strtod(p, &end);
        if (end == p) break;
        values.push_back(v);
        p = end;
      }
      params[name] = {shape, std::move(values)};
    } else {
      throw ParseError("checkpoint line " + std::to_string(lineno) + ": unexpected '" + word + "'");
    }
  }
  if (!ended) throw ParseError("checkpoint: truncated (no 'end' marker)");

  DualformerModel m;
  try {
    m = init_model(cfg);
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: invalid config: ") + e.what());
  }
  auto named = m.named_parameters();
  if (params.size() != named.size())
    throw ParseError("checkpoint: expected " + std::to_string(named.size()) + " parameters, found " +
                     std::to_string(params.size()));
  for (auto& [name, t] : named) {
    auto it = params.find(name);
    if (it == params.end()) throw ParseError("checkpoint: parameter '" + name + "' missing");
    if (it->second.first != t.shape())
      throw ParseError("checkpoint: parameter '" + name + "' has shape " + shape_str(it->second.first) +
                       ", config requires " + shape_str(t.shape()));
    if (it->second.second.size() != t.size())
      throw ParseError("checkpoint: parameter '" + name + "' has " + std::to_string(it->second.second.size()) +
                       " values, expected " + std::to_string(t.size()));
    for (double v : it->second.second)
      if (!std::isfinite(v)) throw ParseError("checkpoint: parameter '" + name + "' holds a non-finite value");
    std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_data().begin());
  }
  m.mode = mode;
  return m;
}

}  // namespace dualformer::model
