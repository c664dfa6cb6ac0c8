#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dualformer/ops.hpp"
#include "dualformer/spectral.hpp"

namespace dualformer::attention {

using spectral::Band;
using spectral::ComplexTensor;

// Q/K/V and output maps of one branch. Head i owns columns
// [i * d_k, (i + 1) * d_k) of the projected matrices.
struct BranchProjections {
  Tensor w_q, w_k, w_v, w_out;
  std::size_t heads = 1;

  std::size_t width() const { return w_q.dim(0); }
  std::size_t head_width() const { return width() / heads; }

  // Uniform(-1/sqrt(D), 1/sqrt(D)) entries.
  static BranchProjections init(std::size_t width, std::size_t heads, std::mt19937_64& rng) {
    if (heads == 0 || width % heads != 0)
      throw ConfigError("BranchProjections: width " + std::to_string(width) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    const double bound = 1.0 / std::sqrt(static_cast<double>(width));
    std::uniform_real_distribution<double> dist(-bound, bound);
    auto draw = [&] {
      std::vector<double> v(width * width);
      for (auto& x : v) x = dist(rng);
      return Tensor({width, width}, std::move(v), true);
    };
    BranchProjections p;
    p.w_q = draw();
    p.w_k = draw();
    p.w_v = draw();
    p.w_out = draw();
    p.heads = heads;
    return p;
  }
};

// Softmax(Q K^T / sqrt(d_k)) V over all positions (no mask).
inline Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.shape() != k.shape() || v.dim(0) != q.dim(0))
    throw DimensionError("scaled_dot_attention: Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                         ", V " + shape_str(v.shape()));
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  return matmul(softmax(scale(matmul(q, transpose(k)), inv), 1), v);
}

namespace detail {

inline void check_input(const Tensor& x, const BranchProjections& proj, const char* who) {
  if (x.rank() != 2 || x.dim(1) != proj.width())
    throw DimensionError(std::string(who) + ": input " + shape_str(x.shape()) + " vs projection width " +
                         std::to_string(proj.width()));
}

inline std::vector<Tensor> split_heads(const Tensor& x, std::size_t heads) {
  std::vector<Tensor> out;
  const auto dk = x.dim(1) / heads;
  for (std::size_t h = 0; h < heads; ++h) out.push_back(slice_cols(x, h * dk, (h + 1) * dk));
  return out;
}

}  // namespace detail

// Plain multi-head attention on the projections, no spectral detour.
inline Tensor multi_head_attention(const Tensor& x, const BranchProjections& proj) {
  detail::check_input(x, proj, "multi_head_attention");
  auto qs = detail::split_heads(matmul(x, proj.w_q), proj.heads);
  auto ks = detail::split_heads(matmul(x, proj.w_k), proj.heads);
  auto vs = detail::split_heads(matmul(x, proj.w_v), proj.heads);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < proj.heads; ++h) heads.push_back(scaled_dot_attention(qs[h], ks[h], vs[h]));
  return matmul(concat_cols(heads), proj.w_out);
}

// Frequency-guided time attention: Q, K, V are band-limited to the layer's
// band (rfft, sample, zero-pad, irfft) before ordinary multi-head attention.
inline Tensor time_branch(const Tensor& x, const Band& band, const BranchProjections& proj) {
  detail::check_input(x, proj, "time_branch");
  auto q = spectral::band_pass(matmul(x, proj.w_q), band);
  auto k = spectral::band_pass(matmul(x, proj.w_k), band);
  auto v = spectral::band_pass(matmul(x, proj.w_v), band);
  auto qs = detail::split_heads(q, proj.heads);
  auto ks = detail::split_heads(k, proj.heads);
  auto vs = detail::split_heads(v, proj.heads);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < proj.heads; ++h) heads.push_back(scaled_dot_attention(qs[h], ks[h], vs[h]));
  return matmul(concat_cols(heads), proj.w_out);
}

// Wiener-Khinchin scores per column: irfft(pad(Q~ * conj(K~)))[tau]. With the
// full band this is the circular cross-correlation sum_t q_t k_{(t - tau) mod L}.
inline Tensor autocorr_scores(const ComplexTensor& q, const ComplexTensor& k, const Band& band) {
  if (q.bins() != band.width() || k.bins() != band.width())
    throw ContractError("autocorr_scores: spectra with " + std::to_string(q.bins()) + " and " +
                        std::to_string(k.bins()) + " bins were not sampled with band [" +
                        std::to_string(band.p) + "," + std::to_string(band.q) + ")");
  if (q.series_len != k.series_len) throw ContractError("autocorr_scores: series lengths differ");
  const auto m = spectral::one_sided_bins(q.series_len);
  return spectral::irfft(spectral::zero_pad(spectral::mul_conj(q, k), band.p, m));
}

struct LagSelection {
  std::vector<std::size_t> lags;
  Tensor probs;
};

enum class LagPolicy { factor, direct };

// Number of aggregated lags: floor(k_lags * ln L) under `factor`, k_lags
// under `direct`, clamped to [1, L].
inline std::size_t lag_count(LagPolicy policy, std::size_t k_lags, std::size_t series_len) {
  if (k_lags == 0) throw ConfigError("lag_count: k_lags must be at least 1");
  std::size_t count = k_lags;
  if (policy == LagPolicy::factor)
    count = static_cast<std::size_t>(std::floor(static_cast<double>(k_lags) * std::log(static_cast<double>(series_len))));
  return std::min(series_len, std::max<std::size_t>(1, count));
}

// Softmax over the scores of fixed lags.
inline LagSelection weigh_lags(const Tensor& scores, std::vector<std::size_t> lags) {
  auto probs = softmax(gather(scores, lags), 0);
  return {std::move(lags), probs};
}

// The `count` largest scores (ties to the smaller lag), softmax-normalised.
inline LagSelection select_lags(const Tensor& scores, std::size_t count) {
  const auto len = scores.size();
  if (count < 1 || count > len)
    throw ConfigError("select_lags: count " + std::to_string(count) + " outside [1, " + std::to_string(len) + "]");
  std::vector<std::size_t> order(len);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(count);
  return weigh_lags(scores, std::move(order));
}

// sum_i probs_i * Roll(V, tau_i), Roll(V, tau)[t] = V[(t + tau) mod L].
inline Tensor time_delay_aggregate(const Tensor& v, const LagSelection& sel) {
  if (v.rank() != 2) throw DimensionError("time_delay_aggregate: V must be a matrix, got " + shape_str(v.shape()));
  if (sel.lags.size() != sel.probs.size()) throw ContractError("time_delay_aggregate: lags and probs differ in length");
  const auto len = v.dim(0), n = v.dim(1);
  for (auto tau : sel.lags)
    if (tau >= len) throw ContractError("time_delay_aggregate: lag " + std::to_string(tau) + " outside [0, L)");
  std::vector<double> out(len * n, 0.0);
  for (std::size_t i = 0; i < sel.lags.size(); ++i) {
    const double w = sel.probs[i];
    for (std::size_t t = 0; t < len; ++t) {
      const double* src = v.data().data() + ((t + sel.lags[i]) % len) * n;
      for (std::size_t c = 0; c < n; ++c) out[t * n + c] += w * src[c];
    }
  }
  return dualformer::detail::make_result(
      {len, n}, std::move(out), "time_delay_aggregate", {v, sel.probs},
      [len, n, lags = sel.lags](dualformer::detail::Node& self) {
        const auto& vv = self.parents[0]->data;
        const auto& pv = self.parents[1]->data;
        auto* gv = dualformer::detail::parent_grad(self, 0);
        auto* gp = dualformer::detail::parent_grad(self, 1);
        for (std::size_t i = 0; i < lags.size(); ++i)
          for (std::size_t t = 0; t < len; ++t) {
            const auto row = ((t + lags[i]) % len) * n;
            const double* g = self.grad.data() + t * n;
            if (gv)
              for (std::size_t c = 0; c < n; ++c) (*gv)[row + c] += pv[i] * g[c];
            if (gp) {
              double acc = 0.0;
              for (std::size_t c = 0; c < n; ++c) acc += g[c] * vv[row + c];
              (*gp)[i] += acc;
            }
          }
      });
}

// Records the lag sets chosen by each head so a later pass can replay them;
// finite-difference checks hold the discrete choice fixed this way.
struct LagTape {
  bool replay = false;
  std::vector<std::vector<std::size_t>> entries;
  std::size_t cursor = 0;

  void rewind(bool replay_next) {
    replay = replay_next;
    cursor = 0;
    if (!replay) entries.clear();
  }
};

// Autocorrelation branch. Per head: scores from the sampled Q/K spectra,
// averaged over the head's d_k columns; the sampled V is padded and returned
// to the time domain, then aggregated over the selected lags.
inline Tensor freq_branch(const Tensor& x, const Band& band, const BranchProjections& proj, std::size_t lags,
                          LagTape* tape = nullptr) {
  detail::check_input(x, proj, "freq_branch");
  const auto len = x.dim(0);
  auto qs = spectral::sample(spectral::rfft(matmul(x, proj.w_q)), band);
  auto ks = spectral::sample(spectral::rfft(matmul(x, proj.w_k)), band);
  auto vs = spectral::rfft(matmul(x, proj.w_v));
  auto v_time = spectral::irfft(spectral::zero_pad(spectral::sample(vs, band), band.p, vs.bins()));
  auto scores = autocorr_scores(qs, ks, band);

  const auto dk = proj.head_width();
  const auto count = std::min(lags, len);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < proj.heads; ++h) {
    auto head_scores = mean_cols(slice_cols(scores, h * dk, (h + 1) * dk));
    LagSelection sel;
    if (tape && tape->replay) {
      if (tape->cursor >= tape->entries.size()) throw ContractError("freq_branch: lag tape exhausted");
      sel = weigh_lags(head_scores, tape->entries[tape->cursor++]);
    } else {
      sel = select_lags(head_scores, count);
      if (tape) tape->entries.push_back(sel.lags);
    }
    heads.push_back(time_delay_aggregate(slice_cols(v_time, h * dk, (h + 1) * dk), sel));
  }
  return matmul(concat_cols(heads), proj.w_out);
}

}  // namespace dualformer::attention
