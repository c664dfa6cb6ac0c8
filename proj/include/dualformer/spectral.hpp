#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualformer/fft.hpp"
#include "dualformer/tensor.hpp"

namespace dualformer::spectral {

using cd = std::complex<double>;

// Number of non-redundant bins of a real series of length L.
inline std::size_t one_sided_bins(std::size_t series_len) { return series_len / 2 + 1; }

// Weight of bin j in one-sided energy sums: DC and (even L) Nyquist appear
// once in the two-sided spectrum, every other bin twice.
inline double bin_weight(std::size_t j, std::size_t series_len) {
  if (j == 0) return 1.0;
  if (series_len % 2 == 0 && j == series_len / 2) return 1.0;
  return 2.0;
}

// One-sided spectrum of a real L x C series, bin-major: bins[j * C + c].
// Forward sums carry no 1/L factor; the inverse does.
struct Spectrum {
  std::size_t series_len = 0;
  std::size_t channels = 1;
  std::vector<cd> bins;

  std::size_t bin_count() const { return channels ? bins.size() / channels : 0; }
  cd& at(std::size_t j, std::size_t c = 0) { return bins[j * channels + c]; }
  const cd& at(std::size_t j, std::size_t c = 0) const { return bins[j * channels + c]; }
};

// Contiguous band [start, start + F) cut from a spectrum of `full_bins` bins.
struct SampledSpectrum {
  std::size_t offset = 0;
  std::size_t full_bins = 0;
  Spectrum slice;
};

// rfft of a row-major L x C series.
inline Spectrum rfft(std::span<const double> x, std::size_t channels = 1) {
  if (channels == 0 || x.size() % channels != 0)
    throw ContractError("rfft: " + std::to_string(x.size()) + " values do not split into " +
                        std::to_string(channels) + " channels");
  const std::size_t len = x.size() / channels;
  if (len < 2) throw ContractError("rfft: series length must be at least 2");
  const std::size_t m = one_sided_bins(len);
  const auto& plan = fft::plan_for(len);
  Spectrum s{len, channels, std::vector<cd>(m * channels)};
  std::vector<cd> in(len), out(len);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < len; ++t) in[t] = {x[t * channels + c], 0.0};
    plan.forward(in, out);
    for (std::size_t j = 0; j < m; ++j) s.at(j, c) = out[j];
    s.at(0, c).imag(0.0);
    if (len % 2 == 0) s.at(len / 2, c).imag(0.0);
  }
  return s;
}

// Inverse of rfft assuming a Hermitian extension. The DC bin (and the
// Nyquist bin for even L) must be real.
inline std::vector<double> irfft(const Spectrum& s, std::size_t series_len) {
  if (s.series_len != series_len)
    throw ContractError("irfft: spectrum of a length-" + std::to_string(s.series_len) +
                        " series inverted to length " + std::to_string(series_len));
  const std::size_t m = one_sided_bins(series_len);
  if (s.bin_count() != m) throw ContractError("irfft: bin count does not match series length");
  double scale = 1.0;
  for (const auto& b : s.bins) scale = std::max(scale, std::abs(b));
  for (std::size_t c = 0; c < s.channels; ++c) {
    if (std::abs(s.at(0, c).imag()) > 1e-12 * scale)
      throw ContractError("irfft: DC bin is not real");
    if (series_len % 2 == 0 && std::abs(s.at(series_len / 2, c).imag()) > 1e-12 * scale)
      throw ContractError("irfft: Nyquist bin is not real");
  }
  const auto& plan = fft::plan_for(series_len);
  std::vector<double> x(series_len * s.channels);
  std::vector<cd> full(series_len), out(series_len);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t j = 0; j < m; ++j) full[j] = s.at(j, c);
    full[0].imag(0.0);
    if (series_len % 2 == 0) full[series_len / 2].imag(0.0);
    for (std::size_t j = 1; j < m; ++j)
      if (series_len - j >= m) full[series_len - j] = std::conj(full[j]);
    plan.inverse(full, out);
    for (std::size_t t = 0; t < series_len; ++t)
      x[t * s.channels + c] = out[t].real() / static_cast<double>(series_len);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Hierarchical frequency sampling
// ---------------------------------------------------------------------------

struct Band {
  std::size_t layer = 1;  // 1-based
  std::size_t p = 0;      // first bin, inclusive
  std::size_t q = 0;      // last bin, exclusive
  std::size_t width() const { return q - p; }
  bool operator==(const Band&) const = default;
};

enum class Regime { disjoint, overlapping };

struct SamplingPlan {
  std::size_t layers = 1;
  double alpha = 1.0;
  std::size_t bins = 0;
  Regime regime = Regime::disjoint;
  std::vector<Band> bands;

  const Band& band(std::size_t layer) const { return bands.at(layer - 1); }
};

// Assigns each of N layers a band of the M = floor(L/2)+1 bins, sliding from
// the highest frequencies at layer 1 to p = 0 at layer N.
//
// alpha <= 1/N tiles [0, M) with consecutive floor boundaries. Otherwise each
// band starts at floor(M(1-alpha)(N-n)/(N-1)) and ends at the floor of the
// real-valued end point plus alpha*M, clamped to M; flooring both ends of the
// real band keeps adjacent overlaps within one bin of (alpha*N-1)M/(N-1).
inline SamplingPlan make_plan(std::size_t layers, double alpha, std::size_t series_len) {
  if (layers == 0) throw ConfigError("make_plan: layer count must be at least 1");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("make_plan: alpha must lie in (0, 1], got " + std::to_string(alpha));
  if (series_len < 2) throw ConfigError("make_plan: series length must be at least 2");
  const std::size_t m = one_sided_bins(series_len);
  if (m < layers)
    throw ConfigError("make_plan: " + std::to_string(m) + " bins cannot host " +
                      std::to_string(layers) + " non-empty bands");

  SamplingPlan plan{layers, alpha, m, Regime::disjoint, {}};
  const double n_layers = static_cast<double>(layers);
  // Guards floors against products like 2.9999999999999996.
  constexpr double kSlack = 1e-9;
  if (alpha <= 1.0 / n_layers + 1e-15) {
    for (std::size_t n = 1; n <= layers; ++n)
      plan.bands.push_back({n, m * (layers - n) / layers, m * (layers - n + 1) / layers});
    return plan;
  }
  plan.regime = Regime::overlapping;
  const double md = static_cast<double>(m);
  for (std::size_t n = 1; n <= layers; ++n) {
    const double start = md * (1.0 - alpha) * static_cast<double>(layers - n) / (n_layers - 1.0);
    const auto p = static_cast<std::size_t>(std::floor(start + kSlack));
    auto q = static_cast<std::size_t>(std::floor(start + alpha * md + kSlack));
    q = std::min(std::max(q, p + 1), m);
    plan.bands.push_back({n, p, q});
  }
  return plan;
}

inline SampledSpectrum sample(const Spectrum& s, const Band& b) {
  const auto m = s.bin_count();
  if (!(b.p < b.q && b.q <= m))
    throw ContractError("sample: band [" + std::to_string(b.p) + "," + std::to_string(b.q) +
                        ") outside " + std::to_string(m) + " bins");
  SampledSpectrum out{b.p, m, {s.series_len, s.channels, {}}};
  out.slice.bins.assign(s.bins.begin() + static_cast<std::ptrdiff_t>(b.p * s.channels),
                        s.bins.begin() + static_cast<std::ptrdiff_t>(b.q * s.channels));
  return out;
}

// Places the slice at [p, p+F) of an otherwise zero spectrum with M bins.
inline Spectrum zero_pad(const Spectrum& slice, std::size_t p, std::size_t full_bins) {
  const auto f = slice.bin_count();
  if (p + f > full_bins)
    throw ContractError("zero_pad: " + std::to_string(f) + " bins at offset " + std::to_string(p) +
                        " overflow " + std::to_string(full_bins));
  Spectrum out{slice.series_len, slice.channels, std::vector<cd>(full_bins * slice.channels)};
  std::copy(slice.bins.begin(), slice.bins.end(),
            out.bins.begin() + static_cast<std::ptrdiff_t>(p * slice.channels));
  return out;
}

inline Spectrum zero_pad(const SampledSpectrum& s) { return zero_pad(s.slice, s.offset, s.full_bins); }

// ---------------------------------------------------------------------------
// Differentiable spectra
// ---------------------------------------------------------------------------

// Spectrum of the columns of an L x n matrix as a packed [2, bins, n] tensor
// (real plane then imaginary plane), so it can live in the graph.
struct ComplexTensor {
  Tensor packed;
  std::size_t series_len = 0;

  std::size_t bins() const { return packed.dim(1); }
  std::size_t channels() const { return packed.dim(2); }
  double re(std::size_t j, std::size_t c) const { return packed[j * channels() + c]; }
  double im(std::size_t j, std::size_t c) const { return packed[(bins() + j) * channels() + c]; }
};

namespace detail {

// Unnormalised inverse DFT of a one-sided array (bins above M treated as
// zero), real part only: out[t] = sum_j re_j cos(theta) - im_j sin(theta).
inline void one_sided_synthesis(const double* re, const double* im, std::size_t stride,
                                std::size_t m, std::size_t len, double* out, std::size_t out_stride) {
  std::vector<cd> buf(len, cd{}), res(len);
  for (std::size_t j = 0; j < m; ++j) buf[j] = {re[j * stride], im[j * stride]};
  fft::plan_for(len).inverse(buf, res);
  for (std::size_t t = 0; t < len; ++t) out[t * out_stride] += res[t].real();
}

}  // namespace detail

// Column-wise rfft of x[L x n].
inline ComplexTensor rfft(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("rfft: expected [L x n], got " + shape_str(x.shape()));
  const std::size_t len = x.dim(0), n = x.dim(1);
  if (len < 2) throw ContractError("rfft: series length must be at least 2");
  const std::size_t m = one_sided_bins(len);
  const auto& plan = fft::plan_for(len);
  std::vector<double> out(2 * m * n);
  std::vector<cd> in(len), res(len);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t t = 0; t < len; ++t) in[t] = {x[t * n + c], 0.0};
    plan.forward(in, res);
    for (std::size_t j = 0; j < m; ++j) {
      out[j * n + c] = res[j].real();
      out[(m + j) * n + c] = res[j].imag();
    }
    out[m * n + c] = 0.0;
    if (len % 2 == 0) out[(m + len / 2) * n + c] = 0.0;
  }
  auto packed = dualformer::detail::make_result(
      {2, m, n}, std::move(out), "rfft", {x}, [len, m, n](dualformer::detail::Node& self) {
        auto* g = dualformer::detail::parent_grad(self, 0);
        // d re_j / d x_t = cos, d im_j / d x_t = -sin: the adjoint is the real
        // part of the unnormalised inverse of (g_re + i g_im).
        for (std::size_t c = 0; c < n; ++c)
          detail::one_sided_synthesis(self.grad.data() + c, self.grad.data() + m * n + c, n, m, len,
                                      g->data() + c, n);
      });
  return {packed, len};
}

// Column-wise inverse with 1/L factor; imaginary parts of DC and Nyquist do
// not contribute.
inline Tensor irfft(const ComplexTensor& s) {
  const std::size_t len = s.series_len, m = s.bins(), n = s.channels();
  if (m != one_sided_bins(len))
    throw ContractError("irfft: " + std::to_string(m) + " bins do not match series length " +
                        std::to_string(len));
  std::vector<double> out(len * n, 0.0);
  std::vector<double> weighted_re(m), weighted_im(m);
  const auto& data = s.packed.values();
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t j = 0; j < m; ++j) {
      const bool self_conjugate = bin_weight(j, len) == 1.0;
      const double w = bin_weight(j, len) / static_cast<double>(len);
      weighted_re[j] = w * data[j * n + c];
      weighted_im[j] = self_conjugate ? 0.0 : w * data[(m + j) * n + c];
    }
    detail::one_sided_synthesis(weighted_re.data(), weighted_im.data(), 1, m, len, out.data() + c, n);
  }
  return dualformer::detail::make_result(
      {len, n}, std::move(out), "irfft", {s.packed}, [len, m, n](dualformer::detail::Node& self) {
        auto* g = dualformer::detail::parent_grad(self, 0);
        const auto& plan = fft::plan_for(len);
        std::vector<cd> in(len), res(len);
        for (std::size_t c = 0; c < n; ++c) {
          for (std::size_t t = 0; t < len; ++t) in[t] = {self.grad[t * n + c], 0.0};
          plan.forward(in, res);
          for (std::size_t j = 0; j < m; ++j) {
            const double w = bin_weight(j, len) / static_cast<double>(len);
            (*g)[j * n + c] += w * res[j].real();
            if (bin_weight(j, len) != 1.0) (*g)[(m + j) * n + c] += w * res[j].imag();
          }
        }
      });
}

// Rows [p, q) of both planes.
inline ComplexTensor sample(const ComplexTensor& s, const Band& b) {
  const std::size_t m = s.bins(), n = s.channels();
  if (!(b.p < b.q && b.q <= m))
    throw ContractError("sample: band [" + std::to_string(b.p) + "," + std::to_string(b.q) +
                        ") outside " + std::to_string(m) + " bins");
  const std::size_t f = b.width(), p = b.p;
  std::vector<double> out(2 * f * n);
  const auto& data = s.packed.values();
  for (std::size_t plane = 0; plane < 2; ++plane)
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>((plane * m + p) * n), f * n,
                out.begin() + static_cast<std::ptrdiff_t>(plane * f * n));
  auto packed = dualformer::detail::make_result(
      {2, f, n}, std::move(out), "spectral_sample", {s.packed},
      [m, n, f, p](dualformer::detail::Node& self) {
        auto* g = dualformer::detail::parent_grad(self, 0);
        for (std::size_t plane = 0; plane < 2; ++plane)
          for (std::size_t i = 0; i < f * n; ++i) (*g)[(plane * m + p) * n + i] += self.grad[plane * f * n + i];
      });
  return {packed, s.series_len};
}

inline ComplexTensor zero_pad(const ComplexTensor& slice, std::size_t p, std::size_t full_bins) {
  const std::size_t f = slice.bins(), n = slice.channels();
  if (p + f > full_bins)
    throw ContractError("zero_pad: " + std::to_string(f) + " bins at offset " + std::to_string(p) +
                        " overflow " + std::to_string(full_bins));
  std::vector<double> out(2 * full_bins * n, 0.0);
  const auto& data = slice.packed.values();
  for (std::size_t plane = 0; plane < 2; ++plane)
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(plane * f * n), f * n,
                out.begin() + static_cast<std::ptrdiff_t>((plane * full_bins + p) * n));
  auto packed = dualformer::detail::make_result(
      {2, full_bins, n}, std::move(out), "spectral_zero_pad", {slice.packed},
      [full_bins, n, f, p](dualformer::detail::Node& self) {
        auto* g = dualformer::detail::parent_grad(self, 0);
        for (std::size_t plane = 0; plane < 2; ++plane)
          for (std::size_t i = 0; i < f * n; ++i) (*g)[plane * f * n + i] += self.grad[(plane * full_bins + p) * n + i];
      });
  return {packed, slice.series_len};
}

// Elementwise a * conj(b).
inline ComplexTensor mul_conj(const ComplexTensor& a, const ComplexTensor& b) {
  if (a.packed.shape() != b.packed.shape())
    throw ContractError("mul_conj: spectra " + shape_str(a.packed.shape()) + " and " +
                        shape_str(b.packed.shape()) + " differ (sampled with different bands?)");
  const std::size_t half = a.packed.size() / 2;
  const auto& av = a.packed.values();
  const auto& bv = b.packed.values();
  std::vector<double> out(2 * half);
  for (std::size_t i = 0; i < half; ++i) {
    const double ar = av[i], ai = av[half + i], br = bv[i], bi = bv[half + i];
    out[i] = ar * br + ai * bi;
    out[half + i] = ai * br - ar * bi;
  }
  auto packed = dualformer::detail::make_result(
      a.packed.shape(), std::move(out), "mul_conj", {a.packed, b.packed},
      [half](dualformer::detail::Node& self) {
        const auto& av = self.parents[0]->data;
        const auto& bv = self.parents[1]->data;
        auto* ga = dualformer::detail::parent_grad(self, 0);
        auto* gb = dualformer::detail::parent_grad(self, 1);
        for (std::size_t i = 0; i < half; ++i) {
          const double gr = self.grad[i], gi = self.grad[half + i];
          const double ar = av[i], ai = av[half + i], br = bv[i], bi = bv[half + i];
          if (ga) {
            (*ga)[i] += gr * br - gi * bi;
            (*ga)[half + i] += gr * bi + gi * br;
          }
          if (gb) {
            (*gb)[i] += gr * ar + gi * ai;
            (*gb)[half + i] += gr * ai - gi * ar;
          }
        }
      });
  return {packed, a.series_len};
}

// Band-limits every column of x[L x n] to [p, q): rfft, sample, pad, irfft.
inline Tensor band_pass(const Tensor& x, const Band& b) {
  auto s = rfft(x);
  return irfft(zero_pad(sample(s, b), b.p, s.bins()));
}

// ---------------------------------------------------------------------------
// Periodicity estimation
// ---------------------------------------------------------------------------

// Basis bin of one channel: the largest magnitude among bins >= 1 after the
// DC bin is removed and the rest normalised to unit sum. Magnitudes within a
// relative 1e-9 of the maximum count as ties and resolve to the lowest bin.
// Empty when the non-DC spectrum is flat zero.
inline std::optional<std::size_t> basis_bin(const Spectrum& s, std::size_t channel = 0) {
  const auto m = s.bin_count();
  if (m < 2) throw ContractError("peak_detect: need at least 2 bins");
  double total = 0.0, reference = std::abs(s.at(0, channel));
  std::vector<double> mag(m, 0.0);
  for (std::size_t j = 1; j < m; ++j) {
    mag[j] = std::abs(s.at(j, channel));
    total += mag[j];
  }
  reference = std::max({1.0, reference, total});
  if (total <= 1e-12 * reference) return std::nullopt;
  for (auto& v : mag) v /= total;
  const double peak = *std::max_element(mag.begin() + 1, mag.end());
  for (std::size_t j = 1; j < m; ++j)
    if (mag[j] >= peak * (1.0 - 1e-9)) return j;
  return std::nullopt;
}

// Basis bin for every channel; throws when any channel is flat.
inline std::vector<std::size_t> peak_detect(const Spectrum& s) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < s.channels; ++c) {
    auto k = basis_bin(s, c);
    if (!k) throw NoDominantFrequency("peak_detect: channel " + std::to_string(c) + " has a flat spectrum");
    out.push_back(*k);
  }
  return out;
}

struct PeriodicityWeight {
  double w_f = 0.0;
  double w_t = 1.0;
  std::size_t basis_freq = 0;
  std::size_t n_harmonics = 0;
};

// Weighted one-sided energy of bins {k, 2k, ..., nk} below M over the total
// energy of all M bins. Scales the frequency branch by w_f, the time branch
// by w_t = 1 - w_f.
inline PeriodicityWeight harmonic_energy_ratio(const Spectrum& s, std::size_t n_harmonics,
                                               std::size_t channel = 0) {
  if (n_harmonics == 0) throw ConfigError("harmonic_energy_ratio: need at least one harmonic");
  const auto k = basis_bin(s, channel);
  if (!k)
    throw NoDominantFrequency("harmonic_energy_ratio: channel " + std::to_string(channel) +
                              " has a flat spectrum");
  const auto m = s.bin_count();
  double total = 0.0, harmonic = 0.0;
  for (std::size_t j = 0; j < m; ++j) total += bin_weight(j, s.series_len) * std::norm(s.at(j, channel));
  if (!(total > 0.0)) throw DegenerateSignal("harmonic_energy_ratio: zero total energy");
  for (std::size_t h = 1; h <= n_harmonics && h * *k < m; ++h)
    harmonic += bin_weight(h * *k, s.series_len) * std::norm(s.at(h * *k, channel));
  PeriodicityWeight w;
  w.w_f = std::clamp(harmonic / total, 0.0, 1.0);
  w.w_t = 1.0 - w.w_f;
  w.basis_freq = *k;
  w.n_harmonics = n_harmonics;
  return w;
}

inline PeriodicityWeight harmonic_energy_ratio(std::span<const double> x, std::size_t n_harmonics) {
  return harmonic_energy_ratio(rfft(x), n_harmonics);
}

}  // namespace dualformer::spectral
