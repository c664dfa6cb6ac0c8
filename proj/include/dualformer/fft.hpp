#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <unordered_map>
#include <vector>

#include "dualformer/error.hpp"

namespace dualformer::fft {

using cd = std::complex<double>;

// Complex DFT of arbitrary length.
//
// Composite lengths run a recursive mixed-radix decimation in time over the
// factors 4, 2, 3, 5, ...; a length with a prime factor above kMaxRadix is
// routed through Bluestein's chirp-z convolution on a power-of-two grid.
// Both directions are unnormalised: forward uses e^{-2 pi i jt/n}, inverse
// e^{+2 pi i jt/n}.
class Plan {
 public:
  static constexpr std::size_t kMaxRadix = 31;

  explicit Plan(std::size_t n) : n_(n) {
    if (n == 0) throw ContractError("fft::Plan: length must be positive");
    twiddles_.resize(n);
    for (std::size_t k = 0; k < n; ++k) twiddles_[k] = unit_root(k, n);

    std::size_t rest = n;
    while (rest % 4 == 0) factors_.push_back(4), rest /= 4;
    while (rest % 2 == 0) factors_.push_back(2), rest /= 2;
    for (std::size_t f = 3; f * f <= rest; f += 2)
      while (rest % f == 0) factors_.push_back(f), rest /= f;
    if (rest > 1) factors_.push_back(rest);
    for (auto f : factors_)
      if (f > kMaxRadix) {
        init_bluestein();
        break;
      }
  }

  std::size_t size() const { return n_; }

  void forward(std::span<const cd> in, std::span<cd> out) const { run(in, out, false); }

  void inverse(std::span<const cd> in, std::span<cd> out) const { run(in, out, true); }

 private:
  // e^{-2 pi i k / n}, reduced so that quarter-turn values are exact.
  static cd unit_root(std::size_t k, std::size_t n) {
    k %= n;
    if (k == 0) return {1.0, 0.0};
    if (4 * k == n) return {0.0, -1.0};
    if (2 * k == n) return {-1.0, 0.0};
    if (4 * k == 3 * n) return {0.0, 1.0};
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    return {std::cos(angle), std::sin(angle)};
  }

  void run(std::span<const cd> in, std::span<cd> out, bool inverse) const {
    if (in.size() != n_ || out.size() != n_)
      throw ContractError("fft::Plan: buffer length does not match plan length");
    if (bluestein_) {
      bluestein(in, out, inverse);
      return;
    }
    if (!inverse) {
      work(out.data(), in.data(), 1, 0, n_);
      return;
    }
    std::vector<cd> conj_in(in.begin(), in.end());
    for (auto& v : conj_in) v = std::conj(v);
    work(out.data(), conj_in.data(), 1, 0, n_);
    for (auto& v : out) v = std::conj(v);
  }

  // Transform of the n elements in[0], in[stride], ... into out[0..n).
  void work(cd* out, const cd* in, std::size_t stride, std::size_t level, std::size_t n) const {
    if (n == 1) {
      out[0] = in[0];
      return;
    }
    const std::size_t p = factors_[level];
    const std::size_t m = n / p;
    for (std::size_t q = 0; q < p; ++q) work(out + q * m, in + q * stride, stride * p, level + 1, m);

    // Twiddle index step for W_n is n_/n == stride.
    if (p == 2) {
      for (std::size_t k = 0; k < m; ++k) {
        const cd t = out[k + m] * twiddles_[k * stride];
        out[k + m] = out[k] - t;
        out[k] += t;
      }
      return;
    }
    if (p == 4) {
      for (std::size_t k = 0; k < m; ++k) {
        const cd a0 = out[k];
        const cd a1 = out[k + m] * twiddles_[k * stride];
        const cd a2 = out[k + 2 * m] * twiddles_[2 * k * stride];
        const cd a3 = out[k + 3 * m] * twiddles_[3 * k * stride];
        const cd s02 = a0 + a2, d02 = a0 - a2;
        const cd s13 = a1 + a3, d13 = a1 - a3;
        const cd rot{d13.imag(), -d13.real()};  // -i * d13
        out[k] = s02 + s13;
        out[k + m] = d02 + rot;
        out[k + 2 * m] = s02 - s13;
        out[k + 3 * m] = d02 - rot;
      }
      return;
    }
    if (p == 3) {
      const double s3 = std::sqrt(3.0) / 2.0;
      for (std::size_t k = 0; k < m; ++k) {
        const cd a0 = out[k];
        const cd a1 = out[k + m] * twiddles_[k * stride];
        const cd a2 = out[k + 2 * m] * twiddles_[2 * k * stride];
        const cd sum = a1 + a2, diff = a1 - a2;
        const cd mid = a0 - 0.5 * sum;
        const cd rot{s3 * diff.imag(), -s3 * diff.real()};  // -i sqrt(3)/2 * diff
        out[k] = a0 + sum;
        out[k + m] = mid + rot;
        out[k + 2 * m] = mid - rot;
      }
      return;
    }
    cd scratch[kMaxRadix];
    const std::size_t root_step = n_ / p;
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t q = 0; q < p; ++q) scratch[q] = out[k + q * m] * twiddles_[(q * k * stride) % n_];
      for (std::size_t s = 0; s < p; ++s) {
        cd acc = scratch[0];
        for (std::size_t q = 1; q < p; ++q) acc += scratch[q] * twiddles_[(q * s * root_step) % n_];
        out[k + s * m] = acc;
      }
    }
  }

  void init_bluestein() {
    bluestein_ = true;
    std::size_t m = 1;
    while (m < 2 * n_ - 1) m <<= 1;
    grid_ = std::make_unique<Plan>(m);
    chirp_.resize(n_);
    const std::size_t two_n = 2 * n_;
    for (std::size_t k = 0; k < n_; ++k) {
      // e^{-i pi k^2 / n}; k^2 reduced mod 2n keeps the angle small.
      const auto k2 = static_cast<std::size_t>((static_cast<unsigned long long>(k) * k) % two_n);
      const double angle = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n_);
      chirp_[k] = {std::cos(angle), std::sin(angle)};
    }
    std::vector<cd> kernel(m, cd{});
    kernel[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n_; ++k) kernel[k] = kernel[m - k] = std::conj(chirp_[k]);
    kernel_fft_.resize(m);
    grid_->forward(kernel, kernel_fft_);
  }

  void bluestein(std::span<const cd> in, std::span<cd> out, bool inverse) const {
    const std::size_t m = grid_->size();
    std::vector<cd> a(m, cd{}), fa(m);
    for (std::size_t k = 0; k < n_; ++k) a[k] = (inverse ? std::conj(in[k]) : in[k]) * chirp_[k];
    grid_->forward(a, fa);
    for (std::size_t k = 0; k < m; ++k) fa[k] *= kernel_fft_[k];
    grid_->inverse(fa, a);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n_; ++k) {
      const cd v = a[k] * inv_m * chirp_[k];
      out[k] = inverse ? std::conj(v) : v;
    }
  }

  std::size_t n_;
  std::vector<cd> twiddles_;
  std::vector<std::size_t> factors_;

  bool bluestein_ = false;
  std::unique_ptr<Plan> grid_;
  std::vector<cd> chirp_;
  std::vector<cd> kernel_fft_;
};

// Per-thread cache of plans keyed by length.
inline const Plan& plan_for(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::unique_ptr<Plan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<Plan>(n);
  return *slot;
}

inline std::vector<cd> forward(std::span<const cd> in) {
  std::vector<cd> out(in.size());
  plan_for(in.size()).forward(in, out);
  return out;
}

inline std::vector<cd> inverse(std::span<const cd> in) {
  std::vector<cd> out(in.size());
  plan_for(in.size()).inverse(in, out);
  return out;
}

}  // namespace dualformer::fft
