#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dualformer/spectral.hpp"
#include "dualformer/synthetic.hpp"

namespace dualformer::spectral {

struct LowerBound {
  double value = 0.0;
  bool binding = false;  // false for lambda <= 4, where the bound is vacuous
};

// (lambda - 2 sqrt(lambda)) / (lambda - 2 sqrt(lambda) + 1) for lambda > 4.
inline LowerBound theorem_lower_bound(double lambda) {
  if (!(lambda > 0.0)) throw ContractError("theorem_lower_bound: lambda must be positive");
  if (lambda <= 4.0) return {0.0, false};
  const double a = lambda - 2.0 * std::sqrt(lambda);
  return {a / (a + 1.0), true};
}

struct TheoremReport {
  double lambda = 0.0;
  double measured_ratio = 0.0;
  double bound = 0.0;
  bool binding = false;
  bool holds = true;
};

// Share of the weighted one-sided energy that sits on multiples of `basis`
// (0, k, 2k, ... up to Nyquist).
inline double harmonic_share(const Spectrum& s, std::size_t basis) {
  double total = 0.0, harmonic = 0.0;
  for (std::size_t j = 0; j < s.bin_count(); ++j) {
    const double e = bin_weight(j, s.series_len) * std::norm(s.at(j));
    total += e;
    if (j % basis == 0) harmonic += e;
  }
  if (!(total > 0.0)) throw DegenerateSignal("harmonic_share: zero total energy");
  return harmonic / total;
}

// Builds f = f_p + f_r from the spec, measures the all-harmonic energy ratio at
// the basis bin k = L / period and compares it with the lower bound at the
// realised lambda = E_p / E_r.
inline TheoremReport verify_theorem(const data::SyntheticPeriodicSignal& spec) {
  if (spec.length() % spec.period != 0)
    throw ContractError("verify_theorem: length " + std::to_string(spec.length()) +
                        " is not a multiple of period " + std::to_string(spec.period));
  const auto signal = data::synth_generate(spec);
  if (!(signal.residual_energy > 0.0)) throw ContractError("verify_theorem: residual energy must be positive");
  const auto s = rfft(signal.series);
  TheoremReport r;
  r.lambda = signal.lambda;
  r.measured_ratio = harmonic_share(s, spec.length() / spec.period);
  const auto bound = theorem_lower_bound(r.lambda);
  r.bound = bound.value;
  r.binding = bound.binding;
  r.holds = !bound.binding || r.measured_ratio >= bound.value - 1e-9;
  return r;
}

// Random spec: period in [4, 24], 2..16 repeats, up to period/2 harmonics
// with coefficients in [0.05, 1.05], residual sigma set so that the expected
// lambda is log-uniform on [lambda_lo, lambda_hi].
template <class Rng>
data::SyntheticPeriodicSignal random_theorem_spec(Rng& rng, double lambda_lo, double lambda_hi, std::uint64_t seed) {
  if (!(lambda_lo > 0.0 && lambda_lo <= lambda_hi))
    throw ConfigError("random_theorem_spec: need 0 < lambda_lo <= lambda_hi");
  std::uniform_int_distribution<int> period_dist(4, 24), repeats_dist(2, 16);
  std::uniform_real_distribution<double> unit(0.0, 1.0), log_lambda(std::log(lambda_lo), std::log(lambda_hi));
  data::SyntheticPeriodicSignal spec;
  spec.period = static_cast<std::size_t>(period_dist(rng));
  spec.repeats = static_cast<std::size_t>(repeats_dist(rng));
  const std::size_t nh = 1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(spec.period / 2));
  spec.harmonic_coeffs.assign(std::min(nh, spec.period / 2), 0.0);
  for (auto& c : spec.harmonic_coeffs) c = unit(rng) + 0.05;
  double ep = 0.0;
  for (double c : spec.harmonic_coeffs) ep += c * c / 2.0;
  spec.residual_sigma = std::sqrt(ep / std::exp(log_lambda(rng)));
  spec.seed = seed;
  return spec;
}

struct TheoremSweep {
  std::size_t trials = 0;
  std::size_t binding = 0;
  std::size_t violations = 0;
  std::size_t redraws = 0;
  double min_margin = std::numeric_limits<double>::infinity();  // over binding cases
  std::vector<TheoremReport> reports;
};

// `count` random specs; with require_binding a draw whose realised lambda is
// at most 4 is replaced by a fresh one (counted in redraws).
inline TheoremSweep run_theorem_sweep(std::size_t count, double lambda_lo, double lambda_hi, std::uint64_t seed,
                                      bool require_binding = false) {
  std::mt19937_64 rng(seed);
  TheoremSweep out;
  std::uint64_t draw = 0;
  while (out.trials < count) {
    const auto spec = random_theorem_spec(rng, lambda_lo, lambda_hi, seed * 1000003ull + draw++);
    auto r = verify_theorem(spec);
    if (require_binding && !r.binding) {
      if (++out.redraws > 100 * count + 100)
        throw ConfigError("run_theorem_sweep: lambda range never yields lambda > 4");
      continue;
    }
    ++out.trials;
    if (r.binding) {
      ++out.binding;
      out.min_margin = std::min(out.min_margin, r.measured_ratio - r.bound);
    }
    if (!r.holds) ++out.violations;
    out.reports.push_back(r);
  }
  return out;
}

}  // namespace dualformer::spectral
