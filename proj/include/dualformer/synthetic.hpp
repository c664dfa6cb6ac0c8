#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dualformer/error.hpp"

namespace dualformer::data {

// f = f_p + f_r over L = repeats * period samples. Coefficient j is the
// amplitude of the sinusoid at j cycles per period; phases are drawn from
// the seed.
struct SyntheticPeriodicSignal {
  std::size_t period = 8;
  std::size_t repeats = 12;
  std::vector<double> harmonic_coeffs{1.0};
  double residual_sigma = 0.1;
  std::uint64_t seed = 0;
  // Requested series length; 0 means period * repeats. Any other value must
  // equal period * repeats.
  std::size_t series_len = 0;

  std::size_t length() const { return series_len ? series_len : period * repeats; }
};

struct SyntheticSeries {
  std::vector<double> series;
  std::vector<double> periodic;
  std::vector<double> residual;
  double periodic_energy = 0.0;
  double residual_energy = 0.0;
  double lambda = 0.0;  // periodic_energy / residual_energy
};

inline constexpr double kMinResidualSigma = 1e-12;

inline SyntheticSeries synth_generate(const SyntheticPeriodicSignal& spec) {
  if (spec.period < 2) throw ContractError("synth_generate: period must be at least 2");
  if (spec.repeats < 1) throw ContractError("synth_generate: repeats must be at least 1");
  if (spec.length() != spec.period * spec.repeats)
    throw ContractError("synth_generate: length " + std::to_string(spec.length()) + " is not " +
                        std::to_string(spec.repeats) + " x period " + std::to_string(spec.period));
  if (2 * spec.harmonic_coeffs.size() > spec.period)
    throw ContractError("synth_generate: " + std::to_string(spec.harmonic_coeffs.size()) +
                        " harmonics exceed the band limit of period " + std::to_string(spec.period));
  const std::size_t len = spec.length();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phases(spec.harmonic_coeffs.size());
  for (auto& p : phases) p = phase_dist(rng);

  SyntheticSeries out;
  // One period, then tiled, so f_p[t] == f_p[t + period] holds bit for bit.
  std::vector<double> cycle(spec.period, 0.0);
  for (std::size_t t = 0; t < spec.period; ++t)
    for (std::size_t j = 0; j < spec.harmonic_coeffs.size(); ++j)
      cycle[t] += spec.harmonic_coeffs[j] *
                  std::sin(2.0 * std::numbers::pi * static_cast<double>((j + 1) * t) /
                               static_cast<double>(spec.period) +
                           phases[j]);
  out.periodic.resize(len);
  for (std::size_t t = 0; t < len; ++t) out.periodic[t] = cycle[t % spec.period];

  const double sigma = std::max(spec.residual_sigma, kMinResidualSigma);
  std::normal_distribution<double> noise(0.0, sigma);
  out.residual.resize(len);
  for (auto& r : out.residual) r = noise(rng);

  out.series.resize(len);
  for (std::size_t t = 0; t < len; ++t) {
    out.series[t] = out.periodic[t] + out.residual[t];
    out.periodic_energy += out.periodic[t] * out.periodic[t];
    out.residual_energy += out.residual[t] * out.residual[t];
  }
  out.lambda = out.periodic_energy / out.residual_energy;
  return out;
}

}  // namespace dualformer::data
