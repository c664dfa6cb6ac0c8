#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dualformer/tensor.hpp"

namespace dualformer {

// Relative discrepancy used by every gradient check in the project.
inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

// Central differences of `loss` with respect to the entries of a leaf tensor,
// perturbed in place and restored afterwards. `coords` selects which entries
// to probe; empty means all.
inline std::vector<double> central_differences(const std::function<double()>& loss, Tensor& leaf,
                                               double step,
                                               const std::vector<std::size_t>& coords = {}) {
  auto values = leaf.mutable_data();
  std::vector<std::size_t> probe = coords;
  if (probe.empty()) {
    probe.resize(values.size());
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = i;
  }
  std::vector<double> out;
  out.reserve(probe.size());
  for (auto i : probe) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = loss();
    values[i] = saved - step;
    const double down = loss();
    values[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite difference produced a non-finite loss");
    out.push_back((up - down) / (2.0 * step));
  }
  return out;
}

// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12)
// for the scalar function f at x.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                double step = 1e-6) {
  Tensor point = x.detach();
  point.set_requires_grad(true);
  Tensor y = f(point);
  if (y.size() != 1) throw ContractError("finite_diff_check: f must return a scalar");
  if (!std::isfinite(y.item())) throw NumericError("finite_diff_check: f(x) is not finite");
  if (!y.requires_grad()) throw ContractError("finite_diff_check: f does not depend on x");
  backward(y);
  const auto analytic = point.grad();

  Tensor probe = x.detach();
  auto numeric = central_differences([&] { return f(probe).item(); }, probe, step);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, grad_rel_error(analytic[i], numeric[i]));
  return worst;
}

}  // namespace dualformer
