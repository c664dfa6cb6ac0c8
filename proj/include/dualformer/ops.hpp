#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "dualformer/tensor.hpp"

namespace dualformer {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

inline void accumulate(std::vector<double>* sink, const std::vector<double>& g, double scale = 1.0) {
  if (!sink) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*sink)[i] += scale * g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), "add", {a, b}, [](detail::Node& self) {
    detail::accumulate(detail::parent_grad(self, 0), self.grad);
    detail::accumulate(detail::parent_grad(self, 1), self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node& self) {
    detail::accumulate(detail::parent_grad(self, 0), self.grad);
    detail::accumulate(detail::parent_grad(self, 1), self.grad, -1.0);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i] += self.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (auto& v : out) v *= c;
  return detail::make_result(a.shape(), std::move(out), "scale", {a}, [c](detail::Node& self) {
    detail::accumulate(detail::parent_grad(self, 0), self.grad, c);
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// a[m x n] + b[n], bias broadcast over rows.
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  const auto n = a.cols();
  if (b.size() != n)
    throw DimensionError("add_row: bias " + shape_str(b.shape()) + " vs rows of " + shape_str(a.shape()));
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  return detail::make_result(a.shape(), std::move(out), "add_row", {a, b}, [n](detail::Node& self) {
    detail::accumulate(detail::parent_grad(self, 0), self.grad);
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i % n] += self.grad[i];
  });
}

// a[m x n] * b[n], scaling each column j by b[j].
inline Tensor mul_row(const Tensor& a, const Tensor& b) {
  const auto n = a.cols();
  if (b.size() != n)
    throw DimensionError("mul_row: " + shape_str(b.shape()) + " vs rows of " + shape_str(a.shape()));
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i % n];
  return detail::make_result(a.shape(), std::move(out), "mul_row", {a, b}, [n](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < av.size(); ++i) (*ga)[i] += self.grad[i] * bv[i % n];
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < av.size(); ++i) (*gb)[i % n] += self.grad[i] * av[i];
  });
}

// a[m x n] / b[n], column-wise.
inline Tensor div_row(const Tensor& a, const Tensor& b) {
  const auto n = a.cols();
  if (b.size() != n)
    throw DimensionError("div_row: " + shape_str(b.shape()) + " vs rows of " + shape_str(a.shape()));
  std::vector<double> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b[i % n];
  return detail::make_result(a.shape(), std::move(out), "div_row", {a, b}, [n](detail::Node& self) {
    const auto& bv = self.parents[1]->data;
    const auto& y = self.data;
    if (auto* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < y.size(); ++i) (*ga)[i] += self.grad[i] / bv[i % n];
    if (auto* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < y.size(); ++i) (*gb)[i % n] -= self.grad[i] * y[i] / bv[i % n];
  });
}

// Gaussian error linear unit, exact erf form.
inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  return detail::make_result(x.shape(), std::move(out), "gelu", {x}, [](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    const auto& xv = self.parents[0]->data;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
      (*g)[i] += self.grad[i] * (cdf + xv[i] * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result({1}, {s}, "sum", {x}, [](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    for (auto& v : *g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// Mean over columns: [m x n] -> [m].
inline Tensor mean_cols(const Tensor& x) {
  detail::require_matrix(x, "mean_cols");
  const auto m = x.rows(), n = x.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r] += x[r * n + c];
    out[r] /= static_cast<double>(n);
  }
  return detail::make_result({m}, std::move(out), "mean_cols", {x}, [m, n](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) (*g)[r * n + c] += self.grad[r] / static_cast<double>(n);
  });
}

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  auto d = sub(pred, target);
  return mean(mul(d, d));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      c[i * k + p] += s;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (auto* ga = detail::parent_grad(self, 0))
      detail::gemm_nt(self.grad.data(), bv.data(), ga->data(), m, n, k);
    if (auto* gb = detail::parent_grad(self, 1))
      detail::gemm_tn(av.data(), self.grad.data(), gb->data(), m, k, n);
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_matrix(x, "transpose");
  const auto m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return detail::make_result({n, m}, std::move(out), "transpose", {x}, [m, n](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*g)[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

// Softmax along `axis` of a vector (axis 0) or matrix (axis 0 or 1),
// stabilised by subtracting the slice maximum.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.rank() > 2 || axis >= x.rank())
    throw ContractError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  const std::size_t rows = x.rank() == 1 ? 1 : x.dim(0);
  const std::size_t cols = x.rank() == 1 ? x.dim(0) : x.dim(1);
  const bool along_cols = x.rank() == 1 || axis == 1;
  const std::size_t slices = along_cols ? rows : cols;
  const std::size_t len = along_cols ? cols : rows;
  const std::size_t step = along_cols ? 1 : cols;
  auto index = [=](std::size_t s, std::size_t i) {
    return along_cols ? s * cols + i * step : s + i * step;
  };

  std::vector<double> out(x.size());
  for (std::size_t s = 0; s < slices; ++s) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[index(s, i)]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += out[index(s, i)] = std::exp(x[index(s, i)] - mx);
    for (std::size_t i = 0; i < len; ++i) out[index(s, i)] /= z;
  }
  return detail::make_result(x.shape(), std::move(out), "softmax", {x},
                             [=](detail::Node& self) {
                               auto* g = detail::parent_grad(self, 0);
                               const auto& y = self.data;
                               for (std::size_t s = 0; s < slices; ++s) {
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < len; ++i)
                                   dot += self.grad[index(s, i)] * y[index(s, i)];
                                 for (std::size_t i = 0; i < len; ++i) {
                                   const auto k = index(s, i);
                                   (*g)[k] += y[k] * (self.grad[k] - dot);
                                 }
                               }
                             });
}

// Row-wise standardisation over the last extent D followed by gamma/beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const auto d = x.shape().back();
  if (gamma.size() != d || beta.size() != d)
    throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " vs last extent of " + shape_str(x.shape()));
  const auto rows = x.size() / d;
  std::vector<double> xhat(x.size()), inv_std(rows), out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& gam = self.parents[1]->data;
        auto* gx = detail::parent_grad(self, 0);
        auto* gg = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* go = self.grad.data() + r * d;
          const double* xh = xhat.data() + r * d;
          if (gg)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += go[j] * xh[j];
          if (gb)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += go[j];
          if (gx) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = go[j] * gam[j];
              m1 += gh;
              m2 += gh * xh[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
              (*gx)[r * d + j] += inv_std[r] * (go[j] * gam[j] - m1 - xh[j] * m2);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return detail::make_result(std::move(shape), x.values(), "reshape", {x}, [](detail::Node& self) {
    detail::accumulate(detail::parent_grad(self, 0), self.grad);
  });
}

// Columns [c0, c1) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
  detail::require_matrix(x, "slice_cols");
  const auto m = x.dim(0), n = x.dim(1);
  if (!(c0 < c1 && c1 <= n))
    throw ContractError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                        ") outside " + shape_str(x.shape()));
  const auto w = c1 - c0;
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(x.data().data() + r * n + c0, w, out.data() + r * w);
  return detail::make_result({m, w}, std::move(out), "slice_cols", {x}, [=](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < w; ++j) (*g)[r * n + c0 + j] += self.grad[r * w + j];
  });
}

// Rows [r0, r1) of a matrix.
inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
  detail::require_matrix(x, "slice_rows");
  const auto m = x.dim(0), n = x.dim(1);
  if (!(r0 < r1 && r1 <= m))
    throw ContractError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                        ") outside " + shape_str(x.shape()));
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(r0 * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>(r1 * n));
  return detail::make_result({r1 - r0, n}, std::move(out), "slice_rows", {x}, [=](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[r0 * n + i] += self.grad[i];
  });
}

// Embeds x[F x n] at row offset `offset` of a zero matrix [total x n].
inline Tensor pad_rows(const Tensor& x, std::size_t offset, std::size_t total) {
  detail::require_matrix(x, "pad_rows");
  const auto f = x.dim(0), n = x.dim(1);
  if (offset + f > total)
    throw ContractError("pad_rows: " + std::to_string(f) + " rows at offset " + std::to_string(offset) +
                        " overflow " + std::to_string(total));
  std::vector<double> out(total * n, 0.0);
  std::copy(x.data().begin(), x.data().end(), out.begin() + static_cast<std::ptrdiff_t>(offset * n));
  return detail::make_result({total, n}, std::move(out), "pad_rows", {x}, [=](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < f * n; ++i) (*g)[i] += self.grad[offset * n + i];
  });
}

// Side-by-side concatenation of matrices with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  const auto m = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.dim(0) != m)
      throw DimensionError("concat_cols: row counts differ, " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<double> out(m * n);
  std::size_t c0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(parts[k].data().data() + r * widths[k], widths[k], out.data() + r * n + c0);
    c0 += widths[k];
  }
  return detail::make_result({m, n}, std::move(out), "concat_cols", parts,
                             [m, n, widths](detail::Node& self) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (auto* g = detail::parent_grad(self, k))
                                   for (std::size_t r = 0; r < m; ++r)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       (*g)[r * widths[k] + j] += self.grad[r * n + off + j];
                                 off += widths[k];
                               }
                             });
}

// Selected entries of a flat tensor.
inline Tensor gather(const Tensor& x, const std::vector<std::size_t>& index) {
  if (index.empty()) throw ContractError("gather: empty index");
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.size())
      throw ContractError("gather: index " + std::to_string(index[i]) + " outside " + shape_str(x.shape()));
    out[i] = x[index[i]];
  }
  return detail::make_result({index.size()}, std::move(out), "gather", {x}, [index](detail::Node& self) {
    auto* g = detail::parent_grad(self, 0);
    for (std::size_t i = 0; i < index.size(); ++i) (*g)[index[i]] += self.grad[i];
  });
}

}  // namespace dualformer
