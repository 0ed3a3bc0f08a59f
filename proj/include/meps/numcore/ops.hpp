#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "meps/numcore/tensor.hpp"

namespace meps::num {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Eigen::Index;

inline ConstMapMat as_mat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return ConstMapMat(v.data(), static_cast<Index>(rows), static_cast<Index>(cols));
}

inline MapMat as_mat(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MapMat(v.data(), static_cast<Index>(rows), static_cast<Index>(cols));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got shape " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Grad buffer of input i, or nullptr if that input is not differentiable.
inline std::vector<double>* input_grad(Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

inline const std::vector<double>& input_value(const Node& self, std::size_t i) {
  return self.inputs[i]->value;
}

inline void validate_offsets(std::span<const std::size_t> offsets, std::size_t rows,
                             const char* op) {
  if (offsets.empty() || offsets.front() != 0 || offsets.back() != rows ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw ContractError(std::string(op) + ": segment offsets do not partition " +
                        std::to_string(rows) + " rows");
  }
}

}  // namespace detail

/// Matrix product of a [m x k] and b [k x n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  as_mat(out, m, n).noalias() = as_mat(a.node()->value, m, k) * as_mat(b.node()->value, k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto g = as_mat(self.grad, m, n);
    if (auto* ga = input_grad(self, 0)) {
      as_mat(*ga, m, k).noalias() += g * as_mat(input_value(self, 1), k, n).transpose();
    }
    if (auto* gb = input_grad(self, 1)) {
      as_mat(*gb, k, n).noalias() += as_mat(input_value(self, 0), m, k).transpose() * g;
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  using namespace detail;
  require_matrix(a, "transpose");
  const auto r = a.size(0), c = a.size(1);
  std::vector<double> out(r * c);
  as_mat(out, c, r) = as_mat(a.node()->value, r, c).transpose();
  return make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    if (auto* ga = input_grad(self, 0)) as_mat(*ga, r, c) += as_mat(self.grad, c, r).transpose();
  });
}

/// Same values viewed with a new shape of equal element count.
inline Tensor reshape(const Tensor& a, Shape shape) {
  using namespace detail;
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return make_result(std::move(shape), a.node()->value, {a}, [](Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    }
  });
}

/// Axis permutation: result axis i is input axis perm[i].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  using namespace detail;
  const auto& in_shape = a.shape();
  const auto nd = in_shape.size();
  if (perm.size() != nd) throw DimensionError("permute: rank mismatch");
  std::vector<bool> seen(nd, false);
  for (auto p : perm) {
    if (p >= nd || seen[p]) throw DimensionError("permute: not a permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_strides(nd, 1);
  for (std::size_t i = nd; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
  // source[j] = flat input index of output element j
  std::vector<std::size_t> source(a.numel());
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t j = 0; j < source.size(); ++j) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < nd; ++i) off += idx[i] * in_strides[perm[i]];
    source[j] = off;
    for (std::size_t i = nd; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(source.size());
  const auto& v = a.node()->value;
  for (std::size_t j = 0; j < source.size(); ++j) out[j] = v[source[j]];
  return make_result(std::move(out_shape), std::move(out), {a},
                     [source = std::move(source)](Node& self) {
                       if (auto* ga = input_grad(self, 0)) {
                         for (std::size_t j = 0; j < source.size(); ++j)
                           (*ga)[source[j]] += self.grad[j];
                       }
                     });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto &x = a.node()->value, &y = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t in = 0; in < 2; ++in) {
      if (auto* g = input_grad(self, in)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto &x = a.node()->value, &y = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto &x = a.node()->value, &y = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto &x = input_value(self, 0), &y = input_value(self, 1);
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * y[i];
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * x[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  using namespace detail;
  std::vector<double> out(a.node()->value);
  for (auto& x : out) x *= s;
  return make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

inline Tensor relu(const Tensor& a) {
  using namespace detail;
  std::vector<double> out(a.node()->value);
  for (auto& x : out) x = x > 0.0 ? x : 0.0;
  return make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    if (auto* g = input_grad(self, 0)) {
      const auto& x = input_value(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (x[i] > 0.0) (*g)[i] += self.grad[i];
    }
  });
}

/// Adds bias [c] to every row of a [r x c].
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  using namespace detail;
  require_matrix(a, "add_bias");
  const auto r = a.size(0), c = a.size(1);
  if (bias.numel() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.node()->value);
  const auto& b = bias.node()->value;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  return make_result(a.shape(), std::move(out), {a, bias}, [r, c](Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = input_grad(self, 1)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*g)[j] += self.grad[i * c + j];
    }
  });
}

inline Tensor sum(const Tensor& a) {
  using namespace detail;
  double s = 0.0;
  for (double x : a.data()) s += x;
  return make_result({}, {s}, {a}, [](Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (auto& x : *g) x += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

/// Rows of a [r x c] selected by index (repeats allowed); gradient scatters back.
inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index) {
  using namespace detail;
  require_matrix(a, "gather_rows");
  const auto r = a.size(0), c = a.size(1);
  std::vector<double> out(index.size() * c);
  const auto& v = a.node()->value;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= r) {
      throw IndexError("gather_rows: row " + std::to_string(index[i]) + " out of range for " +
                       shape_str(a.shape()));
    }
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(index[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const auto n = index.size();
  return make_result({n, c}, std::move(out), {a}, [index = std::move(index), c](Node& self) {
    if (auto* g = input_grad(self, 0)) {
      for (std::size_t i = 0; i < index.size(); ++i) {
        double* dst = g->data() + index[i] * c;
        const double* src = self.grad.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    }
  });
}

/// [a : b] along columns.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  using namespace detail;
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  const auto r = a.size(0), ca = a.size(1), cb = b.size(1);
  if (b.size(0) != r) {
    throw DimensionError("concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const auto c = ca + cb;
  std::vector<double> out(r * c);
  as_mat(out, r, c).leftCols(static_cast<Index>(ca)) = as_mat(a.node()->value, r, ca);
  as_mat(out, r, c).rightCols(static_cast<Index>(cb)) = as_mat(b.node()->value, r, cb);
  return make_result({r, c}, std::move(out), {a, b}, [r, ca, cb, c](Node& self) {
    const auto g = as_mat(self.grad, r, c);
    if (auto* ga = input_grad(self, 0)) as_mat(*ga, r, ca) += g.leftCols(static_cast<Index>(ca));
    if (auto* gb = input_grad(self, 1)) as_mat(*gb, r, cb) += g.rightCols(static_cast<Index>(cb));
  });
}

/// Columns [start, start + count) of a matrix.
inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  using namespace detail;
  require_matrix(a, "slice_cols");
  const auto r = a.size(0), c = a.size(1);
  if (start + count > c) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds " + shape_str(a.shape()));
  }
  std::vector<double> out(r * count);
  as_mat(out, r, count) =
      as_mat(a.node()->value, r, c).middleCols(static_cast<Index>(start), static_cast<Index>(count));
  return make_result({r, count}, std::move(out), {a}, [r, c, start, count](Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      as_mat(*ga, r, c).middleCols(static_cast<Index>(start), static_cast<Index>(count)) +=
          as_mat(self.grad, r, count);
    }
  });
}

/// Softmax along `axis`, stabilized by subtracting the running maximum.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  using namespace detail;
  const auto& shape = a.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const auto len = shape[axis];
  const auto& x = a.node()->value;
  for (double v : x) {
    if (std::isnan(v)) throw NumericError("softmax: NaN input");
  }
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(x[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) y[base + j * inner] /= z;
    }
  }
  return make_result(shape, std::move(y), {a}, [outer, inner, len](Node& self) {
    auto* g = input_grad(self, 0);
    if (!g) return;
    const auto& y = self.value;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += self.grad[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < len; ++j) {
          const auto p = base + j * inner;
          (*g)[p] += y[p] * (self.grad[p] - dot);
        }
      }
    }
  });
}

/// Mean over rows of -log softmax(logits)[row, label[row]].
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  using namespace detail;
  require_matrix(logits, "cross_entropy");
  const auto b = logits.size(0), c = logits.size(1);
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(b) + " rows");
  }
  for (auto l : labels) {
    if (l >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(c) + ")");
    }
  }
  const auto& x = logits.node()->value;
  std::vector<double> prob(b * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = x.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      prob[i * c + j] = std::exp(row[j] - mx);
      z += prob[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] /= z;
    loss += (mx + std::log(z)) - row[labels[i]];
  }
  loss /= static_cast<double>(b);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_result({}, {loss}, {logits},
                     [b, c, prob = std::move(prob), lab = std::move(lab)](Node& self) {
                       auto* g = input_grad(self, 0);
                       if (!g) return;
                       const double s = self.grad[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += s * prob[i * c + j];
                         (*g)[i * c + lab[i]] -= s;
                       }
                     });
}

/// Columnwise max over each row segment [offsets[g], offsets[g+1]) of a
/// [rows x c] matrix; gradient goes to the first maximal row.
inline Tensor segment_max(const Tensor& a, std::vector<std::size_t> offsets) {
  using namespace detail;
  require_matrix(a, "segment_max");
  const auto r = a.size(0), c = a.size(1);
  validate_offsets(offsets, r, "segment_max");
  const auto groups = offsets.size() - 1;
  const auto& v = a.node()->value;
  std::vector<double> out(groups * c);
  std::vector<std::size_t> arg(groups * c);
  for (std::size_t g = 0; g < groups; ++g) {
    if (offsets[g] == offsets[g + 1]) throw ContractError("segment_max: empty segment");
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = offsets[g];
      for (std::size_t row = offsets[g] + 1; row < offsets[g + 1]; ++row)
        if (v[row * c + j] > v[best * c + j]) best = row;
      arg[g * c + j] = best;
      out[g * c + j] = v[best * c + j];
    }
  }
  return make_result({groups, c}, std::move(out), {a}, [arg = std::move(arg), c](Node& self) {
    if (auto* ga = input_grad(self, 0)) {
      for (std::size_t p = 0; p < arg.size(); ++p) (*ga)[arg[p] * c + p % c] += self.grad[p];
    }
  });
}

/// Per-segment matrix-vector products. Row g of `weights` holds a row-major
/// [out_dim x in_dim] matrix that is applied to every row of `x` in segment g.
inline Tensor segment_matvec(const Tensor& weights, const Tensor& x, std::vector<std::size_t> offsets,
                             std::size_t out_dim, std::size_t in_dim) {
  using namespace detail;
  require_matrix(weights, "segment_matvec");
  require_matrix(x, "segment_matvec");
  const auto groups = weights.size(0);
  if (weights.size(1) != out_dim * in_dim) {
    throw DimensionError("segment_matvec: weight rows have " + std::to_string(weights.size(1)) +
                         " entries, expected " + std::to_string(out_dim) + "x" + std::to_string(in_dim));
  }
  if (x.size(1) != in_dim) {
    throw DimensionError("segment_matvec: input " + shape_str(x.shape()) + " does not have " +
                         std::to_string(in_dim) + " columns");
  }
  if (offsets.size() != groups + 1) throw DimensionError("segment_matvec: segment count mismatch");
  const auto rows = x.size(0);
  validate_offsets(offsets, rows, "segment_matvec");
  std::vector<double> out(rows * out_dim);
  const auto& w = weights.node()->value;
  const auto& xv = x.node()->value;
  for (std::size_t g = 0; g < groups; ++g) {
    const auto r0 = offsets[g], cnt = offsets[g + 1] - offsets[g];
    if (cnt == 0) continue;
    ConstMapMat wg(w.data() + g * out_dim * in_dim, static_cast<Index>(out_dim), static_cast<Index>(in_dim));
    ConstMapMat xg(xv.data() + r0 * in_dim, static_cast<Index>(cnt), static_cast<Index>(in_dim));
    MapMat(out.data() + r0 * out_dim, static_cast<Index>(cnt), static_cast<Index>(out_dim)).noalias() =
        xg * wg.transpose();
  }
  return make_result(
      {rows, out_dim}, std::move(out), {weights, x},
      [offsets = std::move(offsets), out_dim, in_dim](Node& self) {
        auto* gw = input_grad(self, 0);
        auto* gx = input_grad(self, 1);
        const auto& w = input_value(self, 0);
        const auto& xv = input_value(self, 1);
        for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
          const auto r0 = offsets[g], cnt = offsets[g + 1] - offsets[g];
          if (cnt == 0) continue;
          ConstMapMat go(self.grad.data() + r0 * out_dim, static_cast<Index>(cnt), static_cast<Index>(out_dim));
          if (gw) {
            MapMat(gw->data() + g * out_dim * in_dim, static_cast<Index>(out_dim), static_cast<Index>(in_dim))
                .noalias() += go.transpose() *
                              ConstMapMat(xv.data() + r0 * in_dim, static_cast<Index>(cnt), static_cast<Index>(in_dim));
          }
          if (gx) {
            MapMat(gx->data() + r0 * in_dim, static_cast<Index>(cnt), static_cast<Index>(in_dim)).noalias() +=
                go * ConstMapMat(w.data() + g * out_dim * in_dim, static_cast<Index>(out_dim),
                                 static_cast<Index>(in_dim));
          }
        }
      });
}

/// Mixture-of-filters neighbor aggregation.
///
/// For vertex i with edges e in [offsets[i], offsets[i+1]) pointing at
/// neighbors[e]:
///   out[i] = 1/|N(i)| * sum_e sum_m weights[e, m] * filtered[neighbors[e], m*D:(m+1)*D]
/// where `filtered` is [N x (M*D)] (each vertex already transformed by every filter).
inline Tensor mixture_aggregate(const Tensor& weights, const Tensor& filtered,
                                std::vector<std::size_t> offsets, std::vector<std::size_t> neighbors,
                                std::size_t out_dim) {
  using namespace detail;
  require_matrix(weights, "mixture_aggregate");
  require_matrix(filtered, "mixture_aggregate");
  const auto edges = weights.size(0), m = weights.size(1);
  const auto n = filtered.size(0);
  if (filtered.size(1) != m * out_dim) {
    throw DimensionError("mixture_aggregate: filtered features " + shape_str(filtered.shape()) +
                         " do not hold " + std::to_string(m) + " blocks of width " + std::to_string(out_dim));
  }
  if (neighbors.size() != edges) throw DimensionError("mixture_aggregate: edge count mismatch");
  validate_offsets(offsets, edges, "mixture_aggregate");
  const auto groups = offsets.size() - 1;
  for (auto k : neighbors) {
    if (k >= n) throw IndexError("mixture_aggregate: neighbor index out of range");
  }
  const auto& q = weights.node()->value;
  const auto& y = filtered.node()->value;
  std::vector<double> out(groups * out_dim, 0.0);
  for (std::size_t i = 0; i < groups; ++i) {
    const auto cnt = offsets[i + 1] - offsets[i];
    if (cnt == 0) throw ContractError("mixture_aggregate: vertex " + std::to_string(i) + " has no neighbors");
    const double inv = 1.0 / static_cast<double>(cnt);
    double* o = out.data() + i * out_dim;
    for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) {
      const double* yk = y.data() + neighbors[e] * m * out_dim;
      for (std::size_t f = 0; f < m; ++f) {
        const double w = q[e * m + f] * inv;
        const double* yf = yk + f * out_dim;
        for (std::size_t d = 0; d < out_dim; ++d) o[d] += w * yf[d];
      }
    }
  }
  return make_result(
      {groups, out_dim}, std::move(out), {weights, filtered},
      [offsets = std::move(offsets), neighbors = std::move(neighbors), m, out_dim](Node& self) {
        auto* gq = input_grad(self, 0);
        auto* gy = input_grad(self, 1);
        const auto& q = input_value(self, 0);
        const auto& y = input_value(self, 1);
        for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
          const double inv = 1.0 / static_cast<double>(offsets[i + 1] - offsets[i]);
          const double* go = self.grad.data() + i * out_dim;
          for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) {
            const auto k = neighbors[e];
            for (std::size_t f = 0; f < m; ++f) {
              const double* yf = y.data() + (k * m + f) * out_dim;
              if (gq) {
                double dot = 0.0;
                for (std::size_t d = 0; d < out_dim; ++d) dot += go[d] * yf[d];
                (*gq)[e * m + f] += dot * inv;
              }
              if (gy) {
                const double w = q[e * m + f] * inv;
                double* dy = gy->data() + (k * m + f) * out_dim;
                for (std::size_t d = 0; d < out_dim; ++d) dy[d] += w * go[d];
              }
            }
          }
        }
      });
}

/// Index of the largest entry of each row (first on ties). Not differentiable.
inline std::vector<std::size_t> argmax_rows(const Tensor& a) {
  detail::require_matrix(a, "argmax_rows");
  const auto r = a.size(0), c = a.size(1);
  std::vector<std::size_t> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const auto row = a.data().subspan(i * c, c);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace meps::num
