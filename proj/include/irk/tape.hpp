#pragma once

#include <cmath>
#include <functional>

#include "irk/tensor.hpp"

namespace irk {

// Reverse-mode tape, define-by-run. Nodes are appended in execution order,
// so parents always precede children and one reverse sweep computes every
// gradient exactly once. Rebuilt per forward pass; single-threaded.
template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Shape& shape() const;
  const std::vector<T>& val() const;
  int rows() const;
  int cols() const;
};

template <typename T>
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;
    // Reads this node's grad, accumulates into parents' grads. Leaves have none.
    std::function<void(Tape&, int)> backward;
  };

  int size() const { return int(nodes_.size()); }

  Var<T> leaf(Shape shape, std::vector<T> vals) {
    if (int64_t(vals.size()) != irk::numel(shape))
      throw ShapeError("leaf data does not match shape " + shape_str(shape));
    nodes_.push_back(Node{std::move(shape), std::move(vals), {}, {}});
    return Var<T>{this, int(nodes_.size()) - 1};
  }

  Var<T> leaf(const Tensor<T>& t) {
    return leaf(t.shape(), t.values);
  }

  // Generic node; fused ops (losses) are built through this.
  Var<T> emplace(Shape shape, std::vector<T> vals, std::function<void(Tape&, int)> bw) {
    nodes_.push_back(Node{std::move(shape), std::move(vals), {}, std::move(bw)});
    return Var<T>{this, int(nodes_.size()) - 1};
  }

  const Shape& shape(int id) const { return nodes_[size_t(id)].shape; }
  const std::vector<T>& val(int id) const { return nodes_[size_t(id)].val; }
  std::vector<T>& grad(int id) { return nodes_[size_t(id)].grad; }
  const std::vector<T>& grad(int id) const { return nodes_[size_t(id)].grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw ContractError("backward: loss from another tape");
    if (irk::numel(nodes_[size_t(loss.id)].shape) != 1)
      throw ContractError("backward: loss node must be scalar, got shape " +
                          shape_str(nodes_[size_t(loss.id)].shape));
    for (auto& n : nodes_) n.grad.assign(n.val.size(), T(0));
    nodes_[size_t(loss.id)].grad[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[size_t(i)];
      if (n.backward) n.backward(*this, i);
    }
  }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
const Shape& Var<T>::shape() const { return tape->shape(id); }
template <typename T>
const std::vector<T>& Var<T>::val() const { return tape->val(id); }
template <typename T>
int Var<T>::rows() const { return shape().size() == 2 ? shape()[0] : 1; }
template <typename T>
int Var<T>::cols() const { return shape().empty() ? 0 : shape().back(); }

namespace detail {

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

template <typename T>
void check_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  auto& t = *a.tape;
  std::vector<T> out(a.val());
  const auto& bv = b.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  int ia = a.id, ib = b.id;
  return t.emplace(a.shape(), std::move(out), [ia, ib](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    auto& gb = tp.grad(ib);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  auto& t = *a.tape;
  std::vector<T> out(a.val());
  const auto& bv = b.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  int ia = a.id, ib = b.id;
  return t.emplace(a.shape(), std::move(out), [ia, ib](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    auto& gb = tp.grad(ib);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  detail::check_same_shape(a, b, "mul");
  auto& t = *a.tape;
  std::vector<T> out(a.val());
  const auto& bv = b.val();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  int ia = a.id, ib = b.id;
  return t.emplace(a.shape(), std::move(out), [ia, ib](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& av = tp.val(ia);
    const auto& bv2 = tp.val(ib);
    auto& ga = tp.grad(ia);
    auto& gb = tp.grad(ib);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bv2[i];
      gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, double c) {
  auto& t = *a.tape;
  std::vector<T> out(a.val());
  for (auto& v : out) v = T(v * c);
  int ia = a.id;
  return t.emplace(a.shape(), std::move(out), [ia, c](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += T(g[i] * c);
  });
}

// x * s where s is a 1-element node (gates).
template <typename T>
Var<T> scale_by(Var<T> x, Var<T> s) {
  detail::check_same_tape(x, s);
  if (irk::numel(s.shape()) != 1) throw ShapeError("scale_by: scalar operand must have 1 element");
  auto& t = *x.tape;
  T sv = s.val()[0];
  std::vector<T> out(x.val());
  for (auto& v : out) v *= sv;
  int ix = x.id, is = s.id;
  return t.emplace(x.shape(), std::move(out), [ix, is](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& xv = tp.val(ix);
    T sv2 = tp.val(is)[0];
    auto& gx = tp.grad(ix);
    T acc = T(0);
    for (size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * sv2;
      acc += g[i] * xv[i];
    }
    tp.grad(is)[0] += acc;
  });
}

// rows of x plus bias vector b
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
  detail::check_same_tape(x, b);
  int n = x.cols();
  if (b.shape() != Shape{n})
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " vs cols " + std::to_string(n));
  auto& t = *x.tape;
  int m = x.rows();
  std::vector<T> out(x.val());
  const auto& bv = b.val();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out[size_t(r) * n + c] += bv[size_t(c)];
  int ix = x.id, ib = b.id;
  return t.emplace(x.shape(), std::move(out), [ix, ib, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(ix);
    auto& gb = tp.grad(ib);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) {
        gx[size_t(r) * n + c] += g[size_t(r) * n + c];
        gb[size_t(c)] += g[size_t(r) * n + c];
      }
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  auto& t = *x.tape;
  std::vector<T> out(x.val());
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (auto& v : out) v = T(0.5 * double(v) * (1.0 + std::erf(double(v) * inv_sqrt2)));
  int ix = x.id;
  return t.emplace(x.shape(), std::move(out), [ix](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& xv = tp.val(ix);
    auto& gx = tp.grad(ix);
    constexpr double is2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    for (size_t i = 0; i < g.size(); ++i) {
      double v = double(xv[i]);
      double cdf = 0.5 * (1.0 + std::erf(v * is2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      gx[i] += T(double(g[i]) * (cdf + v * pdf));
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  auto& t = *a.tape;
  int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(size_t(m) * n, T(0));
  {
    const T* av = a.val().data();
    const T* bv = b.val().data();
    T* ov = out.data();
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        T aip = av[size_t(i) * k + p];
        const T* brow = bv + size_t(p) * n;
        T* orow = ov + size_t(i) * n;
        for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
  }
  int ia = a.id, ib = b.id;
  return t.emplace(Shape{m, n}, std::move(out), [ia, ib, m, k, n](Tape<T>& tp, int self) {
    const T* g = tp.grad(self).data();
    const T* av = tp.val(ia).data();
    const T* bv = tp.val(ib).data();
    T* ga = tp.grad(ia).data();
    T* gb = tp.grad(ib).data();
    // dA += G B^T
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        const T* grow = g + size_t(i) * n;
        const T* brow = bv + size_t(p) * n;
        T acc = T(0);
        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
        ga[size_t(i) * k + p] += acc;
      }
    // dB += A^T G
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) {
        T aip = av[size_t(i) * k + p];
        const T* grow = g + size_t(i) * n;
        T* brow = gb + size_t(p) * n;
        for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
      }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  if (a.shape().size() != 2) throw ShapeError("transpose: rank-2 required");
  auto& t = *a.tape;
  int m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(size_t(m) * n);
  const auto& av = a.val();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[size_t(j) * m + i] = av[size_t(i) * n + j];
  int ia = a.id;
  return t.emplace(Shape{n, m}, std::move(out), [ia, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[size_t(i) * n + j] += g[size_t(j) * m + i];
  });
}

template <typename T>
Var<T> slice_rows(Var<T> x, int r0, int count) {
  if (x.shape().size() != 2) throw ShapeError("slice_rows: rank-2 required");
  int m = x.shape()[0], n = x.shape()[1];
  if (r0 < 0 || count < 1 || r0 + count > m) throw ShapeError("slice_rows: range out of bounds");
  auto& t = *x.tape;
  std::vector<T> out(x.val().begin() + size_t(r0) * n, x.val().begin() + size_t(r0 + count) * n);
  int ix = x.id;
  return t.emplace(Shape{count, n}, std::move(out), [ix, r0, count, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(ix);
    for (size_t i = 0; i < g.size(); ++i) gx[size_t(r0) * n + i] += g[i];
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, int c0, int count) {
  if (x.shape().size() != 2) throw ShapeError("slice_cols: rank-2 required");
  int m = x.shape()[0], n = x.shape()[1];
  if (c0 < 0 || count < 1 || c0 + count > n) throw ShapeError("slice_cols: range out of bounds");
  auto& t = *x.tape;
  std::vector<T> out(size_t(m) * count);
  const auto& xv = x.val();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < count; ++c) out[size_t(r) * count + c] = xv[size_t(r) * n + c0 + c];
  int ix = x.id;
  return t.emplace(Shape{m, count}, std::move(out), [ix, c0, count, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(ix);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < count; ++c) gx[size_t(r) * n + c0 + c] += g[size_t(r) * count + c];
  });
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
    throw ShapeError("concat_rows: column counts differ");
  auto& t = *a.tape;
  int ma = a.shape()[0], mb = b.shape()[0], n = a.shape()[1];
  std::vector<T> out(a.val());
  out.insert(out.end(), b.val().begin(), b.val().end());
  int ia = a.id, ib = b.id;
  return t.emplace(Shape{ma + mb, n}, std::move(out), [ia, ib, ma, mb, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    auto& gb = tp.grad(ib);
    for (size_t i = 0; i < size_t(ma) * n; ++i) ga[i] += g[i];
    for (size_t i = 0; i < size_t(mb) * n; ++i) gb[i] += g[size_t(ma) * n + i];
  });
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
    throw ShapeError("concat_cols: row counts differ");
  auto& t = *a.tape;
  int m = a.shape()[0], na = a.shape()[1], nb = b.shape()[1];
  std::vector<T> out(size_t(m) * (na + nb));
  const auto& av = a.val();
  const auto& bv = b.val();
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < na; ++c) out[size_t(r) * (na + nb) + c] = av[size_t(r) * na + c];
    for (int c = 0; c < nb; ++c) out[size_t(r) * (na + nb) + na + c] = bv[size_t(r) * nb + c];
  }
  int ia = a.id, ib = b.id;
  return t.emplace(Shape{m, na + nb}, std::move(out), [ia, ib, m, na, nb](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& ga = tp.grad(ia);
    auto& gb = tp.grad(ib);
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < na; ++c) ga[size_t(r) * na + c] += g[size_t(r) * (na + nb) + c];
      for (int c = 0; c < nb; ++c) gb[size_t(r) * nb + c] += g[size_t(r) * (na + nb) + na + c];
    }
  });
}

// Single element of a flat node as a 1-element node (per-head gates).
template <typename T>
Var<T> element(Var<T> x, int i) {
  if (i < 0 || int64_t(i) >= irk::numel(x.shape()))
    throw ShapeError("element: index out of range");
  auto& t = *x.tape;
  int ix = x.id;
  return t.emplace(Shape{1}, {x.val()[size_t(i)]}, [ix, i](Tape<T>& tp, int self) {
    tp.grad(ix)[size_t(i)] += tp.grad(self)[0];
  });
}

// Embedding lookup: out row i = table row indices[i]. Backward scatter-adds.
template <typename T>
Var<T> gather_rows(Var<T> table, const std::vector<int>& indices) {
  if (table.shape().size() != 2) throw ShapeError("gather_rows: rank-2 table required");
  int v = table.shape()[0], n = table.shape()[1];
  for (int ix : indices)
    if (ix < 0 || ix >= v) throw ContractError("gather_rows: index out of range");
  auto& t = *table.tape;
  std::vector<T> out(indices.size() * size_t(n));
  const auto& tv = table.val();
  for (size_t i = 0; i < indices.size(); ++i)
    std::copy_n(tv.begin() + size_t(indices[i]) * n, n, out.begin() + i * size_t(n));
  int it = table.id;
  auto idx = indices;
  return t.emplace(Shape{int(indices.size()), n}, std::move(out),
                   [it, idx, n](Tape<T>& tp, int self) {
                     const auto& g = tp.grad(self);
                     auto& gt = tp.grad(it);
                     for (size_t i = 0; i < idx.size(); ++i)
                       for (int c = 0; c < n; ++c)
                         gt[size_t(idx[i]) * n + c] += g[i * size_t(n) + c];
                   });
}

// ---------------------------------------------------------------------------
// Normalizations and reductions
// ---------------------------------------------------------------------------

// Stabilized softmax over the last dimension.
template <typename T>
Var<T> softmax_lastdim(Var<T> x) {
  if (x.shape().empty() || x.shape().back() < 1)
    throw ShapeError("softmax_lastdim: empty last dimension");
  auto& t = *x.tape;
  int n = x.cols();
  int m = int(x.val().size()) / n;
  std::vector<T> out(x.val().size());
  const auto& xv = x.val();
  for (int r = 0; r < m; ++r) {
    const T* row = xv.data() + size_t(r) * n;
    T* orow = out.data() + size_t(r) * n;
    T mx = row[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    T sum = T(0);
    for (int c = 0; c < n; ++c) {
      orow[c] = std::exp(row[c] - mx);
      sum += orow[c];
    }
    for (int c = 0; c < n; ++c) orow[c] /= sum;
  }
  int ix = x.id;
  return t.emplace(x.shape(), std::move(out), [ix, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& y = tp.val(self);
    auto& gx = tp.grad(ix);
    for (int r = 0; r < m; ++r) {
      const T* gr = g.data() + size_t(r) * n;
      const T* yr = y.data() + size_t(r) * n;
      T dot = T(0);
      for (int c = 0; c < n; ++c) dot += gr[c] * yr[c];
      for (int c = 0; c < n; ++c) gx[size_t(r) * n + c] += yr[c] * (gr[c] - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-row standardization over the last dim, then affine with gamma/beta.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta) {
  detail::check_same_tape(x, gamma);
  detail::check_same_tape(x, beta);
  int n = x.cols();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
    throw ShapeError("layer_norm: gamma/beta must match last dim " + std::to_string(n));
  auto& t = *x.tape;
  int m = int(x.val().size()) / n;
  std::vector<T> out(x.val().size());
  const auto& xv = x.val();
  const auto& gv = gamma.val();
  const auto& bv = beta.val();
  for (int r = 0; r < m; ++r) {
    const T* row = xv.data() + size_t(r) * n;
    T* orow = out.data() + size_t(r) * n;
    double mean = 0;
    for (int c = 0; c < n; ++c) mean += row[c];
    mean /= n;
    double var = 0;
    for (int c = 0; c < n; ++c) {
      double d = row[c] - mean;
      var += d * d;
    }
    var /= n;
    double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (int c = 0; c < n; ++c)
      orow[c] = T((double(row[c]) - mean) * inv) * gv[size_t(c)] + bv[size_t(c)];
  }
  int ix = x.id, ig = gamma.id, ib = beta.id;
  return t.emplace(x.shape(), std::move(out), [ix, ig, ib, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& xv2 = tp.val(ix);
    const auto& gv2 = tp.val(ig);
    auto& gx = tp.grad(ix);
    auto& gg = tp.grad(ig);
    auto& gb = tp.grad(ib);
    for (int r = 0; r < m; ++r) {
      const T* row = xv2.data() + size_t(r) * n;
      const T* gr = g.data() + size_t(r) * n;
      double mean = 0;
      for (int c = 0; c < n; ++c) mean += row[c];
      mean /= n;
      double var = 0;
      for (int c = 0; c < n; ++c) {
        double d = row[c] - mean;
        var += d * d;
      }
      var /= n;
      double inv = 1.0 / std::sqrt(var + kLayerNormEps);
      // xhat and the two row sums needed by the chain rule
      double sum_gy = 0, sum_gyx = 0;
      for (int c = 0; c < n; ++c) {
        double xhat = (double(row[c]) - mean) * inv;
        double gy = double(gr[c]) * double(gv2[size_t(c)]);
        sum_gy += gy;
        sum_gyx += gy * xhat;
        gg[size_t(c)] += T(double(gr[c]) * xhat);
        gb[size_t(c)] += gr[c];
      }
      for (int c = 0; c < n; ++c) {
        double xhat = (double(row[c]) - mean) * inv;
        double gy = double(gr[c]) * double(gv2[size_t(c)]);
        gx[size_t(r) * n + c] += T(inv * (gy - sum_gy / n - xhat * sum_gyx / n));
      }
    }
  });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  auto& t = *x.tape;
  T s = T(0);
  for (T v : x.val()) s += v;
  int ix = x.id;
  return t.emplace(Shape{1}, {s}, [ix](Tape<T>& tp, int self) {
    T g = tp.grad(self)[0];
    auto& gx = tp.grad(ix);
    for (auto& v : gx) v += g;
  });
}

// Column means: MxN -> 1xN.
template <typename T>
Var<T> mean_rows(Var<T> x) {
  if (x.shape().size() != 2) throw ShapeError("mean_rows: rank-2 required");
  int m = x.shape()[0], n = x.shape()[1];
  auto& t = *x.tape;
  std::vector<T> out(size_t(n), T(0));
  const auto& xv = x.val();
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out[size_t(c)] += xv[size_t(r) * n + c];
  for (auto& v : out) v /= T(m);
  int ix = x.id;
  return t.emplace(Shape{1, n}, std::move(out), [ix, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(ix);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) gx[size_t(r) * n + c] += g[size_t(c)] / T(m);
  });
}

// Each row scaled to unit Euclidean norm.
template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  if (x.shape().size() != 2) throw ShapeError("l2_normalize_rows: rank-2 required");
  int m = x.shape()[0], n = x.shape()[1];
  auto& t = *x.tape;
  std::vector<T> out(x.val().size());
  const auto& xv = x.val();
  for (int r = 0; r < m; ++r) {
    double nrm = 0;
    for (int c = 0; c < n; ++c) nrm += double(xv[size_t(r) * n + c]) * double(xv[size_t(r) * n + c]);
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12) throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    for (int c = 0; c < n; ++c) out[size_t(r) * n + c] = T(double(xv[size_t(r) * n + c]) / nrm);
  }
  int ix = x.id;
  return t.emplace(x.shape(), std::move(out), [ix, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad(self);
    const auto& xv2 = tp.val(ix);
    const auto& y = tp.val(self);
    auto& gx = tp.grad(ix);
    for (int r = 0; r < m; ++r) {
      double nrm = 0;
      for (int c = 0; c < n; ++c)
        nrm += double(xv2[size_t(r) * n + c]) * double(xv2[size_t(r) * n + c]);
      nrm = std::sqrt(nrm);
      double dot = 0;
      for (int c = 0; c < n; ++c) dot += double(g[size_t(r) * n + c]) * double(y[size_t(r) * n + c]);
      for (int c = 0; c < n; ++c)
        gx[size_t(r) * n + c] +=
            T((double(g[size_t(r) * n + c]) - dot * double(y[size_t(r) * n + c])) / nrm);
    }
  });
}

// ---------------------------------------------------------------------------
// Classification losses (fused nodes)
// ---------------------------------------------------------------------------

// Mean cross-entropy of softmaxed logits against integer labels.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2) throw ShapeError("softmax_cross_entropy: rank-2 logits required");
  int b = logits.shape()[0], k = logits.shape()[1];
  if (int(labels.size()) != b) throw ContractError("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= k) throw ContractError("softmax_cross_entropy: label out of range");
  auto& t = *logits.tape;
  const auto& z = logits.val();
  double loss = 0;
  for (int r = 0; r < b; ++r) {
    const T* row = z.data() + size_t(r) * k;
    double mx = row[0];
    for (int c = 1; c < k; ++c) mx = std::max(mx, double(row[c]));
    double lse = 0;
    for (int c = 0; c < k; ++c) lse += std::exp(double(row[c]) - mx);
    lse = mx + std::log(lse);
    loss += lse - double(row[labels[size_t(r)]]);
  }
  loss /= b;
  int iz = logits.id;
  auto lab = labels;
  return t.emplace(Shape{1}, {T(loss)}, [iz, lab, b, k](Tape<T>& tp, int self) {
    T go = tp.grad(self)[0];
    const auto& z2 = tp.val(iz);
    auto& gz = tp.grad(iz);
    for (int r = 0; r < b; ++r) {
      const T* row = z2.data() + size_t(r) * k;
      double mx = row[0];
      for (int c = 1; c < k; ++c) mx = std::max(mx, double(row[c]));
      double sum = 0;
      for (int c = 0; c < k; ++c) sum += std::exp(double(row[c]) - mx);
      for (int c = 0; c < k; ++c) {
        double p = std::exp(double(row[c]) - mx) / sum;
        double d = p - (c == lab[size_t(r)] ? 1.0 : 0.0);
        gz[size_t(r) * k + c] += T(double(go) * d / b);
      }
    }
  });
}

// Mean over rows of -log( exp(s[i,target_i]) / sum_{j in allowed_i} exp(s[i,j]) ).
// Scores outside the allowed mask take no part in value or gradient.
template <typename T>
Var<T> masked_softmax_nll(Var<T> scores, const std::vector<char>& allowed,
                          const std::vector<int>& targets) {
  if (scores.shape().size() != 2) throw ShapeError("masked_softmax_nll: rank-2 scores required");
  int b = scores.shape()[0], k = scores.shape()[1];
  if (int(allowed.size()) != b * k) throw ContractError("masked_softmax_nll: mask size mismatch");
  if (int(targets.size()) != b) throw ContractError("masked_softmax_nll: target count mismatch");
  for (int r = 0; r < b; ++r) {
    int ti = targets[size_t(r)];
    if (ti < 0 || ti >= k || !allowed[size_t(r) * k + ti])
      throw ContractError("masked_softmax_nll: target not in allowed set");
  }
  auto& t = *scores.tape;
  const auto& s = scores.val();
  double loss = 0;
  for (int r = 0; r < b; ++r) {
    double mx = -1e300;
    for (int c = 0; c < k; ++c)
      if (allowed[size_t(r) * k + c]) mx = std::max(mx, double(s[size_t(r) * k + c]));
    double sum = 0;
    for (int c = 0; c < k; ++c)
      if (allowed[size_t(r) * k + c]) sum += std::exp(double(s[size_t(r) * k + c]) - mx);
    double lse = mx + std::log(sum);
    loss += lse - double(s[size_t(r) * k + targets[size_t(r)]]);
  }
  loss /= b;
  int is = scores.id;
  auto msk = allowed;
  auto tgt = targets;
  return t.emplace(Shape{1}, {T(loss)}, [is, msk, tgt, b, k](Tape<T>& tp, int self) {
    T go = tp.grad(self)[0];
    const auto& s2 = tp.val(is);
    auto& gs = tp.grad(is);
    for (int r = 0; r < b; ++r) {
      double mx = -1e300;
      for (int c = 0; c < k; ++c)
        if (msk[size_t(r) * k + c]) mx = std::max(mx, double(s2[size_t(r) * k + c]));
      double sum = 0;
      for (int c = 0; c < k; ++c)
        if (msk[size_t(r) * k + c]) sum += std::exp(double(s2[size_t(r) * k + c]) - mx);
      for (int c = 0; c < k; ++c) {
        if (!msk[size_t(r) * k + c]) continue;
        double p = std::exp(double(s2[size_t(r) * k + c]) - mx) / sum;
        double d = p - (c == tgt[size_t(r)] ? 1.0 : 0.0);
        gs[size_t(r) * k + c] += T(double(go) * d / b);
      }
    }
  });
}

}  // namespace irk
