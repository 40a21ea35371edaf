#pragma once

// Minimal reverse-mode autodiff over dense row-major matrices.
//
// A Tape owns every node created during one forward pass. Ops are free
// functions that read their operands' values, allocate the result on the
// operands' tape and register a closure that scatters the result gradient
// back into the operands. Tape::backward walks nodes in reverse creation
// order, which is a valid topological order because an op can only consume
// nodes that already exist.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "hdm/error.hpp"

namespace hdm::ag {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

template <typename T>
struct Node {
  Mat<T> value;
  Mat<T> grad;
  bool needs_grad = false;
  std::function<void(const Mat<T>&)> backward;

  template <typename Expr>
  void accumulate(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;

  const Mat<T>& value() const { return node_->value; }
  // Empty when no gradient reached this node.
  const Mat<T>& grad() const { return node_->grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool needs_grad() const { return node_->needs_grad; }
  bool valid() const { return node_ != nullptr; }

  Node<T>* node() const { return node_; }
  Tape<T>* tape() const { return tape_; }

 private:
  friend class Tape<T>;
  Var(Node<T>* node, Tape<T>* tape) : node_(node), tape_(tape) {}

  Node<T>* node_ = nullptr;
  Tape<T>* tape_ = nullptr;
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Mat<T> value) { return make(std::move(value), false, {}); }
  Var<T> leaf(Mat<T> value) { return make(std::move(value), true, {}); }

  Var<T> make(Mat<T> value, bool needs_grad, std::function<void(const Mat<T>&)> backward) {
    auto& node = nodes_.emplace_back();
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    if (needs_grad) node.backward = std::move(backward);
    return Var<T>(&node, this);
  }

  // Seeds d(root)/d(root) = 1 for every entry of root.
  void backward(const Var<T>& root) {
    require(root.tape() == this, ErrorKind::kInvariant, "backward root belongs to another tape");
    if (!root.needs_grad()) return;
    root.node()->accumulate(Mat<T>::Ones(root.rows(), root.cols()));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->needs_grad && it->backward && it->grad.size() != 0) it->backward(it->grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node<T>> nodes_;
};

// Per-row cos/sin of rotation angles, one column per rotated pair.
template <typename T>
struct RotaryTable {
  Mat<T> cos;
  Mat<T> sin;

  Index rows() const { return cos.rows(); }
  Index pairs() const { return cos.cols(); }

  RotaryTable gather(std::span<const int> rows_idx) const {
    RotaryTable out;
    out.cos.resize(static_cast<Index>(rows_idx.size()), pairs());
    out.sin.resize(static_cast<Index>(rows_idx.size()), pairs());
    for (std::size_t i = 0; i < rows_idx.size(); ++i) {
      out.cos.row(static_cast<Index>(i)) = cos.row(rows_idx[i]);
      out.sin.row(static_cast<Index>(i)) = sin.row(rows_idx[i]);
    }
    return out;
  }
};

struct AttentionMask {
  bool causal = false;
  // Empty means every key is visible; otherwise one flag per key row.
  std::vector<std::uint8_t> key_valid;
};

namespace detail {

template <typename T>
Tape<T>* same_tape(const Var<T>& a, const Var<T>& b) {
  require(a.tape() == b.tape(), ErrorKind::kInvariant, "operands recorded on different tapes");
  return a.tape();
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::kShape,
          std::string(op) + ": operand shapes differ");
}

}  // namespace detail

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.rows(), ErrorKind::kShape, "matmul: inner dimensions differ");
  auto* tape = detail::same_tape(a, b);
  Mat<T> out = a.value() * b.value();
  auto* na = a.node();
  auto* nb = b.node();
  return tape->make(std::move(out), na->needs_grad || nb->needs_grad, [na, nb](const Mat<T>& g) {
    if (na->needs_grad) na->accumulate(g * nb->value.transpose());
    if (nb->needs_grad) nb->accumulate(na->value.transpose() * g);
  });
}

// x * w + bias, bias broadcast over rows.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  require(x.cols() == w.rows(), ErrorKind::kShape, "linear: input width does not match weight rows");
  require(bias.rows() == 1 && bias.cols() == w.cols(), ErrorKind::kShape, "linear: bias must be 1 x out");
  auto* tape = detail::same_tape(x, w);
  Mat<T> out = x.value() * w.value();
  out.rowwise() += bias.value().row(0);
  auto* nx = x.node();
  auto* nw = w.node();
  auto* nb = bias.node();
  const bool needs = nx->needs_grad || nw->needs_grad || nb->needs_grad;
  return tape->make(std::move(out), needs, [nx, nw, nb](const Mat<T>& g) {
    if (nx->needs_grad) nx->accumulate(g * nw->value.transpose());
    if (nw->needs_grad) nw->accumulate(nx->value.transpose() * g);
    if (nb->needs_grad) nb->accumulate(g.colwise().sum());
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  auto* tape = detail::same_tape(a, b);
  auto* na = a.node();
  auto* nb = b.node();
  return tape->make(a.value() + b.value(), na->needs_grad || nb->needs_grad, [na, nb](const Mat<T>& g) {
    if (na->needs_grad) na->accumulate(g);
    if (nb->needs_grad) nb->accumulate(g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  auto* tape = detail::same_tape(a, b);
  auto* na = a.node();
  auto* nb = b.node();
  return tape->make(a.value() - b.value(), na->needs_grad || nb->needs_grad, [na, nb](const Mat<T>& g) {
    if (na->needs_grad) na->accumulate(g);
    if (nb->needs_grad) nb->accumulate(-g);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  auto* tape = detail::same_tape(a, b);
  auto* na = a.node();
  auto* nb = b.node();
  Mat<T> out = a.value().cwiseProduct(b.value());
  return tape->make(std::move(out), na->needs_grad || nb->needs_grad, [na, nb](const Mat<T>& g) {
    if (na->needs_grad) na->accumulate(g.cwiseProduct(nb->value));
    if (nb->needs_grad) nb->accumulate(g.cwiseProduct(na->value));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  auto* na = a.node();
  return a.tape()->make(a.value() * s, na->needs_grad, [na, s](const Mat<T>& g) { na->accumulate(g * s); });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  auto* na = a.node();
  Mat<T> out = a.value().array() + s;
  return a.tape()->make(std::move(out), na->needs_grad, [na](const Mat<T>& g) { na->accumulate(g); });
}

// x + r where r is a 1 x cols row broadcast over every row of x.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& r) {
  require(r.rows() == 1 && r.cols() == x.cols(), ErrorKind::kShape, "add_row: row vector width mismatch");
  auto* tape = detail::same_tape(x, r);
  Mat<T> out = x.value();
  out.rowwise() += r.value().row(0);
  auto* nx = x.node();
  auto* nr = r.node();
  return tape->make(std::move(out), nx->needs_grad || nr->needs_grad, [nx, nr](const Mat<T>& g) {
    if (nx->needs_grad) nx->accumulate(g);
    if (nr->needs_grad) nr->accumulate(g.colwise().sum());
  });
}

// x ⊙ r with r broadcast over rows.
template <typename T>
Var<T> mul_row(const Var<T>& x, const Var<T>& r) {
  require(r.rows() == 1 && r.cols() == x.cols(), ErrorKind::kShape, "mul_row: row vector width mismatch");
  auto* tape = detail::same_tape(x, r);
  Mat<T> out = x.value().array().rowwise() * r.value().row(0).array();
  auto* nx = x.node();
  auto* nr = r.node();
  return tape->make(std::move(out), nx->needs_grad || nr->needs_grad, [nx, nr](const Mat<T>& g) {
    if (nx->needs_grad) {
      Mat<T> gx = g.array().rowwise() * nr->value.row(0).array();
      nx->accumulate(gx);
    }
    if (nr->needs_grad) nr->accumulate(g.cwiseProduct(nx->value).colwise().sum());
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  auto* nx = x.node();
  Mat<T> out = x.value().unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
  return x.tape()->make(std::move(out), nx->needs_grad, [nx](const Mat<T>& g) {
    Mat<T> d = nx->value.unaryExpr([](T v) {
      const T s = T(1) / (T(1) + std::exp(-v));
      return s * (T(1) + v * (T(1) - s));
    });
    nx->accumulate(g.cwiseProduct(d));
  });
}

// tanh approximation of GELU.
template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  auto* nx = x.node();
  Mat<T> out = x.value().unaryExpr([](T v) { return T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v))); });
  return x.tape()->make(std::move(out), nx->needs_grad, [nx](const Mat<T>& g) {
    Mat<T> d = nx->value.unaryExpr([](T v) {
      const T th = std::tanh(kC * (v + kA * v * v * v));
      return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * kC * (T(1) + T(3) * kA * v * v);
    });
    nx->accumulate(g.cwiseProduct(d));
  });
}

// Per-row standardization (x - mean) / sqrt(var + eps), biased variance.
template <typename T>
Var<T> layer_norm(const Var<T>& x, T eps = T(1e-6)) {
  const Index n = x.rows();
  const Index d = x.cols();
  Mat<T> y(n, d);
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto row = x.value().row(i);
    const T mean = row.mean();
    const T var = (row.array() - mean).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(i)] = is;
    y.row(i) = (row.array() - mean) * is;
  }
  auto* nx = x.node();
  auto out = x.tape()->make(std::move(y), nx->needs_grad, {});
  if (nx->needs_grad) {
    auto* ny = out.node();
    ny->backward = [nx, ny, inv_std](const Mat<T>& g) {
      const Index rows = g.rows();
      const T inv_d = T(1) / static_cast<T>(g.cols());
      Mat<T> dx(rows, g.cols());
      for (Index i = 0; i < rows; ++i) {
        const auto gy = g.row(i).array();
        const auto yy = ny->value.row(i).array();
        const T mg = gy.sum() * inv_d;
        const T mgy = (gy * yy).sum() * inv_d;
        dx.row(i) = (gy - mg - yy * mgy) * (*inv_std)[static_cast<std::size_t>(i)];
      }
      nx->accumulate(dx);
    };
  }
  return out;
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), ErrorKind::kShape, "slice_cols out of range");
  auto* nx = x.node();
  Mat<T> out = x.value().middleCols(start, count);
  return x.tape()->make(std::move(out), nx->needs_grad, [nx, start, count](const Mat<T>& g) {
    if (nx->grad.size() == 0) nx->grad = Mat<T>::Zero(nx->value.rows(), nx->value.cols());
    nx->grad.middleCols(start, count) += g;
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(), ErrorKind::kShape, "slice_rows out of range");
  auto* nx = x.node();
  Mat<T> out = x.value().middleRows(start, count);
  return x.tape()->make(std::move(out), nx->needs_grad, [nx, start, count](const Mat<T>& g) {
    if (nx->grad.size() == 0) nx->grad = Mat<T>::Zero(nx->value.rows(), nx->value.cols());
    nx->grad.middleRows(start, count) += g;
  });
}

template <typename T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.cols(), ErrorKind::kShape, "concat_rows: widths differ");
  auto* tape = detail::same_tape(a, b);
  Mat<T> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  auto* na = a.node();
  auto* nb = b.node();
  const Index ra = a.rows();
  const Index rb = b.rows();
  return tape->make(std::move(out), na->needs_grad || nb->needs_grad, [na, nb, ra, rb](const Mat<T>& g) {
    if (na->needs_grad) na->accumulate(g.topRows(ra));
    if (nb->needs_grad) nb->accumulate(g.bottomRows(rb));
  });
}

// out[i] = x[idx[i]]; repeated indices accumulate in backward.
template <typename T>
Var<T> gather_rows(const Var<T>& x, std::span<const int> idx) {
  const Index n = static_cast<Index>(idx.size());
  Mat<T> out(n, x.cols());
  for (Index i = 0; i < n; ++i) {
    const int r = idx[static_cast<std::size_t>(i)];
    require(r >= 0 && r < x.rows(), ErrorKind::kInvariant, "gather_rows index out of range");
    out.row(i) = x.value().row(r);
  }
  auto* nx = x.node();
  auto keep = std::make_shared<std::vector<int>>(idx.begin(), idx.end());
  return x.tape()->make(std::move(out), nx->needs_grad, [nx, keep](const Mat<T>& g) {
    if (nx->grad.size() == 0) nx->grad = Mat<T>::Zero(nx->value.rows(), nx->value.cols());
    for (std::size_t i = 0; i < keep->size(); ++i) nx->grad.row((*keep)[i]) += g.row(static_cast<Index>(i));
  });
}

// Interleaves rows of a and b into a matrix of a.rows() + b.rows() rows:
// out[a_idx[i]] = a[i], out[b_idx[j]] = b[j]. Indices must cover every row once.
template <typename T>
Var<T> merge_rows(const Var<T>& a, std::span<const int> a_idx, const Var<T>& b, std::span<const int> b_idx) {
  require(a.cols() == b.cols(), ErrorKind::kShape, "merge_rows: widths differ");
  require(static_cast<Index>(a_idx.size()) == a.rows() && static_cast<Index>(b_idx.size()) == b.rows(),
          ErrorKind::kShape, "merge_rows: index count does not match row count");
  auto* tape = detail::same_tape(a, b);
  const Index n = a.rows() + b.rows();
  Mat<T> out(n, a.cols());
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n), 0);
  auto place = [&](const Mat<T>& src, std::span<const int> idx) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const int r = idx[i];
      require(r >= 0 && r < n && !seen[static_cast<std::size_t>(r)], ErrorKind::kInvariant,
              "merge_rows: indices are not a permutation");
      seen[static_cast<std::size_t>(r)] = 1;
      out.row(r) = src.row(static_cast<Index>(i));
    }
  };
  place(a.value(), a_idx);
  place(b.value(), b_idx);
  auto* na = a.node();
  auto* nb = b.node();
  auto ia = std::make_shared<std::vector<int>>(a_idx.begin(), a_idx.end());
  auto ib = std::make_shared<std::vector<int>>(b_idx.begin(), b_idx.end());
  return tape->make(std::move(out), na->needs_grad || nb->needs_grad, [na, nb, ia, ib](const Mat<T>& g) {
    auto pull = [&g](Node<T>* node, const std::vector<int>& idx) {
      Mat<T> part(static_cast<Index>(idx.size()), g.cols());
      for (std::size_t i = 0; i < idx.size(); ++i) part.row(static_cast<Index>(i)) = g.row(idx[i]);
      node->accumulate(part);
    };
    if (na->needs_grad) pull(na, *ia);
    if (nb->needs_grad) pull(nb, *ib);
  });
}

// Rotates adjacent feature pairs (2p, 2p+1), p < table.pairs(), inside every
// head. Columns past the rotated block of each head pass through.
template <typename T>
Var<T> rotary(const Var<T>& x, const RotaryTable<T>& table, int heads) {
  require(table.rows() == x.rows(), ErrorKind::kShape, "rotary: table rows do not match tokens");
  require(heads > 0 && x.cols() % heads == 0, ErrorKind::kShape, "rotary: width not divisible by heads");
  const Index head_dim = x.cols() / heads;
  const Index pairs = table.pairs();
  require(2 * pairs <= head_dim, ErrorKind::kShape, "rotary: rotated pairs exceed head width");
  Mat<T> out = x.value();
  const Index n = x.rows();
  for (Index i = 0; i < n; ++i) {
    for (int h = 0; h < heads; ++h) {
      T* row = out.row(i).data() + h * head_dim;
      for (Index p = 0; p < pairs; ++p) {
        const T c = table.cos(i, p);
        const T s = table.sin(i, p);
        const T a = row[2 * p];
        const T b = row[2 * p + 1];
        row[2 * p] = a * c - b * s;
        row[2 * p + 1] = a * s + b * c;
      }
    }
  }
  auto* nx = x.node();
  auto tab = std::make_shared<RotaryTable<T>>(table);
  return x.tape()->make(std::move(out), nx->needs_grad, [nx, tab, heads, head_dim](const Mat<T>& g) {
    Mat<T> dx = g;
    const Index pairs = tab->pairs();
    for (Index i = 0; i < dx.rows(); ++i) {
      for (int h = 0; h < heads; ++h) {
        T* row = dx.row(i).data() + h * head_dim;
        for (Index p = 0; p < pairs; ++p) {
          const T c = tab->cos(i, p);
          const T s = tab->sin(i, p);
          const T a = row[2 * p];
          const T b = row[2 * p + 1];
          row[2 * p] = a * c + b * s;
          row[2 * p + 1] = -a * s + b * c;
        }
      }
    }
    nx->accumulate(dx);
  });
}

// Multi-head scaled dot-product attention. q: n x D, k/v: m x D, D split
// evenly across heads. A query row whose keys are all masked yields zeros.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads, const AttentionMask* mask = nullptr) {
  require(q.cols() == k.cols() && k.cols() == v.cols(), ErrorKind::kShape, "attention: widths differ");
  require(k.rows() == v.rows(), ErrorKind::kShape, "attention: key/value rows differ");
  require(heads > 0 && q.cols() % heads == 0, ErrorKind::kShape, "attention: width not divisible by heads");
  if (mask && !mask->key_valid.empty()) {
    require(static_cast<Index>(mask->key_valid.size()) == k.rows(), ErrorKind::kShape,
            "attention: key mask length mismatch");
  }
  auto* tape = detail::same_tape(q, k);
  const Index n = q.rows();
  const Index m = k.rows();
  const Index hd = q.cols() / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  auto probs = std::make_shared<std::vector<Mat<T>>>(static_cast<std::size_t>(heads));
  Mat<T> out(n, q.cols());
  for (int h = 0; h < heads; ++h) {
    Mat<T>& p = (*probs)[static_cast<std::size_t>(h)];
    p.noalias() = q.value().middleCols(h * hd, hd) * k.value().middleCols(h * hd, hd).transpose();
    p *= scale;
    for (Index i = 0; i < n; ++i) {
      auto row = p.row(i);
      if (mask) {
        for (Index j = 0; j < m; ++j) {
          const bool hidden = (mask->causal && j > i) ||
                              (!mask->key_valid.empty() && !mask->key_valid[static_cast<std::size_t>(j)]);
          if (hidden) row(j) = -std::numeric_limits<T>::infinity();
        }
      }
      const T mx = row.maxCoeff();
      if (!std::isfinite(mx)) {
        row.setZero();
        continue;
      }
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
    out.middleCols(h * hd, hd).noalias() = p * v.value().middleCols(h * hd, hd);
  }
  auto* nq = q.node();
  auto* nk = k.node();
  auto* nv = v.node();
  const bool needs = nq->needs_grad || nk->needs_grad || nv->needs_grad;
  return tape->make(std::move(out), needs, [nq, nk, nv, probs, heads, hd, scale](const Mat<T>& g) {
    Mat<T> dq = Mat<T>::Zero(nq->value.rows(), nq->value.cols());
    Mat<T> dk = Mat<T>::Zero(nk->value.rows(), nk->value.cols());
    Mat<T> dv = Mat<T>::Zero(nv->value.rows(), nv->value.cols());
    for (int h = 0; h < heads; ++h) {
      const Mat<T>& p = (*probs)[static_cast<std::size_t>(h)];
      const auto gh = g.middleCols(h * hd, hd);
      dv.middleCols(h * hd, hd).noalias() = p.transpose() * gh;
      Mat<T> dp = gh * nv->value.middleCols(h * hd, hd).transpose();
      Mat<T> ds = dp.cwiseProduct(p);
      const auto row_dot = ds.rowwise().sum();
      ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
      ds *= scale;
      dq.middleCols(h * hd, hd).noalias() = ds * nk->value.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd).noalias() = ds.transpose() * nq->value.middleCols(h * hd, hd);
    }
    if (nq->needs_grad) nq->accumulate(dq);
    if (nk->needs_grad) nk->accumulate(dk);
    if (nv->needs_grad) nv->accumulate(dv);
  });
}

// mean((pred - target)^2) as a 1 x 1 node.
template <typename T>
Var<T> mse(const Var<T>& pred, const Mat<T>& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorKind::kShape,
          "mse: prediction and target shapes differ");
  auto diff = std::make_shared<Mat<T>>(pred.value() - target);
  const T n = static_cast<T>(diff->size());
  Mat<T> out(1, 1);
  out(0, 0) = diff->squaredNorm() / n;
  auto* np = pred.node();
  return pred.tape()->make(std::move(out), np->needs_grad, [np, diff, n](const Mat<T>& g) {
    np->accumulate(*diff * (T(2) * g(0, 0) / n));
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  Mat<T> out(1, 1);
  out(0, 0) = x.value().sum();
  auto* nx = x.node();
  return x.tape()->make(std::move(out), nx->needs_grad, [nx](const Mat<T>& g) {
    nx->accumulate(Mat<T>::Constant(nx->value.rows(), nx->value.cols(), g(0, 0)));
  });
}

}  // namespace hdm::ag
