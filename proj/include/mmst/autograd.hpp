#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records nodes in creation order, which is always a valid
// topological order, so backward() simply walks the tape in reverse.
// Nodes whose inputs carry no gradient are recorded without a backward
// closure, so data-only streams cost nothing on the way back.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmst/error.hpp"

namespace mmst::ag {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Node {
  Matrix value;
  const Matrix* borrowed = nullptr;
  Matrix grad;
  std::function<void(const Matrix&)> backward;
  bool needs_grad = false;

  const Matrix& val() const { return borrowed ? *borrowed : value; }

  void accumulate(const Matrix& g) {
    if (!needs_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Node* node, Tape* tape) : node_(node), tape_(tape) {}

  const Matrix& value() const { return node_->val(); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool needs_grad() const { return node_->needs_grad; }
  Node* node() const { return node_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return node_ != nullptr; }

  // Gradient after Tape::backward(); empty when nothing flowed here.
  const Matrix& grad() const { return node_->grad; }

 private:
  Node* node_ = nullptr;
  Tape* tape_ = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m) { return push(std::move(m), false, nullptr); }

  // Leaf that receives a gradient.
  Var variable(Matrix m) { return push(std::move(m), true, nullptr); }

  // Leaf bound to an externally owned trainable matrix. Repeated calls with
  // the same slot return the same node so gradients accumulate once.
  Var param(std::size_t slot, const Matrix& value) {
    if (auto it = params_.find(slot); it != params_.end()) {
      return Var(it->second, this);
    }
    auto node = std::make_unique<Node>();
    node->borrowed = &value;
    node->needs_grad = true;
    Node* raw = node.get();
    nodes_.push_back(std::move(node));
    params_.emplace(slot, raw);
    return Var(raw, this);
  }

  Var push(Matrix value, bool needs_grad,
           std::function<void(const Matrix&)> backward) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->needs_grad = needs_grad;
    if (needs_grad) node->backward = std::move(backward);
    Node* raw = node.get();
    nodes_.push_back(std::move(node));
    return Var(raw, this);
  }

  void backward(const Var& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ShapeError("backward() requires a 1x1 loss");
    }
    if (!loss.needs_grad()) return;
    loss.node()->grad = Matrix::Ones(1, 1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = **it;
      if (n.backward && n.grad.size() != 0) n.backward(n.grad);
    }
  }

  // Gradient of a bound parameter slot, or nullptr if it never reached the
  // loss.
  const Matrix* param_grad(std::size_t slot) const {
    auto it = params_.find(slot);
    if (it == params_.end() || it->second->grad.size() == 0) return nullptr;
    return &it->second->grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<std::size_t, Node*> params_;
};

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

inline std::string dims(const Var& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          "shape mismatch " + dims(a) + " vs " + dims(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

inline Var matmul(const Var& a, const Var& b) {
  detail::require(a.cols() == b.rows(), "matmul",
                  "inner dimension mismatch " + detail::dims(a) + " * " +
                      detail::dims(b));
  Node* na = a.node();
  Node* nb = b.node();
  return a.tape().push(a.value() * b.value(), na->needs_grad || nb->needs_grad,
                       [na, nb](const Matrix& g) {
                         if (na->needs_grad) na->accumulate(g * nb->val().transpose());
                         if (nb->needs_grad) nb->accumulate(na->val().transpose() * g);
                       });
}

inline Var add(const Var& a, const Var& b) {
  detail::same_shape(a, b, "add");
  Node* na = a.node();
  Node* nb = b.node();
  return a.tape().push(a.value() + b.value(), na->needs_grad || nb->needs_grad,
                       [na, nb](const Matrix& g) {
                         na->accumulate(g);
                         nb->accumulate(g);
                       });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_shape(a, b, "sub");
  Node* na = a.node();
  Node* nb = b.node();
  return a.tape().push(a.value() - b.value(), na->needs_grad || nb->needs_grad,
                       [na, nb](const Matrix& g) {
                         na->accumulate(g);
                         if (nb->needs_grad) nb->accumulate(-g);
                       });
}

inline Var mul(const Var& a, const Var& b) {
  detail::same_shape(a, b, "mul");
  Node* na = a.node();
  Node* nb = b.node();
  return a.tape().push(a.value().cwiseProduct(b.value()),
                       na->needs_grad || nb->needs_grad,
                       [na, nb](const Matrix& g) {
                         if (na->needs_grad) na->accumulate(g.cwiseProduct(nb->val()));
                         if (nb->needs_grad) nb->accumulate(g.cwiseProduct(na->val()));
                       });
}

inline Var scale(const Var& a, double s) {
  Node* na = a.node();
  return a.tape().push(a.value() * s, na->needs_grad,
                       [na, s](const Matrix& g) { na->accumulate(g * s); });
}

inline Var add_scalar(const Var& a, double s) {
  Node* na = a.node();
  return a.tape().push((a.value().array() + s).matrix(), na->needs_grad,
                       [na](const Matrix& g) { na->accumulate(g); });
}

inline Var one_minus(const Var& a) {
  Node* na = a.node();
  return a.tape().push((1.0 - a.value().array()).matrix(), na->needs_grad,
                       [na](const Matrix& g) { na->accumulate(-g); });
}

// a + broadcast(row) where row is 1 x cols(a).
inline Var add_row(const Var& a, const Var& row) {
  detail::require(row.rows() == 1 && row.cols() == a.cols(), "add_row",
                  detail::dims(a) + " + " + detail::dims(row));
  Node* na = a.node();
  Node* nr = row.node();
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape().push(std::move(out), na->needs_grad || nr->needs_grad,
                       [na, nr](const Matrix& g) {
                         na->accumulate(g);
                         if (nr->needs_grad) nr->accumulate(g.colwise().sum());
                       });
}

// a + broadcast(col) where col is rows(a) x 1.
inline Var add_col(const Var& a, const Var& col) {
  detail::require(col.cols() == 1 && col.rows() == a.rows(), "add_col",
                  detail::dims(a) + " + " + detail::dims(col));
  Node* na = a.node();
  Node* nc = col.node();
  Matrix out = a.value();
  out.colwise() += col.value().col(0);
  return a.tape().push(std::move(out), na->needs_grad || nc->needs_grad,
                       [na, nc](const Matrix& g) {
                         na->accumulate(g);
                         if (nc->needs_grad) nc->accumulate(g.rowwise().sum());
                       });
}

inline Var transpose(const Var& a) {
  Node* na = a.node();
  return a.tape().push(a.value().transpose(), na->needs_grad,
                       [na](const Matrix& g) { na->accumulate(g.transpose()); });
}

inline Var tanh(const Var& a) {
  Node* na = a.node();
  Matrix y = a.value().array().tanh().matrix();
  auto out = a.tape().push(std::move(y), na->needs_grad, nullptr);
  if (na->needs_grad) {
    Node* no = out.node();
    no->backward = [na, no](const Matrix& g) {
      na->accumulate((g.array() * (1.0 - no->value.array().square())).matrix());
    };
  }
  return out;
}

inline Var sigmoid(const Var& a) {
  Node* na = a.node();
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  auto out = a.tape().push(std::move(y), na->needs_grad, nullptr);
  if (na->needs_grad) {
    Node* no = out.node();
    no->backward = [na, no](const Matrix& g) {
      const auto& y = no->value.array();
      na->accumulate((g.array() * y * (1.0 - y)).matrix());
    };
  }
  return out;
}

inline Var relu(const Var& a) {
  Node* na = a.node();
  return a.tape().push(a.value().cwiseMax(0.0), na->needs_grad,
                       [na](const Matrix& g) {
                         na->accumulate(
                             (na->val().array() > 0.0).select(g, 0.0).matrix());
                       });
}

inline Var exp(const Var& a) {
  Node* na = a.node();
  auto out = a.tape().push(a.value().array().exp().matrix(), na->needs_grad,
                           nullptr);
  if (na->needs_grad) {
    Node* no = out.node();
    no->backward = [na, no](const Matrix& g) {
      na->accumulate(g.cwiseProduct(no->value));
    };
  }
  return out;
}

// |a| with subgradient 0 at a == 0.
inline Var abs(const Var& a) {
  Node* na = a.node();
  return a.tape().push(a.value().cwiseAbs(), na->needs_grad,
                       [na](const Matrix& g) {
                         Matrix s = na->val().unaryExpr([](double x) {
                           return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
                         });
                         na->accumulate(g.cwiseProduct(s));
                       });
}

inline Var square(const Var& a) {
  Node* na = a.node();
  return a.tape().push(a.value().array().square().matrix(), na->needs_grad,
                       [na](const Matrix& g) {
                         na->accumulate(2.0 * g.cwiseProduct(na->val()));
                       });
}

inline Var pow(const Var& a, double e) {
  Node* na = a.node();
  return a.tape().push(a.value().array().pow(e).matrix(), na->needs_grad,
                       [na, e](const Matrix& g) {
                         na->accumulate(
                             (g.array() * e * na->val().array().pow(e - 1.0))
                                 .matrix());
                       });
}

// Row-wise softmax with max subtraction.
inline Matrix softmax_rows_value(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

inline Var softmax_rows(const Var& a) {
  Node* na = a.node();
  auto out = a.tape().push(softmax_rows_value(a.value()), na->needs_grad, nullptr);
  if (na->needs_grad) {
    Node* no = out.node();
    no->backward = [na, no](const Matrix& g) {
      const Matrix& y = no->value;
      Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
      Matrix d = g;
      d.colwise() -= dot;
      na->accumulate(d.cwiseProduct(y));
    };
  }
  return out;
}

// Per-row normalization over columns with affine gamma/beta (1 x cols).
inline Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta,
                           double eps = 1e-5) {
  detail::require(gamma.rows() == 1 && gamma.cols() == a.cols() &&
                      beta.rows() == 1 && beta.cols() == a.cols(),
                  "layer_norm_rows", "affine shape mismatch");
  const Matrix& x = a.value();
  const Index c = x.cols();
  Matrix xhat(x.rows(), c);
  Eigen::VectorXd inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  Node* na = a.node();
  Node* ng = gamma.node();
  Node* nb = beta.node();
  return a.tape().push(
      std::move(y), na->needs_grad || ng->needs_grad || nb->needs_grad,
      [na, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std),
       c](const Matrix& g) {
        if (ng->needs_grad) ng->accumulate(g.cwiseProduct(xhat).colwise().sum());
        if (nb->needs_grad) nb->accumulate(g.colwise().sum());
        if (na->needs_grad) {
          Matrix dxhat = g.array().rowwise() * ng->val().row(0).array();
          Matrix dx(g.rows(), c);
          for (Index r = 0; r < g.rows(); ++r) {
            const double m1 = dxhat.row(r).mean();
            const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            dx.row(r) = inv_std(r) *
                        (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
          na->accumulate(dx);
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  Node* na = a.node();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().push(std::move(out), na->needs_grad,
                       [na, r, c](const Matrix& g) {
                         na->accumulate(Matrix::Constant(r, c, g(0, 0)));
                       });
}

inline Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var row_sum(const Var& a) {
  Node* na = a.node();
  const Index c = a.cols();
  return a.tape().push(a.value().rowwise().sum(), na->needs_grad,
                       [na, c](const Matrix& g) {
                         na->accumulate(g.col(0).replicate(1, c));
                       });
}

inline Var row_mean(const Var& a) {
  return scale(row_sum(a), 1.0 / static_cast<double>(a.cols()));
}

// Row-wise inner product, rows x 1.
inline Var row_dot(const Var& a, const Var& b) {
  detail::same_shape(a, b, "row_dot");
  Node* na = a.node();
  Node* nb = b.node();
  Matrix out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return a.tape().push(std::move(out), na->needs_grad || nb->needs_grad,
                       [na, nb](const Matrix& g) {
                         if (na->needs_grad)
                           na->accumulate(nb->val().array().colwise() *
                                          g.col(0).array());
                         if (nb->needs_grad)
                           nb->accumulate(na->val().array().colwise() *
                                          g.col(0).array());
                       });
}

// a_ij * v_i for v of shape rows x 1.
inline Var scale_rows(const Var& a, const Var& v) {
  detail::require(v.cols() == 1 && v.rows() == a.rows(), "scale_rows",
                  detail::dims(a) + " by " + detail::dims(v));
  Node* na = a.node();
  Node* nv = v.node();
  Matrix out = a.value().array().colwise() * v.value().col(0).array();
  return a.tape().push(std::move(out), na->needs_grad || nv->needs_grad,
                       [na, nv](const Matrix& g) {
                         if (na->needs_grad)
                           na->accumulate(g.array().colwise() *
                                          nv->val().col(0).array());
                         if (nv->needs_grad)
                           nv->accumulate(g.cwiseProduct(na->val()).rowwise().sum());
                       });
}

// ---------------------------------------------------------------------------
// Structural

inline Var hcat(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "hcat", "no inputs");
  const Index r = parts.front().rows();
  Index total = 0;
  bool any = false;
  for (const auto& p : parts) {
    detail::require(p.rows() == r, "hcat", "row mismatch");
    total += p.cols();
    any = any || p.needs_grad();
  }
  Matrix out(r, total);
  std::vector<Node*> nodes;
  std::vector<Index> widths;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    nodes.push_back(p.node());
    widths.push_back(p.cols());
  }
  return parts.front().tape().push(
      std::move(out), any, [nodes, widths](const Matrix& g) {
        Index o = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i]->needs_grad) nodes[i]->accumulate(g.middleCols(o, widths[i]));
          o += widths[i];
        }
      });
}

inline Var hcat(const Var& a, const Var& b) { return hcat(std::vector<Var>{a, b}); }

inline Var vcat(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "vcat", "no inputs");
  const Index c = parts.front().cols();
  Index total = 0;
  bool any = false;
  for (const auto& p : parts) {
    detail::require(p.cols() == c, "vcat", "column mismatch");
    total += p.rows();
    any = any || p.needs_grad();
  }
  Matrix out(total, c);
  std::vector<Node*> nodes;
  std::vector<Index> heights;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    nodes.push_back(p.node());
    heights.push_back(p.rows());
  }
  return parts.front().tape().push(
      std::move(out), any, [nodes, heights](const Matrix& g) {
        Index o = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i]->needs_grad) nodes[i]->accumulate(g.middleRows(o, heights[i]));
          o += heights[i];
        }
      });
}

inline Var slice_rows(const Var& a, Index start, Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.rows(),
                  "slice_rows", "range out of bounds");
  Node* na = a.node();
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().push(a.value().middleRows(start, count), na->needs_grad,
                       [na, start, count, r, c](const Matrix& g) {
                         Matrix full = Matrix::Zero(r, c);
                         full.middleRows(start, count) = g;
                         na->accumulate(full);
                       });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
  detail::require(start >= 0 && count >= 0 && start + count <= a.cols(),
                  "slice_cols", "range out of bounds");
  Node* na = a.node();
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().push(a.value().middleCols(start, count), na->needs_grad,
                       [na, start, count, r, c](const Matrix& g) {
                         Matrix full = Matrix::Zero(r, c);
                         full.middleCols(start, count) = g;
                         na->accumulate(full);
                       });
}

inline Var col(const Var& a, Index j) { return slice_cols(a, j, 1); }

// Reshape with row-major element order (row r of the result continues where
// row r-1 stopped when reading the input row by row).
inline Var reshape(const Var& a, Index rows, Index cols) {
  detail::require(rows * cols == a.value().size(), "reshape",
                  detail::dims(a) + " -> " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  auto to = [](const Matrix& m, Index r, Index c) {
    RowMajorMatrix rm = m;
    return Matrix(Eigen::Map<RowMajorMatrix>(rm.data(), r, c));
  };
  Node* na = a.node();
  const Index r0 = a.rows();
  const Index c0 = a.cols();
  return a.tape().push(to(a.value(), rows, cols), na->needs_grad,
                       [na, r0, c0, to](const Matrix& g) {
                         na->accumulate(to(g, r0, c0));
                       });
}

// Stack `reps` copies of a vertically.
inline Var tile_rows(const Var& a, Index reps) {
  Node* na = a.node();
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape().push(a.value().replicate(reps, 1), na->needs_grad,
                       [na, r, c, reps](const Matrix& g) {
                         Matrix acc = Matrix::Zero(r, c);
                         for (Index k = 0; k < reps; ++k) acc += g.middleRows(k * r, r);
                         na->accumulate(acc);
                       });
}

// Repeat every row `reps` times in place: row r*reps + k of the result is
// row r of a.
inline Var repeat_rows(const Var& a, Index reps) {
  const Matrix& av = a.value();
  Matrix out(av.rows() * reps, av.cols());
  for (Index r = 0; r < av.rows(); ++r) {
    out.middleRows(r * reps, reps) = av.row(r).replicate(reps, 1);
  }
  Node* na = a.node();
  return a.tape().push(std::move(out), na->needs_grad,
                       [na, reps](const Matrix& g) {
                         Matrix d(g.rows() / reps, g.cols());
                         for (Index r = 0; r < d.rows(); ++r) {
                           d.row(r) = g.middleRows(r * reps, reps).colwise().sum();
                         }
                         na->accumulate(d);
                       });
}

// Inverted dropout with a mask drawn from rng; rate 0 is a no-op.
inline Var dropout(const Var& a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - rate);
  for (Index c = 0; c < mask.cols(); ++c) {
    for (Index r = 0; r < mask.rows(); ++r) mask(r, c) = keep(rng) ? s : 0.0;
  }
  return mul(a, a.tape().constant(std::move(mask)));
}

// Interleave C matrices of shape [T x M] into [T*M x C] with row t*M + j and
// column c holding channels[c](t, j).
inline Var stack_channels(const std::vector<Var>& channels) {
  detail::require(!channels.empty(), "stack_channels", "no inputs");
  const Index t_len = channels.front().rows();
  const Index m = channels.front().cols();
  const Index c = static_cast<Index>(channels.size());
  Matrix out(t_len * m, c);
  bool any = false;
  std::vector<Node*> nodes;
  for (Index k = 0; k < c; ++k) {
    const auto& ch = channels[static_cast<std::size_t>(k)];
    detail::require(ch.rows() == t_len && ch.cols() == m, "stack_channels",
                    "channel shape mismatch");
    any = any || ch.needs_grad();
    nodes.push_back(ch.node());
    for (Index t = 0; t < t_len; ++t) {
      out.block(t * m, k, m, 1) = ch.value().row(t).transpose();
    }
  }
  return channels.front().tape().push(
      std::move(out), any, [nodes, t_len, m](const Matrix& g) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          if (!nodes[k]->needs_grad) continue;
          Matrix d(t_len, m);
          for (Index t = 0; t < t_len; ++t) {
            d.row(t) = g.block(t * m, static_cast<Index>(k), m, 1).transpose();
          }
          nodes[k]->accumulate(d);
        }
      });
}

// ---------------------------------------------------------------------------
// Block-diagonal graph operations. A batch of B graphs with N nodes each is
// stored as [B*N x K] node features and [B*N x N] per-graph square matrices
// (block b occupies rows b*N .. b*N+N-1).

// Per block: E_b * E_b^T.
inline Var block_gram(const Var& e, Index n) {
  detail::require(e.rows() % n == 0, "block_gram", "rows not a multiple of N");
  const Index blocks = e.rows() / n;
  const Matrix& ev = e.value();
  Matrix out(e.rows(), n);
  for (Index b = 0; b < blocks; ++b) {
    const auto eb = ev.middleRows(b * n, n);
    out.middleRows(b * n, n).noalias() = eb * eb.transpose();
  }
  Node* ne = e.node();
  return e.tape().push(std::move(out), ne->needs_grad,
                       [ne, n, blocks](const Matrix& g) {
                         const Matrix& ev = ne->val();
                         Matrix d(ev.rows(), ev.cols());
                         for (Index b = 0; b < blocks; ++b) {
                           const auto gb = g.middleRows(b * n, n);
                           d.middleRows(b * n, n).noalias() =
                               (gb + gb.transpose()) * ev.middleRows(b * n, n);
                         }
                         ne->accumulate(d);
                       });
}

// Per block: diag(s_b) * R_b * diag(s_b), s of shape [B*N x 1].
inline Var block_sym_scale(const Var& r, const Var& s, Index n) {
  detail::require(r.cols() == n && r.rows() % n == 0 && s.rows() == r.rows() &&
                      s.cols() == 1,
                  "block_sym_scale", "shape mismatch");
  const Index blocks = r.rows() / n;
  const Matrix& rv = r.value();
  const Matrix& sv = s.value();
  Matrix out(rv.rows(), n);
  for (Index b = 0; b < blocks; ++b) {
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < n; ++j) {
        out(b * n + i, j) = sv(b * n + i, 0) * rv(b * n + i, j) * sv(b * n + j, 0);
      }
    }
  }
  Node* nr = r.node();
  Node* ns = s.node();
  return r.tape().push(
      std::move(out), nr->needs_grad || ns->needs_grad,
      [nr, ns, n, blocks](const Matrix& g) {
        const Matrix& rv = nr->val();
        const Matrix& sv = ns->val();
        Matrix dr(rv.rows(), n);
        Matrix ds = Matrix::Zero(sv.rows(), 1);
        for (Index b = 0; b < blocks; ++b) {
          for (Index i = 0; i < n; ++i) {
            const Index ri = b * n + i;
            for (Index j = 0; j < n; ++j) {
              const Index rj = b * n + j;
              dr(ri, j) = g(ri, j) * sv(ri, 0) * sv(rj, 0);
              const double gr = g(ri, j) * rv(ri, j);
              ds(ri, 0) += gr * sv(rj, 0);
              ds(rj, 0) += gr * sv(ri, 0);
            }
          }
        }
        nr->accumulate(dr);
        ns->accumulate(ds);
      });
}

inline Var add_block_identity(const Var& a, Index n) {
  detail::require(a.cols() == n && a.rows() % n == 0, "add_block_identity",
                  "shape mismatch");
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) out(r, r % n) += 1.0;
  Node* na = a.node();
  return a.tape().push(std::move(out), na->needs_grad,
                       [na](const Matrix& g) { na->accumulate(g); });
}

// Per block: G_b * X_b.
inline Var block_matmul(const Var& gk, const Var& x, Index n) {
  detail::require(gk.cols() == n && gk.rows() == x.rows() && x.rows() % n == 0,
                  "block_matmul", detail::dims(gk) + " * " + detail::dims(x));
  const Index blocks = x.rows() / n;
  Matrix out(x.rows(), x.cols());
  for (Index b = 0; b < blocks; ++b) {
    out.middleRows(b * n, n).noalias() =
        gk.value().middleRows(b * n, n) * x.value().middleRows(b * n, n);
  }
  Node* ng = gk.node();
  Node* nx = x.node();
  return x.tape().push(
      std::move(out), ng->needs_grad || nx->needs_grad,
      [ng, nx, n, blocks](const Matrix& g) {
        if (ng->needs_grad) {
          Matrix d(ng->val().rows(), n);
          for (Index b = 0; b < blocks; ++b) {
            d.middleRows(b * n, n).noalias() =
                g.middleRows(b * n, n) * nx->val().middleRows(b * n, n).transpose();
          }
          ng->accumulate(d);
        }
        if (nx->needs_grad) {
          Matrix d(nx->val().rows(), nx->val().cols());
          for (Index b = 0; b < blocks; ++b) {
            d.middleRows(b * n, n).noalias() =
                ng->val().middleRows(b * n, n).transpose() * g.middleRows(b * n, n);
          }
          nx->accumulate(d);
        }
      });
}

// ---------------------------------------------------------------------------
// Sequence operations

// Column-wise dilated causal convolution. x is [T x M]; column j is filtered
// with kernel column (j % K) of w [k x K] and offset by bias(0, j % K):
//   out(t, j) = sum_i x(t - d*i, j) * w(i, j % K) + bias(j % K),  x(<0) = 0.
inline Var dilated_causal_conv_cols(const Var& x, const Var& w, const Var& bias,
                                    Index dilation) {
  const Index kernels = w.cols();
  detail::require(dilation >= 1, "dilated_causal_conv_cols", "dilation < 1");
  detail::require(x.cols() % kernels == 0 && bias.rows() == 1 &&
                      bias.cols() == kernels,
                  "dilated_causal_conv_cols", "kernel/bias shape mismatch");
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  const Index t_len = xv.rows();
  const Index taps = wv.rows();
  Matrix out(t_len, xv.cols());
  for (Index j = 0; j < xv.cols(); ++j) {
    const Index kc = j % kernels;
    for (Index t = 0; t < t_len; ++t) {
      double acc = bias.value()(0, kc);
      for (Index i = 0; i < taps; ++i) {
        const Index src = t - dilation * i;
        if (src < 0) break;
        acc += xv(src, j) * wv(i, kc);
      }
      out(t, j) = acc;
    }
  }
  Node* nx = x.node();
  Node* nw = w.node();
  Node* nb = bias.node();
  return x.tape().push(
      std::move(out), nx->needs_grad || nw->needs_grad || nb->needs_grad,
      [nx, nw, nb, dilation, kernels](const Matrix& g) {
        const Matrix& xv = nx->val();
        const Matrix& wv = nw->val();
        const Index t_len = xv.rows();
        const Index taps = wv.rows();
        Matrix dx = Matrix::Zero(xv.rows(), xv.cols());
        Matrix dw = Matrix::Zero(wv.rows(), wv.cols());
        Matrix db = Matrix::Zero(1, kernels);
        for (Index j = 0; j < xv.cols(); ++j) {
          const Index kc = j % kernels;
          for (Index t = 0; t < t_len; ++t) {
            const double gt = g(t, j);
            db(0, kc) += gt;
            for (Index i = 0; i < taps; ++i) {
              const Index src = t - dilation * i;
              if (src < 0) break;
              dx(src, j) += gt * wv(i, kc);
              dw(i, kc) += gt * xv(src, j);
            }
          }
        }
        nx->accumulate(dx);
        nw->accumulate(dw);
        nb->accumulate(db);
      });
}

// Weight normalization per kernel column: w_c = scale_c * v_c / ||v_c||.
inline Var weight_norm_cols(const Var& v, const Var& scale_row,
                            double eps = 1e-12) {
  detail::require(scale_row.rows() == 1 && scale_row.cols() == v.cols(),
                  "weight_norm_cols", "scale shape mismatch");
  const Matrix& vv = v.value();
  Eigen::RowVectorXd norms =
      (vv.colwise().squaredNorm().array() + eps).sqrt().matrix();
  Matrix out = vv;
  for (Index c = 0; c < vv.cols(); ++c) {
    out.col(c) *= scale_row.value()(0, c) / norms(c);
  }
  Node* nv = v.node();
  Node* ns = scale_row.node();
  return v.tape().push(std::move(out), nv->needs_grad || ns->needs_grad,
                       [nv, ns, norms](const Matrix& g) {
                         const Matrix& vv = nv->val();
                         const Matrix& sv = ns->val();
                         Matrix dv(vv.rows(), vv.cols());
                         Matrix dsc(1, vv.cols());
                         for (Index c = 0; c < vv.cols(); ++c) {
                           const double nrm = norms(c);
                           const double vg = vv.col(c).dot(g.col(c));
                           dsc(0, c) = vg / nrm;
                           dv.col(c) = sv(0, c) / nrm *
                                       (g.col(c) - vv.col(c) * (vg / (nrm * nrm)));
                         }
                         nv->accumulate(dv);
                         ns->accumulate(dsc);
                       });
}

// Scaled dot-product attention over independent sequences. Rows of q, k, v are
// laid out as position-major: row t*nseq + s belongs to sequence s at
// position t. Each sequence attends over its own `positions` rows. When
// `weights_out` is non-null it receives one [positions x positions] softmax
// matrix per sequence.
inline Var sequence_attention(const Var& q, const Var& k, const Var& v,
                              Index nseq,
                              std::vector<Matrix>* weights_out = nullptr) {
  detail::same_shape(q, k, "sequence_attention");
  detail::require(v.rows() == q.rows() && q.rows() % nseq == 0,
                  "sequence_attention", "layout mismatch");
  const Index positions = q.rows() / nseq;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  auto gather = [positions, nseq](const Matrix& m, Index s) {
    Matrix out(positions, m.cols());
    for (Index t = 0; t < positions; ++t) out.row(t) = m.row(t * nseq + s);
    return out;
  };
  auto scatter = [positions, nseq](Matrix& m, Index s, const Matrix& part) {
    for (Index t = 0; t < positions; ++t) m.row(t * nseq + s) += part.row(t);
  };
  std::vector<Matrix> attn(static_cast<std::size_t>(nseq));
  Matrix out = Matrix::Zero(v.rows(), v.cols());
  for (Index s = 0; s < nseq; ++s) {
    Matrix qs = gather(q.value(), s);
    Matrix ks = gather(k.value(), s);
    Matrix vs = gather(v.value(), s);
    Matrix a = softmax_rows_value((qs * ks.transpose()) * inv_sqrt_d);
    scatter(out, s, a * vs);
    attn[static_cast<std::size_t>(s)] = std::move(a);
  }
  if (weights_out != nullptr) *weights_out = attn;
  Node* nq = q.node();
  Node* nk = k.node();
  Node* nv = v.node();
  return q.tape().push(
      std::move(out), nq->needs_grad || nk->needs_grad || nv->needs_grad,
      [nq, nk, nv, nseq, inv_sqrt_d, gather, scatter,
       attn = std::move(attn)](const Matrix& g) {
        Matrix dq = Matrix::Zero(nq->val().rows(), nq->val().cols());
        Matrix dk = Matrix::Zero(nk->val().rows(), nk->val().cols());
        Matrix dv = Matrix::Zero(nv->val().rows(), nv->val().cols());
        for (Index s = 0; s < nseq; ++s) {
          const Matrix& a = attn[static_cast<std::size_t>(s)];
          Matrix gs = gather(g, s);
          Matrix vs = gather(nv->val(), s);
          Matrix da = gs * vs.transpose();
          Eigen::VectorXd dot = da.cwiseProduct(a).rowwise().sum();
          da.colwise() -= dot;
          Matrix dscore = a.cwiseProduct(da) * inv_sqrt_d;
          scatter(dq, s, dscore * gather(nk->val(), s));
          scatter(dk, s, dscore.transpose() * gather(nq->val(), s));
          scatter(dv, s, a.transpose() * gs);
        }
        nq->accumulate(dq);
        nk->accumulate(dk);
        nv->accumulate(dv);
      });
}

}  // namespace mmst::ag
