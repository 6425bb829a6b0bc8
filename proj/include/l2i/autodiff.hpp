#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix. Sequences of tokens or pixels are rows; a batch
// of B images of H x W pixels with C channels is a (B*H*W) x C matrix. Ops
// only record backward closures while a Tape is active on the current thread
// and at least one input requires a gradient, so inference pays nothing.

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "l2i/errors.hpp"

namespace l2i::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool requires_grad = false;
  std::function<void()> backward;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }

  void zero_grad() { grad.resize(0, 0); }
};

template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Matrix<Scalar>& value() const { return node_->value; }
  Matrix<Scalar>& mutable_value() { return node_->value; }
  const Matrix<Scalar>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool defined() const { return static_cast<bool>(node_); }

  Node<Scalar>* node() const { return node_.get(); }
  const std::shared_ptr<Node<Scalar>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

template <typename Scalar>
Var<Scalar> constant(Matrix<Scalar> value) {
  return Var<Scalar>(std::move(value), false);
}

/// Records differentiable ops issued on this thread while alive.
template <typename Scalar>
class Tape {
 public:
  Tape() : previous_(current()) { current() = this; }
  ~Tape() { current() = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& current() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

  void record(std::shared_ptr<Node<Scalar>> node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and propagates to every leaf
  /// that requires a gradient. Recorded nodes are released afterwards.
  void backward(const Var<Scalar>& root) {
    if (root.rows() != 1 || root.cols() != 1) throw Error(Errc::ShapeMismatch, "backward needs a scalar root");
    if (!root.requires_grad()) {
      nodes_.clear();
      return;
    }
    root.node()->accumulate(Matrix<Scalar>::Ones(1, 1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<Scalar>& n = **it;
      if (n.grad.size() != 0 && n.backward) n.backward();
    }
    nodes_.clear();
  }

  void clear() { nodes_.clear(); }

 private:
  Tape* previous_;
  std::vector<std::shared_ptr<Node<Scalar>>> nodes_;
};

namespace detail {

template <typename Scalar>
bool any_requires_grad(std::initializer_list<const Var<Scalar>*> inputs) {
  for (const Var<Scalar>* v : inputs) {
    if (v->requires_grad()) return true;
  }
  return false;
}

/// Wraps an op result. `make_backward(out_node)` must return a callable that
/// reads out_node->grad and accumulates into the inputs.
template <typename Scalar, typename MakeBackward>
Var<Scalar> result(Matrix<Scalar>&& value, bool needs_grad, MakeBackward&& make_backward) {
  Var<Scalar> out(std::move(value), false);
  Tape<Scalar>* tape = Tape<Scalar>::current();
  if (tape && needs_grad) {
    Node<Scalar>* n = out.node();
    n->requires_grad = true;
    n->backward = make_backward(n);
    tape->record(out.shared());
  }
  return out;
}

inline void check(bool ok, Errc code, const char* what) {
  if (!ok) throw Error(code, what);
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.cols() == b.rows(), Errc::ShapeMismatch, "matmul inner dimensions differ");
  Matrix<Scalar> v(a.rows(), b.cols());
  v.noalias() = a.value() * b.value();
  return detail::result<Scalar>(std::move(v), detail::any_requires_grad({&a, &b}), [a, b](Node<Scalar>* n) {
    return [a, b, n] {
      if (a.requires_grad()) a.node()->accumulate(n->grad * b.value().transpose());
      if (b.requires_grad()) b.node()->accumulate(a.value().transpose() * n->grad);
    };
  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.cols() == b.cols(), Errc::ShapeMismatch, "matmul_nt widths differ");
  Matrix<Scalar> v(a.rows(), b.rows());
  v.noalias() = a.value() * b.value().transpose();
  return detail::result<Scalar>(std::move(v), detail::any_requires_grad({&a, &b}), [a, b](Node<Scalar>* n) {
    return [a, b, n] {
      if (a.requires_grad()) a.node()->accumulate(n->grad * b.value());
      if (b.requires_grad()) b.node()->accumulate(n->grad.transpose() * a.value());
    };
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), Errc::ShapeMismatch, "add shapes differ");
  return detail::result<Scalar>(a.value() + b.value(), detail::any_requires_grad({&a, &b}), [a, b](Node<Scalar>* n) {
    return [a, b, n] {
      if (a.requires_grad()) a.node()->accumulate(n->grad);
      if (b.requires_grad()) b.node()->accumulate(n->grad);
    };
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), Errc::ShapeMismatch, "sub shapes differ");
  return detail::result<Scalar>(a.value() - b.value(), detail::any_requires_grad({&a, &b}), [a, b](Node<Scalar>* n) {
    return [a, b, n] {
      if (a.requires_grad()) a.node()->accumulate(n->grad);
      if (b.requires_grad()) b.node()->accumulate(-n->grad);
    };
  });
}

/// Elementwise product.
template <typename Scalar>
Var<Scalar> cmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), Errc::ShapeMismatch, "cmul shapes differ");
  return detail::result<Scalar>(a.value().cwiseProduct(b.value()), detail::any_requires_grad({&a, &b}),
                                [a, b](Node<Scalar>* n) {
                                  return [a, b, n] {
                                    if (a.requires_grad()) a.node()->accumulate(n->grad.cwiseProduct(b.value()));
                                    if (b.requires_grad()) b.node()->accumulate(n->grad.cwiseProduct(a.value()));
                                  };
                                });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar c) {
  return detail::result<Scalar>(a.value() * c, a.requires_grad(), [a, c](Node<Scalar>* n) {
    return [a, c, n] { a.node()->accumulate(n->grad * c); };
  });
}

/// s * a for a 1x1 variable s.
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& a, const Var<Scalar>& s) {
  detail::check(s.rows() == 1 && s.cols() == 1, Errc::ShapeMismatch, "scale_by needs a 1x1 factor");
  const Scalar f = s.value()(0, 0);
  return detail::result<Scalar>(a.value() * f, detail::any_requires_grad({&a, &s}), [a, s](Node<Scalar>* n) {
    return [a, s, n] {
      if (a.requires_grad()) a.node()->accumulate(n->grad * s.value()(0, 0));
      if (s.requires_grad()) {
        Matrix<Scalar> g(1, 1);
        g(0, 0) = n->grad.cwiseProduct(a.value()).sum();
        s.node()->accumulate(g);
      }
    };
  });
}

/// a + row, with a 1 x C row broadcast over every row of a.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  detail::check(row.rows() == 1 && row.cols() == a.cols(), Errc::ShapeMismatch, "add_row needs a 1 x C row");
  Matrix<Scalar> v = a.value().rowwise() + row.value().row(0);
  return detail::result<Scalar>(std::move(v), detail::any_requires_grad({&a, &row}), [a, row](Node<Scalar>* n) {
    return [a, row, n] {
      if (a.requires_grad()) a.node()->accumulate(n->grad);
      if (row.requires_grad()) row.node()->accumulate(n->grad.colwise().sum());
    };
  });
}

/// a (blocks*block_rows x C) plus per-block row t (blocks x C).
template <typename Scalar>
Var<Scalar> add_block_rows(const Var<Scalar>& a, const Var<Scalar>& t) {
  detail::check(t.cols() == a.cols() && t.rows() > 0 && a.rows() % t.rows() == 0, Errc::ShapeMismatch,
                "add_block_rows shape mismatch");
  const Eigen::Index per = a.rows() / t.rows();
  Matrix<Scalar> v = a.value();
  for (Eigen::Index b = 0; b < t.rows(); ++b) v.middleRows(b * per, per).rowwise() += t.value().row(b);
  return detail::result<Scalar>(std::move(v), detail::any_requires_grad({&a, &t}), [a, t, per](Node<Scalar>* n) {
    return [a, t, per, n] {
      if (a.requires_grad()) a.node()->accumulate(n->grad);
      if (t.requires_grad()) {
        Matrix<Scalar> g(t.rows(), t.cols());
        for (Eigen::Index b = 0; b < t.rows(); ++b) g.row(b) = n->grad.middleRows(b * per, per).colwise().sum();
        t.node()->accumulate(g);
      }
    };
  });
}

/// Scales row r of a by the constant weights(r).
template <typename Scalar>
Var<Scalar> mul_rows(const Var<Scalar>& a, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& weights) {
  detail::check(weights.size() == a.rows(), Errc::ShapeMismatch, "mul_rows weight count differs from rows");
  Matrix<Scalar> v = weights.asDiagonal() * a.value();
  return detail::result<Scalar>(std::move(v), a.requires_grad(), [a, weights](Node<Scalar>* n) {
    return [a, weights, n] { a.node()->accumulate(weights.asDiagonal() * n->grad); };
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  Matrix<Scalar> v = a.value().array().tanh().matrix();
  return detail::result<Scalar>(std::move(v), a.requires_grad(), [a](Node<Scalar>* n) {
    return [a, n] {
      a.node()->accumulate((n->grad.array() * (Scalar(1) - n->value.array().square())).matrix());
    };
  });
}

/// x * sigmoid(x)
template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& a) {
  Matrix<Scalar> sig = (Scalar(1) / (Scalar(1) + (-a.value().array()).exp())).matrix();
  Matrix<Scalar> v = a.value().cwiseProduct(sig);
  return detail::result<Scalar>(std::move(v), a.requires_grad(), [a, sig = std::move(sig)](Node<Scalar>* n) mutable {
    return [a, sig = std::move(sig), n] {
      auto s = sig.array();
      a.node()->accumulate((n->grad.array() * (s + a.value().array() * s * (Scalar(1) - s))).matrix());
    };
  });
}

/// Row-wise softmax of a + bias, where bias is an optional constant 1 x C row
/// (use -inf style large negatives to mask keys).
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a, const Matrix<Scalar>* bias = nullptr) {
  Matrix<Scalar> v = a.value();
  if (bias) v.rowwise() += bias->row(0);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    auto row = v.row(r);
    const Scalar m = row.maxCoeff();
    row = (row.array() - m).exp().matrix();
    row /= row.sum();
  }
  return detail::result<Scalar>(std::move(v), a.requires_grad(), [a](Node<Scalar>* n) {
    return [a, n] {
      const Matrix<Scalar>& y = n->value;
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = n->grad.cwiseProduct(y).rowwise().sum();
      Matrix<Scalar> g = y.cwiseProduct(n->grad - dots.replicate(1, y.cols()));
      a.node()->accumulate(g);
    };
  });
}

template <typename Scalar>
Var<Scalar> vconcat(const std::vector<Var<Scalar>>& parts) {
  detail::check(!parts.empty(), Errc::ShapeMismatch, "vconcat of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool needs = false;
  for (const auto& p : parts) {
    detail::check(p.cols() == cols, Errc::ShapeMismatch, "vconcat widths differ");
    rows += p.rows();
    needs = needs || p.requires_grad();
  }
  Matrix<Scalar> v(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return detail::result<Scalar>(std::move(v), needs, [parts](Node<Scalar>* n) {
    return [parts, n] {
      Eigen::Index o = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) p.node()->accumulate(n->grad.middleRows(o, p.rows()));
        o += p.rows();
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> hconcat(const std::vector<Var<Scalar>>& parts) {
  detail::check(!parts.empty(), Errc::ShapeMismatch, "hconcat of nothing");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  bool needs = false;
  for (const auto& p : parts) {
    detail::check(p.rows() == rows, Errc::ShapeMismatch, "hconcat heights differ");
    cols += p.cols();
    needs = needs || p.requires_grad();
  }
  Matrix<Scalar> v(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return detail::result<Scalar>(std::move(v), needs, [parts](Node<Scalar>* n) {
    return [parts, n] {
      Eigen::Index o = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) p.node()->accumulate(n->grad.middleCols(o, p.cols()));
        o += p.cols();
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  detail::check(start >= 0 && count >= 0 && start + count <= a.rows(), Errc::ShapeMismatch, "row slice out of range");
  Matrix<Scalar> v = a.value().middleRows(start, count);
  return detail::result<Scalar>(std::move(v), a.requires_grad(), [a, start, count](Node<Scalar>* n) {
    return [a, start, count, n] {
      Matrix<Scalar> g = Matrix<Scalar>::Zero(a.rows(), a.cols());
      g.middleRows(start, count) = n->grad;
      a.node()->accumulate(g);
    };
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  detail::check(start >= 0 && count >= 0 && start + count <= a.cols(), Errc::ShapeMismatch, "col slice out of range");
  Matrix<Scalar> v = a.value().middleCols(start, count);
  return detail::result<Scalar>(std::move(v), a.requires_grad(), [a, start, count](Node<Scalar>* n) {
    return [a, start, count, n] {
      Matrix<Scalar> g = Matrix<Scalar>::Zero(a.rows(), a.cols());
      g.middleCols(start, count) = n->grad;
      a.node()->accumulate(g);
    };
  });
}

/// Rows of `table` picked by ids (embedding lookup).
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& table, const std::vector<int>& ids) {
  Matrix<Scalar> v(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::check(ids[i] >= 0 && ids[i] < table.rows(), Errc::ShapeMismatch, "gather index out of range");
    v.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  return detail::result<Scalar>(std::move(v), table.requires_grad(), [table, ids](Node<Scalar>* n) {
    return [table, ids, n] {
      Matrix<Scalar> g = Matrix<Scalar>::Zero(table.rows(), table.cols());
      for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += n->grad.row(static_cast<Eigen::Index>(i));
      table.node()->accumulate(g);
    };
  });
}

/// Per-row normalisation with learned 1 x C gain and bias.
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gain, const Var<Scalar>& bias, Scalar eps = Scalar(1e-5)) {
  const Eigen::Index c = x.cols();
  detail::check(gain.cols() == c && bias.cols() == c, Errc::ShapeMismatch, "layer_norm parameter width");
  Matrix<Scalar> xhat(x.rows(), c);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.value().row(r).mean();
    const Scalar var = (x.value().row(r).array() - mean).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mean) * inv_std(r);
  }
  Matrix<Scalar> v = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  v.rowwise() += bias.value().row(0);
  const bool needs = detail::any_requires_grad({&x, &gain, &bias});
  return detail::result<Scalar>(std::move(v), needs, [x, gain, bias, xhat = std::move(xhat), inv_std](Node<Scalar>* n) mutable {
    return [x, gain, bias, xhat = std::move(xhat), inv_std, n] {
      const Matrix<Scalar>& g = n->grad;
      if (gain.requires_grad()) gain.node()->accumulate(g.cwiseProduct(xhat).colwise().sum());
      if (bias.requires_grad()) bias.node()->accumulate(g.colwise().sum());
      if (x.requires_grad()) {
        Matrix<Scalar> gx_hat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
        const Scalar inv_c = Scalar(1) / static_cast<Scalar>(xhat.cols());
        Matrix<Scalar> gx(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          const Scalar m1 = gx_hat.row(r).sum() * inv_c;
          const Scalar m2 = gx_hat.row(r).dot(xhat.row(r)) * inv_c;
          gx.row(r) = inv_std(r) * (gx_hat.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
        }
        x.node()->accumulate(gx);
      }
    };
  });
}

/// Group normalisation of a (blocks*rows_per_block) x C activation. Each block
/// (one image) and each of `groups` contiguous channel groups is normalised
/// over all its rows, then a per-channel gain/bias is applied.
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, Eigen::Index blocks, int groups, const Var<Scalar>& gain,
                       const Var<Scalar>& bias, Scalar eps = Scalar(1e-5)) {
  const Eigen::Index c = x.cols();
  detail::check(blocks > 0 && x.rows() % blocks == 0 && groups > 0 && c % groups == 0, Errc::ShapeMismatch,
                "group_norm shape");
  detail::check(gain.cols() == c && bias.cols() == c, Errc::ShapeMismatch, "group_norm parameter width");
  const Eigen::Index per = x.rows() / blocks;
  const Eigen::Index gc = c / groups;
  Matrix<Scalar> xhat(x.rows(), c);
  Matrix<Scalar> inv_std(blocks, groups);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    for (int g = 0; g < groups; ++g) {
      auto blk = x.value().block(b * per, g * gc, per, gc);
      const Scalar mean = blk.mean();
      const Scalar var = (blk.array() - mean).square().mean();
      const Scalar is = Scalar(1) / std::sqrt(var + eps);
      inv_std(b, g) = is;
      xhat.block(b * per, g * gc, per, gc) = ((blk.array() - mean) * is).matrix();
    }
  }
  Matrix<Scalar> v = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  v.rowwise() += bias.value().row(0);
  const bool needs = detail::any_requires_grad({&x, &gain, &bias});
  return detail::result<Scalar>(
      std::move(v), needs, [x, gain, bias, xhat = std::move(xhat), inv_std, blocks, groups, per, gc](Node<Scalar>* n) mutable {
        return [x, gain, bias, xhat = std::move(xhat), inv_std, blocks, groups, per, gc, n] {
          const Matrix<Scalar>& g = n->grad;
          if (gain.requires_grad()) gain.node()->accumulate(g.cwiseProduct(xhat).colwise().sum());
          if (bias.requires_grad()) bias.node()->accumulate(g.colwise().sum());
          if (!x.requires_grad()) return;
          Matrix<Scalar> gx_hat = (g.array().rowwise() * gain.value().row(0).array()).matrix();
          Matrix<Scalar> gx(x.rows(), x.cols());
          const Scalar inv_n = Scalar(1) / static_cast<Scalar>(per * gc);
          for (Eigen::Index b = 0; b < blocks; ++b) {
            for (int gr = 0; gr < groups; ++gr) {
              auto gh = gx_hat.block(b * per, gr * gc, per, gc);
              auto xh = xhat.block(b * per, gr * gc, per, gc);
              const Scalar m1 = gh.sum() * inv_n;
              const Scalar m2 = gh.cwiseProduct(xh).sum() * inv_n;
              gx.block(b * per, gr * gc, per, gc) = (inv_std(b, gr) * (gh.array() - m1 - xh.array() * m2)).matrix();
            }
          }
          x.node()->accumulate(gx);
        };
      });
}

/// Geometry of a batched NHWC activation laid out as (B*H*W) x C.
struct ImageShape {
  Eigen::Index batch = 1;
  int height = 1;
  int width = 1;

  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }
  Eigen::Index rows() const { return batch * pixels(); }
};

namespace detail {

// Patch matrix with one row per output pixel and k*k*C columns ordered
// (ky, kx, channel).
template <typename Scalar>
Matrix<Scalar> im2col(const Matrix<Scalar>& x, const ImageShape& s, int k, int stride, int pad, int out_h, int out_w) {
  const Eigen::Index c = x.cols();
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(s.batch * out_h * out_w, k * k * c);
  for (Eigen::Index b = 0; b < s.batch; ++b) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Eigen::Index row = (b * out_h + oy) * out_w + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= s.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= s.width) continue;
            cols.block(row, (ky * k + kx) * c, 1, c) = x.row((b * s.height + iy) * s.width + ix);
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im_add(const Matrix<Scalar>& cols, const ImageShape& s, int k, int stride, int pad, int out_h, int out_w,
                Matrix<Scalar>& gx) {
  const Eigen::Index c = gx.cols();
  for (Eigen::Index b = 0; b < s.batch; ++b) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const Eigen::Index row = (b * out_h + oy) * out_w + ox;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= s.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= s.width) continue;
            gx.row((b * s.height + iy) * s.width + ix) += cols.block(row, (ky * k + kx) * c, 1, c);
          }
        }
      }
    }
  }
}

}  // namespace detail

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// 2-D convolution. weight is (k*k*C_in) x C_out with rows ordered
/// (ky, kx, c_in); bias is 1 x C_out.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const ImageShape& s, const Var<Scalar>& weight, const Var<Scalar>& bias,
                   int k, int stride, int pad) {
  detail::check(x.rows() == s.rows(), Errc::ShapeMismatch, "conv2d input rows differ from image shape");
  detail::check(weight.rows() == k * k * x.cols() && bias.cols() == weight.cols(), Errc::ShapeMismatch,
                "conv2d weight shape");
  const int out_h = conv_out_size(s.height, k, stride, pad);
  const int out_w = conv_out_size(s.width, k, stride, pad);
  const bool pointwise = k == 1 && stride == 1 && pad == 0;
  Matrix<Scalar> v(s.batch * out_h * out_w, weight.cols());
  if (pointwise) {
    v.noalias() = x.value() * weight.value();
  } else {
    v.noalias() = detail::im2col(x.value(), s, k, stride, pad, out_h, out_w) * weight.value();
  }
  v.rowwise() += bias.value().row(0);
  const bool needs = detail::any_requires_grad({&x, &weight, &bias});
  // The patch matrix is rebuilt in backward rather than kept alive.
  return detail::result<Scalar>(std::move(v), needs, [=](Node<Scalar>* n) {
    return [=] {
      const Matrix<Scalar>& g = n->grad;
      if (weight.requires_grad()) {
        Matrix<Scalar> gw(weight.rows(), weight.cols());
        if (pointwise) {
          gw.noalias() = x.value().transpose() * g;
        } else {
          gw.noalias() = detail::im2col(x.value(), s, k, stride, pad, out_h, out_w).transpose() * g;
        }
        weight.node()->accumulate(gw);
      }
      if (bias.requires_grad()) bias.node()->accumulate(g.colwise().sum());
      if (x.requires_grad()) {
        Matrix<Scalar> gcols(g.rows(), weight.rows());
        gcols.noalias() = g * weight.value().transpose();
        if (pointwise) {
          x.node()->accumulate(gcols);
        } else {
          Matrix<Scalar> gx = Matrix<Scalar>::Zero(x.rows(), x.cols());
          detail::col2im_add(gcols, s, k, stride, pad, out_h, out_w, gx);
          x.node()->accumulate(gx);
        }
      }
    };
  });
}

/// Nearest-neighbour 2x upsampling.
template <typename Scalar>
Var<Scalar> upsample2x(const Var<Scalar>& x, const ImageShape& s) {
  detail::check(x.rows() == s.rows(), Errc::ShapeMismatch, "upsample input rows differ from image shape");
  const int oh = s.height * 2;
  const int ow = s.width * 2;
  Matrix<Scalar> v(s.batch * oh * ow, x.cols());
  for (Eigen::Index b = 0; b < s.batch; ++b) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        v.row((b * oh + y) * ow + xx) = x.value().row((b * s.height + y / 2) * s.width + xx / 2);
      }
    }
  }
  return detail::result<Scalar>(std::move(v), x.requires_grad(), [x, s, oh, ow](Node<Scalar>* n) {
    return [x, s, oh, ow, n] {
      Matrix<Scalar> g = Matrix<Scalar>::Zero(x.rows(), x.cols());
      for (Eigen::Index b = 0; b < s.batch; ++b) {
        for (int y = 0; y < oh; ++y) {
          for (int xx = 0; xx < ow; ++xx) {
            g.row((b * s.height + y / 2) * s.width + xx / 2) += n->grad.row((b * oh + y) * ow + xx);
          }
        }
      }
      x.node()->accumulate(g);
    };
  });
}

/// Sum of all entries as a 1x1.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> v(1, 1);
  v(0, 0) = a.value().sum();
  return detail::result<Scalar>(std::move(v), a.requires_grad(), [a](Node<Scalar>* n) {
    return [a, n] { a.node()->accumulate(Matrix<Scalar>::Constant(a.rows(), a.cols(), n->grad(0, 0))); };
  });
}

/// Mean squared difference against a constant target, as a 1x1.
template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& pred, const Matrix<Scalar>& target) {
  detail::check(pred.rows() == target.rows() && pred.cols() == target.cols(), Errc::ShapeMismatch, "mse shapes differ");
  Matrix<Scalar> diff = pred.value() - target;
  const Scalar count = static_cast<Scalar>(diff.size());
  Matrix<Scalar> v(1, 1);
  v(0, 0) = diff.squaredNorm() / count;
  return detail::result<Scalar>(std::move(v), pred.requires_grad(), [pred, diff = std::move(diff), count](Node<Scalar>* n) mutable {
    return [pred, diff = std::move(diff), count, n] { pred.node()->accumulate(diff * (Scalar(2) * n->grad(0, 0) / count)); };
  });
}

}  // namespace l2i::ad
