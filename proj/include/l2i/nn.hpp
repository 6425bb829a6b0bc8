#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "l2i/autodiff.hpp"

namespace l2i {

using Rng = std::mt19937_64;

namespace nn {

using ad::Matrix;
using ad::Var;

template <typename Scalar>
Matrix<Scalar> uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

template <typename Scalar>
Matrix<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
  return m;
}

/// Ordered collection of named learnable leaves.
template <typename Scalar>
class ParamStore {
 public:
  Var<Scalar> add(const std::string& name, Matrix<Scalar> init) {
    if (index_.count(name)) throw Error(Errc::InvalidConfig, "duplicate parameter " + name);
    Var<Scalar> v(std::move(init), true);
    index_[name] = entries_.size();
    entries_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<Scalar>>>& entries() const { return entries_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Var<Scalar>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(Errc::IncompatibleCheckpoint, "unknown parameter " + name);
    return entries_[it->second].second;
  }

  void zero_grad() {
    for (auto& [name, v] : entries_) v.node()->zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) n += static_cast<std::size_t>(v.value().size());
    return n;
  }

  /// Number of scalars under names starting with prefix.
  std::size_t parameter_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, v] : entries_) {
      if (name.rfind(prefix, 0) == 0) n += static_cast<std::size_t>(v.value().size());
    }
    return n;
  }

 private:
  std::vector<std::pair<std::string, Var<Scalar>>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// y = x W + b with W stored (in x out).
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<Scalar>& store, const std::string& name, int in, int out, Rng& rng, bool bias = true,
         double gain = 1.0) {
    const double bound = gain * std::sqrt(6.0 / (in + out));
    weight_ = store.add(name + ".weight", uniform_matrix<Scalar>(in, out, bound, rng));
    if (bias) bias_ = store.add(name + ".bias", Matrix<Scalar>::Zero(1, out));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    Var<Scalar> y = ad::matmul(x, weight_);
    return bias_.defined() ? ad::add_row(y, bias_) : y;
  }

  const Var<Scalar>& weight() const { return weight_; }
  const Var<Scalar>& bias() const { return bias_; }
  Eigen::Index in_features() const { return weight_.rows(); }
  Eigen::Index out_features() const { return weight_.cols(); }

 private:
  Var<Scalar> weight_;
  Var<Scalar> bias_;
};

template <typename Scalar>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<Scalar>& store, const std::string& name, int width) {
    gain_ = store.add(name + ".gain", Matrix<Scalar>::Ones(1, width));
    bias_ = store.add(name + ".bias", Matrix<Scalar>::Zero(1, width));
  }
  Var<Scalar> operator()(const Var<Scalar>& x) const { return ad::layer_norm(x, gain_, bias_); }

 private:
  Var<Scalar> gain_;
  Var<Scalar> bias_;
};

struct AttentionConfig {
  int query_dim = 64;
  int context_dim = 64;
  int inner_dim = 64;
  int heads = 1;
  bool output_projection = false;
};

/// Softmax(Q K^T / sqrt(d_head)) V with Q = query W_Q, K = context W_K,
/// V = context W_V. Without an output projection the result is inner_dim wide.
template <typename Scalar>
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParamStore<Scalar>& store, const std::string& name, const AttentionConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    if (cfg.heads < 1 || cfg.inner_dim % cfg.heads != 0) {
      throw Error(Errc::InvalidConfig, name + ": inner width not divisible by head count");
    }
    wq_ = store.add(name + ".wq", uniform_matrix<Scalar>(cfg.query_dim, cfg.inner_dim,
                                                         std::sqrt(6.0 / (cfg.query_dim + cfg.inner_dim)), rng));
    wk_ = store.add(name + ".wk", uniform_matrix<Scalar>(cfg.context_dim, cfg.inner_dim,
                                                         std::sqrt(6.0 / (cfg.context_dim + cfg.inner_dim)), rng));
    wv_ = store.add(name + ".wv", uniform_matrix<Scalar>(cfg.context_dim, cfg.inner_dim,
                                                         std::sqrt(6.0 / (cfg.context_dim + cfg.inner_dim)), rng));
    if (cfg.output_projection) out_ = Linear<Scalar>(store, name + ".out", cfg.inner_dim, cfg.query_dim, rng);
  }

  const AttentionConfig& config() const { return cfg_; }
  int output_dim() const { return cfg_.output_projection ? cfg_.query_dim : cfg_.inner_dim; }

  const Var<Scalar>& wq() const { return wq_; }
  const Var<Scalar>& wk() const { return wk_; }
  const Var<Scalar>& wv() const { return wv_; }

  /// key_bias: optional constant 1 x T_k additive logit bias (key masking).
  Var<Scalar> operator()(const Var<Scalar>& query, const Var<Scalar>& context,
                         const Matrix<Scalar>* key_bias = nullptr) const {
    if (query.cols() != cfg_.query_dim || context.cols() != cfg_.context_dim) {
      throw Error(Errc::WidthMismatch, "attention input width differs from projection width");
    }
    const Var<Scalar> q = ad::matmul(query, wq_);
    const Var<Scalar> k = ad::matmul(context, wk_);
    const Var<Scalar> v = ad::matmul(context, wv_);
    Var<Scalar> out;
    if (cfg_.heads == 1) {
      out = attend(q, k, v, key_bias);
    } else {
      const int hd = cfg_.inner_dim / cfg_.heads;
      std::vector<Var<Scalar>> heads;
      for (int h = 0; h < cfg_.heads; ++h) {
        heads.push_back(attend(ad::slice_cols(q, h * hd, hd), ad::slice_cols(k, h * hd, hd),
                               ad::slice_cols(v, h * hd, hd), key_bias));
      }
      out = ad::hconcat(heads);
    }
    return cfg_.output_projection ? out_(out) : out;
  }

 private:
  static Var<Scalar> attend(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v,
                            const Matrix<Scalar>* key_bias) {
    const Scalar s = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
    const Var<Scalar> logits = ad::scale(ad::matmul_nt(q, k), s);
    return ad::matmul(ad::softmax_rows(logits, key_bias), v);
  }

  AttentionConfig cfg_;
  Var<Scalar> wq_, wk_, wv_;
  Linear<Scalar> out_;
};

/// Attention rows of Softmax(Q K^T / sqrt(d)) for inspection and tests.
template <typename Scalar>
Matrix<Scalar> attention_weights(const AttentionBlock<Scalar>& block, const Matrix<Scalar>& query,
                                 const Matrix<Scalar>& context) {
  const Matrix<Scalar> q = query * block.wq().value();
  const Matrix<Scalar> k = context * block.wk().value();
  Matrix<Scalar> logits = (q * k.transpose()) / std::sqrt(static_cast<Scalar>(q.cols()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    row = (row.array() - row.maxCoeff()).exp().matrix();
    row /= row.sum();
  }
  return logits;
}

/// Two-layer perceptron width -> hidden -> width with SiLU.
template <typename Scalar>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore<Scalar>& store, const std::string& name, int width, int hidden, Rng& rng)
      : in_(store, name + ".in", width, hidden, rng), out_(store, name + ".out", hidden, width, rng) {}
  Var<Scalar> operator()(const Var<Scalar>& x) const { return out_(ad::silu(in_(x))); }

  const Linear<Scalar>& in() const { return in_; }
  const Linear<Scalar>& out() const { return out_; }

 private:
  Linear<Scalar> in_;
  Linear<Scalar> out_;
};

}  // namespace nn

/// Cross-attention of query rows over context rows through a block.
template <typename Scalar>
ad::Var<Scalar> cross_attention(const ad::Var<Scalar>& query, const ad::Var<Scalar>& context,
                                const nn::AttentionBlock<Scalar>& block) {
  return block(query, context);
}

}  // namespace l2i
