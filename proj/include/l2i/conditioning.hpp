#pragma once

#include <map>
#include <string>
#include <vector>

#include "l2i/encoder.hpp"
#include "l2i/geometry.hpp"
#include "l2i/layout_text.hpp"
#include "l2i/nn.hpp"

namespace l2i {

struct ResamplerConfig {
  int num_queries = 8;
  int width = 64;
  int layers = 2;
  int fourier_freqs = 8;
  int heads = 1;
  int ffn_mult = 2;
  /// When false the background query uses q_ctx directly (no bridge).
  bool context_bridge = true;
};

/// Box parameters normalised to [-1, 1] (cx, cy, w, h by image size, theta by
/// pi/2), each mapped to [sin(2^k pi p), cos(2^k pi p)] for k < freqs.
/// Returns 1 x (10 * freqs).
Eigen::RowVectorXd fourier_features(const OrientedBox& box, int image_size, int freqs);
Eigen::RowVectorXd fourier_features_normalized(const Eigen::Matrix<double, 5, 1>& params, int freqs);

/// Foreground and background query re-samplers joined by a gated
/// self-attention context bridge.
template <typename Scalar>
class DualResampler {
 public:
  struct Layer {
    nn::AttentionBlock<Scalar> attn;
    nn::FeedForward<Scalar> ffn;
  };

  DualResampler() = default;
  DualResampler(nn::ParamStore<Scalar>& store, const std::string& name, const ResamplerConfig& cfg, Rng& rng);

  const ResamplerConfig& config() const { return cfg_; }

  /// h^bbox for one box: Fourier features through a learned projection, 1 x d.
  ad::Var<Scalar> fourier_embed_box(const OrientedBox& box, int image_size) const;

  /// Query stack for one instance: x <- x + CA(x, f_obj); x <- x + FFN(x),
  /// starting from q_fg. Returns N_q x d.
  ad::Var<Scalar> fg_resample_one(const ad::Var<Scalar>& f_obj) const;
  std::vector<ad::Var<Scalar>> fg_resample(const std::vector<ad::Var<Scalar>>& f_obj) const;

  /// q_ctx + tanh(gamma) * first N_q rows of SA([q_ctx ; h_fg_i + h_bbox_i ...]).
  /// With the bridge disabled, returns q_ctx and gamma and the bridge
  /// attention are never created.
  ad::Var<Scalar> context_bridge(const std::vector<ad::Var<Scalar>>& h_fg,
                                 const std::vector<ad::Var<Scalar>>& h_bbox) const;

  /// Background stack over f_all from the query [q_bg ; ctx]; 2 N_q x d.
  ad::Var<Scalar> bg_resample(const ad::Var<Scalar>& f_all, const ad::Var<Scalar>& ctx) const;

  const ad::Var<Scalar>& q_fg() const { return q_fg_; }
  const ad::Var<Scalar>& q_bg() const { return q_bg_; }
  const ad::Var<Scalar>& q_ctx() const { return q_ctx_; }
  const ad::Var<Scalar>& gamma() const { return gamma_; }
  const std::vector<Layer>& fg_layers() const { return fg_layers_; }
  const std::vector<Layer>& bg_layers() const { return bg_layers_; }
  const nn::AttentionBlock<Scalar>& bridge_attention() const { return bridge_; }
  const nn::Linear<Scalar>& fourier_projection() const { return fourier_proj_; }

 private:
  ad::Var<Scalar> run_stack(const std::vector<Layer>& stack, ad::Var<Scalar> x, const ad::Var<Scalar>& context) const;

  ResamplerConfig cfg_;
  ad::Var<Scalar> q_fg_, q_bg_, q_ctx_, gamma_;
  std::vector<Layer> fg_layers_;
  std::vector<Layer> bg_layers_;
  nn::AttentionBlock<Scalar> bridge_;
  nn::Linear<Scalar> fourier_proj_;
};

/// Per-instance e_fg_i = [h_fg_i ; h_bbox_i ; cls(label_i)] ((N_q + 2) x d) and
/// e_bg = [h_bg ; cls(caption)] ((2 N_q + 1) x d).
template <typename Scalar>
struct ConditionEmbeddings {
  std::vector<ad::Var<Scalar>> e_fg;
  ad::Var<Scalar> e_bg;
};

/// Memoises encoder calls for repeated strings within one forward pass.
template <typename Scalar>
using TextCache = std::map<std::string, TokenSequence<Scalar>>;

template <typename Scalar>
ConditionEmbeddings<Scalar> assemble_conditions(const Layout& layout, const TextEncoder<Scalar>& encoder,
                                                const DualResampler<Scalar>& resampler, const Caption& caption,
                                                TextCache<Scalar>* cache = nullptr);

extern template class DualResampler<float>;
extern template class DualResampler<double>;
extern template ConditionEmbeddings<float> assemble_conditions(const Layout&, const TextEncoder<float>&,
                                                               const DualResampler<float>&, const Caption&,
                                                               TextCache<float>*);
extern template ConditionEmbeddings<double> assemble_conditions(const Layout&, const TextEncoder<double>&,
                                                                const DualResampler<double>&, const Caption&,
                                                                TextCache<double>*);

}  // namespace l2i
