#pragma once

#include <string>
#include <vector>

#include "l2i/conditioning.hpp"
#include "l2i/geometry.hpp"
#include "l2i/nn.hpp"

namespace l2i {

struct UNetConfig {
  int image_size = 64;
  std::vector<int> channels = {32, 64, 128};
  /// Levels (0 = full resolution) whose blocks carry a conditional
  /// generation site. The deepest listed level also conditions the middle.
  std::vector<int> cgm_levels = {1, 2};
  int time_dim = 128;
  int groups = 8;
  /// Width of the condition tokens.
  int context_dim = 64;
  /// Background attention reads the fused foreground map instead of f.
  bool fg_aware = true;
};

template <typename Scalar>
using MaskVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Foreground and background cross-attention at one feature resolution.
template <typename Scalar>
struct CGMSite {
  nn::AttentionBlock<Scalar> fg;
  nn::AttentionBlock<Scalar> bg;
  int height = 0;
  int width = 0;

  CGMSite() = default;
  CGMSite(nn::ParamStore<Scalar>& store, const std::string& name, int feature_dim, int context_dim, int height,
          int width, Rng& rng);
};

/// R_i = CA(f, e_fg_i) * M_i, R_fused = sum_i R_i,
/// R_bg = CA(R_fused, e_bg) (or CA(f, e_bg) when !fg_aware),
/// out = R_fused + R_bg. With no instances R_fused is f itself.
/// f is (H*W) x d_f; masks are H*W columns at the site resolution.
template <typename Scalar>
ad::Var<Scalar> cgm_forward(const ad::Var<Scalar>& f, const std::vector<ad::Var<Scalar>>& e_fg,
                            const ad::Var<Scalar>& e_bg, const std::vector<MaskVector<Scalar>>& masks,
                            const CGMSite<Scalar>& site, bool fg_aware = true);

/// Conditioning for one image in a batch.
template <typename Scalar>
struct SampleCondition {
  ConditionEmbeddings<Scalar> embeddings;
  std::vector<OrientedBox> boxes;  // in image pixels, aligned with e_fg
};

/// Flattened sigmoid masks per pooling factor: pyramid[level][instance].
using MaskPyramid = std::vector<std::vector<Eigen::VectorXd>>;

MaskPyramid build_mask_pyramid(const std::vector<OrientedBox>& boxes, int image_size, int levels);

/// Noise predictor: residual conv UNet whose attention sites are conditional
/// generation modules.
template <typename Scalar>
class UNet {
 public:
  UNet() = default;
  UNet(nn::ParamStore<Scalar>& store, const std::string& name, const UNetConfig& cfg, Rng& rng);

  const UNetConfig& config() const { return cfg_; }
  void set_fg_aware(bool on) { cfg_.fg_aware = on; }

  /// x is (B*H*W) x 3; steps and conditions have B entries.
  ad::Var<Scalar> forward(const ad::Var<Scalar>& x, const std::vector<int>& steps,
                          const std::vector<SampleCondition<Scalar>>& conditions) const;

  int site_count() const;

 private:
  struct ResBlock {
    ad::Var<Scalar> norm1_gain, norm1_bias, norm2_gain, norm2_bias;
    ad::Var<Scalar> conv1_w, conv1_b, conv2_w, conv2_b;
    nn::Linear<Scalar> time_proj;
    nn::Linear<Scalar> skip;
    bool has_skip = false;
  };
  struct CGMBlock {
    ad::Var<Scalar> norm_gain, norm_bias;
    CGMSite<Scalar> site;
    nn::Linear<Scalar> proj;
    int level = 0;
    bool active = false;
  };
  struct Conv {
    ad::Var<Scalar> w, b;
  };

  ResBlock make_res(nn::ParamStore<Scalar>& store, const std::string& name, int in, int out, Rng& rng) const;
  CGMBlock make_cgm(nn::ParamStore<Scalar>& store, const std::string& name, int ch, int level, Rng& rng) const;
  Conv make_conv(nn::ParamStore<Scalar>& store, const std::string& name, int in, int out, int k, Rng& rng,
                 double gain = 1.0) const;

  ad::Var<Scalar> apply_res(const ResBlock& block, const ad::Var<Scalar>& x, const ad::ImageShape& s,
                            const ad::Var<Scalar>& temb) const;
  ad::Var<Scalar> apply_cgm(const CGMBlock& block, const ad::Var<Scalar>& x, const ad::ImageShape& s,
                            const std::vector<SampleCondition<Scalar>>& conditions,
                            const std::vector<MaskPyramid>& masks) const;
  int groups_for(int channels) const;

  UNetConfig cfg_;
  Conv stem_;
  std::vector<ResBlock> down_;
  std::vector<CGMBlock> down_cgm_;
  std::vector<Conv> downsample_;
  ResBlock mid1_, mid2_;
  CGMBlock mid_cgm_;
  std::vector<ResBlock> up_;
  std::vector<CGMBlock> up_cgm_;
  std::vector<Conv> upsample_;
  ad::Var<Scalar> out_norm_gain_, out_norm_bias_;
  Conv out_;
  nn::Linear<Scalar> time1_, time2_;
};

/// Sinusoidal embedding of integer steps, B x dim.
Eigen::MatrixXd timestep_embedding(const std::vector<int>& steps, int dim);

extern template struct CGMSite<float>;
extern template struct CGMSite<double>;
extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace l2i
