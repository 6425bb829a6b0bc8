#include "l2i/unet.hpp"

#include <algorithm>
#include <cmath>

namespace l2i {

template <typename Scalar>
CGMSite<Scalar>::CGMSite(nn::ParamStore<Scalar>& store, const std::string& name, int feature_dim, int context_dim,
                         int h, int w, Rng& rng)
    : fg(store, name + ".fg", {feature_dim, context_dim, feature_dim, 1, false}, rng),
      bg(store, name + ".bg", {feature_dim, context_dim, feature_dim, 1, false}, rng),
      height(h),
      width(w) {}

template <typename Scalar>
ad::Var<Scalar> cgm_forward(const ad::Var<Scalar>& f, const std::vector<ad::Var<Scalar>>& e_fg,
                            const ad::Var<Scalar>& e_bg, const std::vector<MaskVector<Scalar>>& masks,
                            const CGMSite<Scalar>& site, bool fg_aware) {
  if (masks.size() != e_fg.size()) throw Error(Errc::MaskCountMismatch, "one mask per instance embedding required");
  if (f.rows() != static_cast<Eigen::Index>(site.height) * site.width) {
    throw Error(Errc::ResolutionMismatch, "feature rows differ from site resolution");
  }
  for (const auto& m : masks) {
    if (m.size() != f.rows()) throw Error(Errc::ResolutionMismatch, "mask resolution differs from site resolution");
  }
  ad::Var<Scalar> fused = f;
  for (std::size_t i = 0; i < e_fg.size(); ++i) {
    const ad::Var<Scalar> rendered = ad::mul_rows(site.fg(f, e_fg[i]), masks[i]);
    fused = i == 0 ? rendered : ad::add(fused, rendered);
  }
  const ad::Var<Scalar> background = site.bg(fg_aware ? fused : f, e_bg);
  return ad::add(fused, background);
}

MaskPyramid build_mask_pyramid(const std::vector<OrientedBox>& boxes, int image_size, int levels) {
  MaskPyramid pyramid(static_cast<std::size_t>(levels));
  for (const OrientedBox& box : boxes) {
    const InstanceMask full = rasterize_sigmoid_mask(box, image_size, image_size);
    for (int l = 0; l < levels; ++l) {
      const InstanceMask pooled = downsample_mask(full, 1 << l);
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = pooled.values;
      pyramid[static_cast<std::size_t>(l)].push_back(Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size()));
    }
  }
  return pyramid;
}

Eigen::MatrixXd timestep_embedding(const std::vector<int>& steps, int dim) {
  const int half = dim / 2;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(steps.size()), dim);
  for (std::size_t b = 0; b < steps.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
      const double arg = steps[b] * freq;
      out(static_cast<Eigen::Index>(b), i) = std::sin(arg);
      out(static_cast<Eigen::Index>(b), half + i) = std::cos(arg);
    }
  }
  return out;
}

template <typename Scalar>
int UNet<Scalar>::groups_for(int channels) const {
  int g = std::min(cfg_.groups, channels);
  while (channels % g != 0) --g;
  return g;
}

template <typename Scalar>
typename UNet<Scalar>::Conv UNet<Scalar>::make_conv(nn::ParamStore<Scalar>& store, const std::string& name, int in,
                                                    int out, int k, Rng& rng, double gain) const {
  const double bound = gain * std::sqrt(6.0 / (k * k * in + out));
  return {store.add(name + ".weight", nn::uniform_matrix<Scalar>(k * k * in, out, bound, rng)),
          store.add(name + ".bias", ad::Matrix<Scalar>::Zero(1, out))};
}

template <typename Scalar>
typename UNet<Scalar>::ResBlock UNet<Scalar>::make_res(nn::ParamStore<Scalar>& store, const std::string& name,
                                                       int in, int out, Rng& rng) const {
  ResBlock r;
  r.norm1_gain = store.add(name + ".norm1.gain", ad::Matrix<Scalar>::Ones(1, in));
  r.norm1_bias = store.add(name + ".norm1.bias", ad::Matrix<Scalar>::Zero(1, in));
  Conv c1 = make_conv(store, name + ".conv1", in, out, 3, rng);
  r.conv1_w = c1.w;
  r.conv1_b = c1.b;
  r.time_proj = nn::Linear<Scalar>(store, name + ".time", cfg_.time_dim, out, rng);
  r.norm2_gain = store.add(name + ".norm2.gain", ad::Matrix<Scalar>::Ones(1, out));
  r.norm2_bias = store.add(name + ".norm2.bias", ad::Matrix<Scalar>::Zero(1, out));
  Conv c2 = make_conv(store, name + ".conv2", out, out, 3, rng, 0.5);
  r.conv2_w = c2.w;
  r.conv2_b = c2.b;
  if (in != out) {
    r.skip = nn::Linear<Scalar>(store, name + ".skip", in, out, rng);
    r.has_skip = true;
  }
  return r;
}

template <typename Scalar>
typename UNet<Scalar>::CGMBlock UNet<Scalar>::make_cgm(nn::ParamStore<Scalar>& store, const std::string& name,
                                                       int ch, int level, Rng& rng) const {
  CGMBlock b;
  b.level = level;
  b.active = std::find(cfg_.cgm_levels.begin(), cfg_.cgm_levels.end(), level) != cfg_.cgm_levels.end();
  if (!b.active) return b;
  const int res = cfg_.image_size >> level;
  b.norm_gain = store.add(name + ".norm.gain", ad::Matrix<Scalar>::Ones(1, ch));
  b.norm_bias = store.add(name + ".norm.bias", ad::Matrix<Scalar>::Zero(1, ch));
  b.site = CGMSite<Scalar>(store, name + ".site", ch, cfg_.context_dim, res, res, rng);
  b.proj = nn::Linear<Scalar>(store, name + ".proj", ch, ch, rng, true, 0.5);
  return b;
}

template <typename Scalar>
UNet<Scalar>::UNet(nn::ParamStore<Scalar>& store, const std::string& name, const UNetConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int levels = static_cast<int>(cfg.channels.size());
  if (levels < 1) throw Error(Errc::InvalidConfig, "UNet needs at least one level");
  if (cfg.image_size % (1 << (levels - 1)) != 0) {
    throw Error(Errc::InvalidConfig, "image size not divisible by the UNet downsampling factor");
  }
  const int c0 = cfg.channels.front();
  time1_ = nn::Linear<Scalar>(store, name + ".time1", c0, cfg.time_dim, rng);
  time2_ = nn::Linear<Scalar>(store, name + ".time2", cfg.time_dim, cfg.time_dim, rng);
  stem_ = make_conv(store, name + ".stem", 3, c0, 3, rng);

  int cur = c0;
  for (int l = 0; l < levels; ++l) {
    const std::string p = name + ".down" + std::to_string(l);
    down_.push_back(make_res(store, p + ".res", cur, cfg.channels[l], rng));
    cur = cfg.channels[l];
    down_cgm_.push_back(make_cgm(store, p + ".cgm", cur, l, rng));
    if (l + 1 < levels) downsample_.push_back(make_conv(store, p + ".downsample", cur, cur, 3, rng));
  }
  mid1_ = make_res(store, name + ".mid.res1", cur, cur, rng);
  mid_cgm_ = make_cgm(store, name + ".mid.cgm", cur, levels - 1, rng);
  mid2_ = make_res(store, name + ".mid.res2", cur, cur, rng);
  up_.resize(static_cast<std::size_t>(levels));
  up_cgm_.resize(static_cast<std::size_t>(levels));
  upsample_.resize(static_cast<std::size_t>(levels));
  for (int l = levels - 1; l >= 0; --l) {
    const std::string p = name + ".up" + std::to_string(l);
    up_[l] = make_res(store, p + ".res", cur + cfg.channels[l], cfg.channels[l], rng);
    cur = cfg.channels[l];
    up_cgm_[l] = make_cgm(store, p + ".cgm", cur, l, rng);
    if (l > 0) {
      upsample_[l] = make_conv(store, p + ".upsample", cur, cfg.channels[l - 1], 3, rng);
      cur = cfg.channels[l - 1];
    }
  }
  out_norm_gain_ = store.add(name + ".out.norm.gain", ad::Matrix<Scalar>::Ones(1, cur));
  out_norm_bias_ = store.add(name + ".out.norm.bias", ad::Matrix<Scalar>::Zero(1, cur));
  out_ = make_conv(store, name + ".out.conv", cur, 3, 3, rng, 0.5);
}

template <typename Scalar>
int UNet<Scalar>::site_count() const {
  int n = mid_cgm_.active ? 1 : 0;
  for (const auto& b : down_cgm_) n += b.active;
  for (const auto& b : up_cgm_) n += b.active;
  return n;
}

template <typename Scalar>
ad::Var<Scalar> UNet<Scalar>::apply_res(const ResBlock& r, const ad::Var<Scalar>& x, const ad::ImageShape& s,
                                        const ad::Var<Scalar>& temb) const {
  const int in = static_cast<int>(x.cols());
  const int out = static_cast<int>(r.conv1_w.cols());
  ad::Var<Scalar> h = ad::silu(ad::group_norm(x, s.batch, groups_for(in), r.norm1_gain, r.norm1_bias));
  h = ad::conv2d(h, s, r.conv1_w, r.conv1_b, 3, 1, 1);
  h = ad::add_block_rows(h, r.time_proj(temb));
  h = ad::silu(ad::group_norm(h, s.batch, groups_for(out), r.norm2_gain, r.norm2_bias));
  h = ad::conv2d(h, s, r.conv2_w, r.conv2_b, 3, 1, 1);
  return ad::add(h, r.has_skip ? r.skip(x) : x);
}

template <typename Scalar>
ad::Var<Scalar> UNet<Scalar>::apply_cgm(const CGMBlock& block, const ad::Var<Scalar>& x, const ad::ImageShape& s,
                                        const std::vector<SampleCondition<Scalar>>& conditions,
                                        const std::vector<MaskPyramid>& masks) const {
  if (!block.active) return x;
  const ad::Var<Scalar> normed =
      ad::group_norm(x, s.batch, groups_for(static_cast<int>(x.cols())), block.norm_gain, block.norm_bias);
  const Eigen::Index hw = s.pixels();
  std::vector<ad::Var<Scalar>> outs;
  outs.reserve(static_cast<std::size_t>(s.batch));
  for (Eigen::Index b = 0; b < s.batch; ++b) {
    const auto& cond = conditions[static_cast<std::size_t>(b)];
    std::vector<MaskVector<Scalar>> site_masks;
    for (const Eigen::VectorXd& m : masks[static_cast<std::size_t>(b)][static_cast<std::size_t>(block.level)]) {
      site_masks.push_back(m.cast<Scalar>());
    }
    outs.push_back(cgm_forward(ad::slice_rows(normed, b * hw, hw), cond.embeddings.e_fg, cond.embeddings.e_bg,
                               site_masks, block.site, cfg_.fg_aware));
  }
  return ad::add(x, block.proj(outs.size() == 1 ? outs.front() : ad::vconcat(outs)));
}

template <typename Scalar>
ad::Var<Scalar> UNet<Scalar>::forward(const ad::Var<Scalar>& x, const std::vector<int>& steps,
                                      const std::vector<SampleCondition<Scalar>>& conditions) const {
  const int levels = static_cast<int>(cfg_.channels.size());
  const auto batch = static_cast<Eigen::Index>(steps.size());
  if (static_cast<Eigen::Index>(conditions.size()) != batch) {
    throw Error(Errc::ShapeMismatch, "one condition per batch entry required");
  }
  ad::ImageShape s{batch, cfg_.image_size, cfg_.image_size};
  if (x.rows() != s.rows() || x.cols() != 3) throw Error(Errc::ShapeMismatch, "UNet input shape");

  std::vector<MaskPyramid> masks;
  masks.reserve(conditions.size());
  for (const auto& c : conditions) {
    if (c.boxes.size() != c.embeddings.e_fg.size()) {
      throw Error(Errc::MaskCountMismatch, "boxes and instance embeddings differ in count");
    }
    masks.push_back(build_mask_pyramid(c.boxes, cfg_.image_size, levels));
  }

  const ad::Var<Scalar> t0 = ad::constant<Scalar>(timestep_embedding(steps, cfg_.channels.front()).cast<Scalar>());
  const ad::Var<Scalar> temb = ad::silu(time2_(ad::silu(time1_(t0))));

  ad::Var<Scalar> h = ad::conv2d(x, s, stem_.w, stem_.b, 3, 1, 1);
  std::vector<ad::Var<Scalar>> skips;
  std::vector<ad::ImageShape> shapes;
  for (int l = 0; l < levels; ++l) {
    h = apply_res(down_[l], h, s, temb);
    h = apply_cgm(down_cgm_[l], h, s, conditions, masks);
    skips.push_back(h);
    shapes.push_back(s);
    if (l + 1 < levels) {
      h = ad::conv2d(h, s, downsample_[l].w, downsample_[l].b, 3, 2, 1);
      s = {batch, s.height / 2, s.width / 2};
    }
  }
  h = apply_res(mid1_, h, s, temb);
  h = apply_cgm(mid_cgm_, h, s, conditions, masks);
  h = apply_res(mid2_, h, s, temb);
  for (int l = levels - 1; l >= 0; --l) {
    h = apply_res(up_[l], ad::hconcat<Scalar>({h, skips[l]}), s, temb);
    h = apply_cgm(up_cgm_[l], h, s, conditions, masks);
    if (l > 0) {
      h = ad::upsample2x(h, s);
      s = shapes[l - 1];
      h = ad::conv2d(h, s, upsample_[l].w, upsample_[l].b, 3, 1, 1);
    }
  }
  h = ad::silu(ad::group_norm(h, s.batch, groups_for(static_cast<int>(h.cols())), out_norm_gain_, out_norm_bias_));
  return ad::conv2d(h, s, out_.w, out_.b, 3, 1, 1);
}

template struct CGMSite<float>;
template struct CGMSite<double>;
template class UNet<float>;
template class UNet<double>;
template ad::Var<float> cgm_forward(const ad::Var<float>&, const std::vector<ad::Var<float>>&, const ad::Var<float>&,
                                    const std::vector<MaskVector<float>>&, const CGMSite<float>&, bool);
template ad::Var<double> cgm_forward(const ad::Var<double>&, const std::vector<ad::Var<double>>&,
                                     const ad::Var<double>&, const std::vector<MaskVector<double>>&,
                                     const CGMSite<double>&, bool);

}  // namespace l2i
