#include "l2i/conditioning.hpp"

#include <cmath>

namespace l2i {

Eigen::RowVectorXd fourier_features_normalized(const Eigen::Matrix<double, 5, 1>& params, int freqs) {
  Eigen::RowVectorXd out(10 * freqs);
  for (int j = 0; j < 5; ++j) {
    for (int k = 0; k < freqs; ++k) {
      const double arg = std::ldexp(1.0, k) * kPi * params(j);
      out(j * 2 * freqs + 2 * k) = std::sin(arg);
      out(j * 2 * freqs + 2 * k + 1) = std::cos(arg);
    }
  }
  return out;
}

Eigen::RowVectorXd fourier_features(const OrientedBox& box, int image_size, int freqs) {
  const double s = image_size;
  Eigen::Matrix<double, 5, 1> p;
  p << box.cx / s, box.cy / s, box.w / s, box.h / s, box.theta / (kPi / 2.0);
  return fourier_features_normalized(p, freqs);
}

template <typename Scalar>
DualResampler<Scalar>::DualResampler(nn::ParamStore<Scalar>& store, const std::string& name,
                                     const ResamplerConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  const int d = cfg.width;
  const int nq = cfg.num_queries;
  q_fg_ = store.add(name + ".q_fg", nn::normal_matrix<Scalar>(nq, d, 0.2, rng));
  q_bg_ = store.add(name + ".q_bg", nn::normal_matrix<Scalar>(nq, d, 0.2, rng));
  q_ctx_ = store.add(name + ".q_ctx", nn::normal_matrix<Scalar>(nq, d, 0.2, rng));
  const nn::AttentionConfig attn{d, d, d, cfg.heads, false};
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".fg" + std::to_string(l);
    fg_layers_.push_back({nn::AttentionBlock<Scalar>(store, p + ".ca", attn, rng),
                          nn::FeedForward<Scalar>(store, p + ".ffn", d, d * cfg.ffn_mult, rng)});
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".bg" + std::to_string(l);
    bg_layers_.push_back({nn::AttentionBlock<Scalar>(store, p + ".ca", attn, rng),
                          nn::FeedForward<Scalar>(store, p + ".ffn", d, d * cfg.ffn_mult, rng)});
  }
  fourier_proj_ = nn::Linear<Scalar>(store, name + ".fourier", 10 * cfg.fourier_freqs, d, rng);
  // Created last so toggling the bridge leaves every other initial weight unchanged.
  if (cfg.context_bridge) {
    gamma_ = store.add(name + ".gamma", ad::Matrix<Scalar>::Zero(1, 1));
    bridge_ = nn::AttentionBlock<Scalar>(store, name + ".bridge.sa", attn, rng);
  }
}

template <typename Scalar>
ad::Var<Scalar> DualResampler<Scalar>::fourier_embed_box(const OrientedBox& box, int image_size) const {
  const Eigen::RowVectorXd f = fourier_features(box, image_size, cfg_.fourier_freqs);
  return fourier_proj_(ad::constant<Scalar>(f.cast<Scalar>()));
}

template <typename Scalar>
ad::Var<Scalar> DualResampler<Scalar>::run_stack(const std::vector<Layer>& stack, ad::Var<Scalar> x,
                                                 const ad::Var<Scalar>& context) const {
  for (const Layer& layer : stack) {
    x = ad::add(x, layer.attn(x, context));
    x = ad::add(x, layer.ffn(x));
  }
  return x;
}

template <typename Scalar>
ad::Var<Scalar> DualResampler<Scalar>::fg_resample_one(const ad::Var<Scalar>& f_obj) const {
  if (f_obj.cols() != cfg_.width) throw Error(Errc::WidthMismatch, "object tokens differ from resampler width");
  return run_stack(fg_layers_, q_fg_, f_obj);
}

template <typename Scalar>
std::vector<ad::Var<Scalar>> DualResampler<Scalar>::fg_resample(const std::vector<ad::Var<Scalar>>& f_obj) const {
  if (f_obj.empty()) throw Error(Errc::EmptyInstanceList, "foreground re-sampler needs at least one instance");
  std::vector<ad::Var<Scalar>> out;
  out.reserve(f_obj.size());
  for (const auto& f : f_obj) out.push_back(fg_resample_one(f));
  return out;
}

template <typename Scalar>
ad::Var<Scalar> DualResampler<Scalar>::context_bridge(const std::vector<ad::Var<Scalar>>& h_fg,
                                                      const std::vector<ad::Var<Scalar>>& h_bbox) const {
  if (h_fg.size() != h_bbox.size()) throw Error(Errc::ShapeMismatch, "h_fg and h_bbox instance counts differ");
  if (!cfg_.context_bridge) return q_ctx_;
  std::vector<ad::Var<Scalar>> tokens{q_ctx_};
  for (std::size_t i = 0; i < h_fg.size(); ++i) {
    if (h_fg[i].rows() != cfg_.num_queries || h_fg[i].cols() != cfg_.width || h_bbox[i].rows() != 1 ||
        h_bbox[i].cols() != cfg_.width) {
      throw Error(Errc::ShapeMismatch, "context bridge inputs have unexpected shapes");
    }
    tokens.push_back(ad::add_row(h_fg[i], h_bbox[i]));
  }
  const ad::Var<Scalar> seq = ad::vconcat(tokens);
  const ad::Var<Scalar> attended = bridge_(seq, seq);
  const ad::Var<Scalar> selected = ad::slice_rows(attended, 0, cfg_.num_queries);
  return ad::add(q_ctx_, ad::scale_by(selected, ad::tanh(gamma_)));
}

template <typename Scalar>
ad::Var<Scalar> DualResampler<Scalar>::bg_resample(const ad::Var<Scalar>& f_all, const ad::Var<Scalar>& ctx) const {
  if (ctx.rows() != cfg_.num_queries || ctx.cols() != cfg_.width || f_all.cols() != cfg_.width) {
    throw Error(Errc::ShapeMismatch, "background re-sampler inputs have unexpected shapes");
  }
  return run_stack(bg_layers_, ad::vconcat<Scalar>({q_bg_, ctx}), f_all);
}

template <typename Scalar>
ConditionEmbeddings<Scalar> assemble_conditions(const Layout& layout, const TextEncoder<Scalar>& encoder,
                                                const DualResampler<Scalar>& resampler, const Caption& caption,
                                                TextCache<Scalar>* cache) {
  TextCache<Scalar> local;
  TextCache<Scalar>& memo = cache ? *cache : local;
  auto encode = [&](const std::string& text) -> const TokenSequence<Scalar>& {
    auto it = memo.find(text);
    if (it == memo.end()) it = memo.emplace(text, encoder.encode(text)).first;
    return it->second;
  };

  std::vector<ad::Var<Scalar>> h_fg, h_bbox;
  ConditionEmbeddings<Scalar> out;
  for (const Instance& inst : layout.instances) {
    const TokenSequence<Scalar>& label = encode(inst.label);
    h_fg.push_back(resampler.fg_resample_one(label.tokens));
    h_bbox.push_back(resampler.fourier_embed_box(inst.box, layout.image_size));
    out.e_fg.push_back(ad::vconcat<Scalar>({h_fg.back(), h_bbox.back(), label.cls}));
  }
  const TokenSequence<Scalar>& global = encode(caption.text);
  const ad::Var<Scalar> ctx = resampler.context_bridge(h_fg, h_bbox);
  out.e_bg = ad::vconcat<Scalar>({resampler.bg_resample(global.tokens, ctx), global.cls});
  return out;
}

template class DualResampler<float>;
template class DualResampler<double>;
template ConditionEmbeddings<float> assemble_conditions(const Layout&, const TextEncoder<float>&,
                                                        const DualResampler<float>&, const Caption&, TextCache<float>*);
template ConditionEmbeddings<double> assemble_conditions(const Layout&, const TextEncoder<double>&,
                                                         const DualResampler<double>&, const Caption&,
                                                         TextCache<double>*);

}  // namespace l2i
