#include "l2i/encoder.hpp"

#include <algorithm>
#include <set>

#include "l2i/layout_text.hpp"

namespace l2i {

Vocabulary::Vocabulary() : words_{"<pad>", "<unk>", "<cls>"} {
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) ids_[words_[i]] = i;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  std::set<std::string> distinct;
  for (const std::string& w : words) {
    for (const std::string& t : tokenize_words(w)) distinct.insert(t);
  }
  Vocabulary v;
  for (const std::string& w : distinct) {
    if (v.ids_.count(w)) continue;
    v.ids_[w] = static_cast<int>(v.words_.size());
    v.words_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::for_captions(const std::vector<std::string>& class_names,
                                    const std::vector<std::string>& scene_names) {
  std::vector<std::string> words = {"this", "is", "an", "aerial", "image", "of", "there", "are", "towards", "the",
                                    "direction", "in", "center", "and"};
  for (int n = 1; n <= 10; ++n) words.push_back(number_word(n));
  for (auto axis : {OrientationAxis::EastWest, OrientationAxis::NorthwestSoutheast, OrientationAxis::NorthSouth,
                    OrientationAxis::NortheastSouthwest}) {
    words.push_back(to_string(axis));
  }
  for (auto label : {BlockLabel::UpperLeft, BlockLabel::LowerRight}) words.push_back(to_string(label));
  for (const std::string& c : class_names) {
    words.push_back(c);
    words.push_back(pluralize(c));
  }
  for (const std::string& s : scene_names) words.push_back(s);
  return from_words(words);
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? kUnknown : it->second;
}

std::vector<int> Vocabulary::encode(const std::string& text, int seq_len) const {
  std::vector<int> ids;
  for (const std::string& w : tokenize_words(text)) {
    if (static_cast<int>(ids.size()) == seq_len) break;
    ids.push_back(id(w));
  }
  ids.resize(static_cast<std::size_t>(seq_len), kPad);
  return ids;
}

template <typename Scalar>
TextEncoder<Scalar>::TextEncoder(nn::ParamStore<Scalar>& store, const std::string& name, Vocabulary vocab,
                                 const EncoderConfig& cfg, Rng& rng)
    : vocab_(std::move(vocab)), cfg_(cfg) {
  const int d = cfg.width;
  embedding_ = store.add(name + ".embedding", nn::normal_matrix<Scalar>(vocab_.size(), d, 0.5, rng));
  position_ = store.add(name + ".position", nn::normal_matrix<Scalar>(cfg.seq_len + 1, d, 0.1, rng));
  pad_ = store.add(name + ".pad", nn::normal_matrix<Scalar>(1, d, 0.5, rng));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Layer layer;
    layer.norm_attn = nn::LayerNorm<Scalar>(store, p + ".norm_attn", d);
    layer.attn = nn::AttentionBlock<Scalar>(store, p + ".attn", {d, d, d, cfg.heads, true}, rng);
    layer.norm_ffn = nn::LayerNorm<Scalar>(store, p + ".norm_ffn", d);
    layer.ffn = nn::FeedForward<Scalar>(store, p + ".ffn", d, d * cfg.ffn_mult, rng);
    layers_.push_back(std::move(layer));
  }
  final_norm_ = nn::LayerNorm<Scalar>(store, name + ".final_norm", d);
}

template <typename Scalar>
TokenSequence<Scalar> TextEncoder<Scalar>::encode(const std::string& text) const {
  const int s = cfg_.seq_len;
  const std::vector<int> words = vocab_.encode(text, s);
  std::vector<int> ids;
  ids.reserve(words.size() + 1);
  ids.push_back(Vocabulary::kCls);
  ids.insert(ids.end(), words.begin(), words.end());

  ad::Matrix<Scalar> key_bias = ad::Matrix<Scalar>::Zero(1, s + 1);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> keep(s), pad(s);
  for (int i = 0; i < s; ++i) {
    const bool is_pad = words[static_cast<std::size_t>(i)] == Vocabulary::kPad;
    if (is_pad) key_bias(0, i + 1) = Scalar(-1e9);
    keep(i) = is_pad ? Scalar(0) : Scalar(1);
    pad(i) = is_pad ? Scalar(1) : Scalar(0);
  }

  ad::Var<Scalar> x = ad::add(ad::gather_rows(embedding_, ids), position_);
  for (const Layer& layer : layers_) {
    const ad::Var<Scalar> h = layer.norm_attn(x);
    x = ad::add(x, layer.attn(h, h, &key_bias));
    x = ad::add(x, layer.ffn(layer.norm_ffn(x)));
  }
  x = final_norm_(x);

  TokenSequence<Scalar> out;
  out.cls = ad::slice_rows(x, 0, 1);
  const ad::Var<Scalar> body = ad::mul_rows(ad::slice_rows(x, 1, s), keep);
  const ad::Var<Scalar> pads = ad::mul_rows(ad::gather_rows(pad_, std::vector<int>(static_cast<std::size_t>(s), 0)), pad);
  out.tokens = ad::add(body, pads);
  return out;
}

template class TextEncoder<float>;
template class TextEncoder<double>;

}  // namespace l2i
