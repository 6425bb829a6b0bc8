#pragma once

#include <map>
#include <string>
#include <vector>

#include "l2i/nn.hpp"

namespace l2i {

/// Word-level vocabulary with fixed special ids.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;
  static constexpr int kCls = 2;

  Vocabulary();
  /// Specials first, then the distinct lowercase words in sorted order.
  static Vocabulary from_words(const std::vector<std::string>& words);

  /// Every word that captions over these class and scene names can produce.
  static Vocabulary for_captions(const std::vector<std::string>& class_names,
                                 const std::vector<std::string>& scene_names);

  int id(const std::string& word) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  /// Word ids truncated or padded to seq_len.
  std::vector<int> encode(const std::string& text, int seq_len) const;

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

struct EncoderConfig {
  int seq_len = 16;
  int width = 64;
  int layers = 2;
  int heads = 4;
  int ffn_mult = 2;
};

template <typename Scalar>
struct TokenSequence {
  ad::Var<Scalar> tokens;  // seq_len x width
  ad::Var<Scalar> cls;     // 1 x width
};

/// Small pre-norm transformer over word embeddings with a prepended cls slot.
/// Padded positions attend nowhere and come out as the learned pad embedding.
template <typename Scalar>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(nn::ParamStore<Scalar>& store, const std::string& name, Vocabulary vocab, const EncoderConfig& cfg,
              Rng& rng);

  TokenSequence<Scalar> encode(const std::string& text) const;

  const Vocabulary& vocabulary() const { return vocab_; }
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Layer {
    nn::LayerNorm<Scalar> norm_attn;
    nn::AttentionBlock<Scalar> attn;
    nn::LayerNorm<Scalar> norm_ffn;
    nn::FeedForward<Scalar> ffn;
  };

  Vocabulary vocab_;
  EncoderConfig cfg_;
  ad::Var<Scalar> embedding_;
  ad::Var<Scalar> position_;
  ad::Var<Scalar> pad_;
  std::vector<Layer> layers_;
  nn::LayerNorm<Scalar> final_norm_;
};

extern template class TextEncoder<float>;
extern template class TextEncoder<double>;

}  // namespace l2i
