#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tslider/encoder_config.hpp"
#include "tslider/lora.hpp"
#include "tslider/tensor.hpp"
#include "tslider/tokenizer.hpp"

namespace tslider {

template <typename T>
struct BasicBlockWeights {
  BasicTensor<T> ln1_gain, ln1_bias;
  BasicTensor<T> q_weight, q_bias;
  BasicTensor<T> k_weight, k_bias;
  BasicTensor<T> v_weight, v_bias;
  BasicTensor<T> out_weight, out_bias;
  BasicTensor<T> ln2_gain, ln2_bias;
  BasicTensor<T> mlp_in_weight, mlp_in_bias;
  BasicTensor<T> mlp_out_weight, mlp_out_bias;
};

/// Frozen base parameters of a pre-layernorm causal transformer encoder.
/// Projection weights are stored [out x in].
template <typename T>
struct BasicEncoderWeights {
  EncoderConfig config;
  BasicTensor<T> token_embedding;     // [vocab_size x d_model]
  BasicTensor<T> position_embedding;  // [max_len x d_model]
  std::vector<BasicBlockWeights<T>> blocks;
  BasicTensor<T> final_gain, final_bias;

  /// Canonical names in serialization order.
  std::vector<std::pair<std::string, BasicTensor<T>>> named_tensors() const;
  static BasicEncoderWeights from_named(const EncoderConfig& config,
                                        const std::map<std::string, BasicTensor<T>>& tensors);

  std::size_t parameter_count() const;
  const BasicTensor<T>& projection_weight(LayerId layer) const;

  template <typename U>
  BasicEncoderWeights<U> cast() const {
    std::map<std::string, BasicTensor<U>> converted;
    for (const auto& [name, t] : named_tensors()) converted.emplace(name, t.template cast<U>());
    return BasicEncoderWeights<U>::from_named(config, converted);
  }
};

template <typename T>
struct BasicEncodingOutput {
  BasicTensor<T> tokenwise;  // [max_len x d_model]
  BasicTensor<T> pooled;     // [d_model]
  std::size_t eos_pos = 0;
};

using EncoderWeights = BasicEncoderWeights<float>;
using EncodingOutput = BasicEncodingOutput<float>;

/// N(0, 0.02) embeddings and projections, zero biases, unit layernorm gains.
template <typename T>
BasicEncoderWeights<T> init_encoder(const EncoderConfig& config);

/// Forward pass. Each adapted projection adds its LoRA terms to the base
/// projection output; pooled is the final-layernormed row at eos_pos.
template <typename T>
BasicEncodingOutput<T> encode_text(const BasicEncoderWeights<T>& weights, const BasicAdapterSet<T>* adapters,
                                   const TokenSeq& seq);

/// Weights plus the vocabulary used to tokenize prompts for them.
template <typename T>
struct BasicTextEncoder {
  BasicEncoderWeights<T> weights;
  std::shared_ptr<const Vocab> vocab;

  TokenSeq tokenize(std::string_view text) const { return tslider::encode(text, *vocab, weights.config.max_len); }
  BasicEncodingOutput<T> encode(std::string_view text, const BasicAdapterSet<T>* adapters = nullptr) const {
    return encode_text(weights, adapters, tokenize(text));
  }
  std::string fingerprint() const { return weights.config.fingerprint(); }
};

using TextEncoder = BasicTextEncoder<float>;

/// Encoder with a fresh initialization; vocab_size is raised to cover `vocab`
/// when left at 0.
TextEncoder make_text_encoder(EncoderConfig config, Vocab vocab);

}  // namespace tslider
