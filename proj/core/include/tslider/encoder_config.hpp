#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "tslider/tokenizer.hpp"

namespace tslider {

/// Shape of a CLIP-style text encoder. `seed` drives weight initialization.
struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t mlp_ratio = 4;
  std::uint64_t seed = 0;
  bool causal = true;

  /// Throws ConfigError naming the first offending field.
  void validate() const;

  /// First 16 hex digits of the SHA-256 of the canonical JSON form.
  std::string fingerprint() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void to_json(nlohmann::json& j, const EncoderConfig& config);
/// Missing keys keep their defaults; wrong types raise ConfigError.
void from_json(const nlohmann::json& j, EncoderConfig& config);

}  // namespace tslider
