#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tslider/encoder_config.hpp"
#include "tslider/tensor.hpp"

namespace tslider {

enum class Projection : std::uint8_t { kQuery, kKey, kValue, kOut };

inline constexpr std::array<Projection, 4> kAttentionProjections{
    Projection::kQuery, Projection::kKey, Projection::kValue, Projection::kOut};

std::string_view projection_name(Projection proj);
Projection parse_projection(std::string_view name);

/// One adapted projection: attention block index plus which projection.
struct LayerId {
  std::size_t block = 0;
  Projection proj = Projection::kQuery;

  auto operator<=>(const LayerId&) const = default;
};

/// "block<N>.<q|k|v|out>"
std::string to_string(LayerId id);
LayerId parse_layer_id(std::string_view text);

/// Every listed projection of every block, block-major.
std::vector<LayerId> attention_targets(std::size_t n_layers,
                                       std::span<const Projection> projections = kAttentionProjections);

/// Low-rank update W = W0 + alpha * B A for one projection W0 of shape
/// [out x in]. `scale` is a fixed per-term weight (1 for trained adapters,
/// the composition weight for composed ones); the runtime multiplier lives
/// on the owning set.
template <typename T>
struct BasicLoraAdapter {
  LayerId layer;
  BasicTensor<T> a;  // [rank x in]
  BasicTensor<T> b;  // [out x rank]
  T scale = T(1);

  std::size_t rank() const { return a.dim(0); }
};

/// Adapters for one encoder. A trained set has exactly one adapter per
/// targeted projection; a composed set may hold several terms per projection,
/// stored in a canonical order.
template <typename T>
struct BasicAdapterSet {
  std::vector<BasicLoraAdapter<T>> adapters;
  T multiplier = T(1);
  std::string encoder_fingerprint;

  /// A and B of every adapter, in adapter order.
  std::vector<BasicTensor<T>> parameters() const;
  bool has_duplicate_layers() const;

  template <typename U>
  BasicAdapterSet<U> cast() const {
    BasicAdapterSet<U> out;
    out.multiplier = static_cast<U>(multiplier);
    out.encoder_fingerprint = encoder_fingerprint;
    for (const auto& ad : adapters) {
      out.adapters.push_back({ad.layer, ad.a.template cast<U>(), ad.b.template cast<U>(), static_cast<U>(ad.scale)});
    }
    return out;
  }
};

using LoraAdapter = BasicLoraAdapter<float>;
using AdapterSet = BasicAdapterSet<float>;

/// Fresh adapters: A ~ N(0, 0.02), B = 0, so the set starts as an exact
/// identity. Throws ConfigError for a bad rank or duplicate targets.
template <typename T>
BasicAdapterSet<T> make_adapter_set(const EncoderConfig& config, std::size_t rank,
                                    std::span<const LayerId> targets, std::uint64_t seed);

/// base_out + multiplier * scale * (x A^T) B^T. Returns `base_out` itself when
/// the effective multiplier is zero.
template <typename T>
BasicTensor<T> apply_lora(const BasicLoraAdapter<T>& adapter, const BasicTensor<T>& x,
                          const BasicTensor<T>& base_out, T multiplier = T(1));

/// Sets the global multiplier. Negative values are allowed; non-finite are not.
template <typename T>
void set_multiplier(BasicAdapterSet<T>& set, T alpha);

/// Weight-space sum: each projection receives sum_i alpha_i B_i A_i. Zero-weight
/// terms are dropped and the rest are put in a canonical order, so the
/// result does not depend on the order of `sets`.
template <typename T>
BasicAdapterSet<T> compose(std::span<const BasicAdapterSet<T>> sets, std::span<const T> alphas);

/// W0 + sum over matching adapters of (multiplier * scale) * B A.
template <typename T>
BasicTensor<T> merged_weight(const BasicTensor<T>& base, const BasicAdapterSet<T>& set, LayerId layer);

/// Checks block indices, A/B shapes and fingerprint against `config`.
template <typename T>
void validate_against(const BasicAdapterSet<T>& set, const EncoderConfig& config);

}  // namespace tslider
