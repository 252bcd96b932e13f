#include "tslider/lora.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "tslider/errors.hpp"

namespace tslider {

std::string_view projection_name(Projection proj) {
  switch (proj) {
    case Projection::kQuery: return "q";
    case Projection::kKey: return "k";
    case Projection::kValue: return "v";
    case Projection::kOut: return "out";
  }
  return "?";
}

Projection parse_projection(std::string_view name) {
  for (auto p : kAttentionProjections) {
    if (projection_name(p) == name) return p;
  }
  throw ConfigError("unknown projection '" + std::string(name) + "' (expected q, k, v or out)");
}

std::string to_string(LayerId id) {
  return "block" + std::to_string(id.block) + "." + std::string(projection_name(id.proj));
}

LayerId parse_layer_id(std::string_view text) {
  constexpr std::string_view kPrefix = "block";
  const auto dot = text.find('.');
  if (!text.starts_with(kPrefix) || dot == std::string_view::npos || dot == kPrefix.size()) {
    throw ConfigError("malformed layer id '" + std::string(text) + "'");
  }
  std::size_t block = 0;
  for (char c : text.substr(kPrefix.size(), dot - kPrefix.size())) {
    if (c < '0' || c > '9') throw ConfigError("malformed layer id '" + std::string(text) + "'");
    block = block * 10 + static_cast<std::size_t>(c - '0');
  }
  return {block, parse_projection(text.substr(dot + 1))};
}

std::vector<LayerId> attention_targets(std::size_t n_layers, std::span<const Projection> projections) {
  std::vector<LayerId> out;
  for (std::size_t b = 0; b < n_layers; ++b) {
    for (auto p : projections) out.push_back({b, p});
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> BasicAdapterSet<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  out.reserve(adapters.size() * 2);
  for (const auto& ad : adapters) {
    out.push_back(ad.a);
    out.push_back(ad.b);
  }
  return out;
}

template <typename T>
bool BasicAdapterSet<T>::has_duplicate_layers() const {
  std::set<LayerId> seen;
  for (const auto& ad : adapters) {
    if (!seen.insert(ad.layer).second) return true;
  }
  return false;
}

template <typename T>
BasicAdapterSet<T> make_adapter_set(const EncoderConfig& config, std::size_t rank, std::span<const LayerId> targets,
                                    std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d_model;
  if (rank == 0 || rank > d) {
    throw ConfigError("rank must be in [1, " + std::to_string(d) + "], got " + std::to_string(rank));
  }
  if (targets.empty()) throw ConfigError("target_layers must not be empty");
  std::set<LayerId> seen;
  for (const auto& id : targets) {
    if (id.block >= config.n_layers) throw ConfigError("target layer " + to_string(id) + " does not exist");
    if (!seen.insert(id).second) throw ConfigError("duplicate target layer " + to_string(id));
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  BasicAdapterSet<T> set;
  set.encoder_fingerprint = config.fingerprint();
  for (const auto& id : targets) {
    std::vector<T> a(rank * d);
    for (auto& v : a) v = static_cast<T>(normal(rng));
    set.adapters.push_back({id, BasicTensor<T>({rank, d}, std::move(a)), BasicTensor<T>::zeros({d, rank}), T(1)});
  }
  return set;
}

template <typename T>
BasicTensor<T> apply_lora(const BasicLoraAdapter<T>& adapter, const BasicTensor<T>& x, const BasicTensor<T>& base_out,
                          T multiplier) {
  const auto& a = adapter.a;
  const auto& b = adapter.b;
  if (a.dims() != 2 || b.dims() != 2 || a.dim(0) != b.dim(1)) {
    throw DimensionError("adapter " + to_string(adapter.layer) + ": A " + to_string(a.shape()) + " and B " +
                         to_string(b.shape()) + " disagree on rank");
  }
  if (x.dims() != 2 || x.dim(1) != a.dim(1)) {
    throw DimensionError("adapter " + to_string(adapter.layer) + ": input " + to_string(x.shape()) +
                         " incompatible with A " + to_string(a.shape()));
  }
  if (base_out.dims() != 2 || base_out.dim(0) != x.dim(0) || base_out.dim(1) != b.dim(0)) {
    throw DimensionError("adapter " + to_string(adapter.layer) + ": output " + to_string(base_out.shape()) +
                         " incompatible with B " + to_string(b.shape()));
  }
  const T alpha = multiplier * adapter.scale;
  if (alpha == T(0)) return base_out;
  auto delta = matmul(matmul(x, transpose(a)), transpose(b));
  return add(base_out, scale(delta, alpha));
}

template <typename T>
void set_multiplier(BasicAdapterSet<T>& set, T alpha) {
  if (!std::isfinite(alpha)) throw ContractError("slider multiplier must be finite");
  set.multiplier = alpha;
}

namespace {

template <typename T>
bool content_less(const BasicLoraAdapter<T>& x, const BasicLoraAdapter<T>& y) {
  if (x.layer != y.layer) return x.layer < y.layer;
  if (x.scale != y.scale) return x.scale < y.scale;
  if (x.rank() != y.rank()) return x.rank() < y.rank();
  auto xa = x.a.data(), ya = y.a.data();
  if (!std::equal(xa.begin(), xa.end(), ya.begin(), ya.end())) {
    return std::lexicographical_compare(xa.begin(), xa.end(), ya.begin(), ya.end());
  }
  auto xb = x.b.data(), yb = y.b.data();
  return std::lexicographical_compare(xb.begin(), xb.end(), yb.begin(), yb.end());
}

}  // namespace

template <typename T>
BasicAdapterSet<T> compose(std::span<const BasicAdapterSet<T>> sets, std::span<const T> alphas) {
  if (sets.empty()) throw ContractError("compose needs at least one adapter set");
  if (sets.size() != alphas.size()) {
    throw ContractError("compose got " + std::to_string(sets.size()) + " sets but " + std::to_string(alphas.size()) +
                        " multipliers");
  }
  BasicAdapterSet<T> out;
  out.encoder_fingerprint = sets.front().encoder_fingerprint;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (!std::isfinite(alphas[i])) throw ContractError("slider multiplier must be finite");
    if (sets[i].encoder_fingerprint != out.encoder_fingerprint) {
      throw ConfigError("cannot compose adapters for encoder " + sets[i].encoder_fingerprint + " with adapters for " +
                        out.encoder_fingerprint);
    }
    for (const auto& ad : sets[i].adapters) {
      const T term = alphas[i] * ad.scale;
      if (term == T(0)) continue;
      out.adapters.push_back({ad.layer, ad.a, ad.b, term});
    }
  }
  std::stable_sort(out.adapters.begin(), out.adapters.end(), content_less<T>);
  return out;
}

template <typename T>
BasicTensor<T> merged_weight(const BasicTensor<T>& base, const BasicAdapterSet<T>& set, LayerId layer) {
  if (base.dims() != 2) throw DimensionError("merged_weight: base must be a matrix, got " + to_string(base.shape()));
  const std::size_t rows = base.dim(0), cols = base.dim(1);
  auto w = base.detach();
  auto wd = w.mutable_data();
  for (const auto& ad : set.adapters) {
    if (ad.layer != layer) continue;
    const std::size_t r = ad.rank();
    if (ad.b.dim(0) != rows || ad.a.dim(1) != cols || ad.b.dim(1) != r) {
      throw DimensionError("adapter " + to_string(ad.layer) + " does not fit weight " + to_string(base.shape()));
    }
    const T alpha = set.multiplier * ad.scale;
    if (alpha == T(0)) continue;
    auto ad_a = ad.a.data();
    auto ad_b = ad.b.data();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < r; ++p) {
          s += static_cast<double>(ad_b[i * r + p]) * static_cast<double>(ad_a[p * cols + j]);
        }
        wd[i * cols + j] = static_cast<T>(static_cast<double>(wd[i * cols + j]) + static_cast<double>(alpha) * s);
      }
    }
  }
  return w;
}

template <typename T>
void validate_against(const BasicAdapterSet<T>& set, const EncoderConfig& config) {
  const auto fp = config.fingerprint();
  if (!set.encoder_fingerprint.empty() && set.encoder_fingerprint != fp) {
    throw ConfigError("adapter set was trained for encoder " + set.encoder_fingerprint + ", not " + fp);
  }
  const std::size_t d = config.d_model;
  for (const auto& ad : set.adapters) {
    if (ad.layer.block >= config.n_layers) {
      throw ConfigError("adapter targets " + to_string(ad.layer) + " but the encoder has " +
                        std::to_string(config.n_layers) + " blocks");
    }
    if (ad.a.dims() != 2 || ad.b.dims() != 2 || ad.a.dim(1) != d || ad.b.dim(0) != d || ad.a.dim(0) != ad.b.dim(1)) {
      throw DimensionError("adapter " + to_string(ad.layer) + " shapes A " + to_string(ad.a.shape()) + ", B " +
                           to_string(ad.b.shape()) + " do not fit d_model " + std::to_string(d));
    }
  }
}

#define TSLIDER_INSTANTIATE_LORA(T)                                                                          \
  template struct BasicAdapterSet<T>;                                                                        \
  template BasicAdapterSet<T> make_adapter_set<T>(const EncoderConfig&, std::size_t, std::span<const LayerId>, \
                                                  std::uint64_t);                                            \
  template BasicTensor<T> apply_lora(const BasicLoraAdapter<T>&, const BasicTensor<T>&, const BasicTensor<T>&, T); \
  template void set_multiplier(BasicAdapterSet<T>&, T);                                                      \
  template BasicAdapterSet<T> compose(std::span<const BasicAdapterSet<T>>, std::span<const T>);              \
  template BasicTensor<T> merged_weight(const BasicTensor<T>&, const BasicAdapterSet<T>&, LayerId);          \
  template void validate_against(const BasicAdapterSet<T>&, const EncoderConfig&);

TSLIDER_INSTANTIATE_LORA(float)
TSLIDER_INSTANTIATE_LORA(double)

#undef TSLIDER_INSTANTIATE_LORA

}  // namespace tslider
