#include "tslider/encoder.hpp"

#include <random>

#include "tslider/errors.hpp"
#include "tslider/sha256.hpp"

namespace tslider {

// ---------------------------------------------------------------------------
// EncoderConfig

void EncoderConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(kFirstTokenId)) {
    throw ConfigError("vocab_size must exceed the " + std::to_string(kFirstTokenId) + " reserved ids");
  }
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  if (d_model == 0) throw ConfigError("d_model must be positive");
  if (n_heads == 0) throw ConfigError("n_heads must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (n_layers == 0) throw ConfigError("n_layers must be positive");
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
}

std::string EncoderConfig::fingerprint() const {
  nlohmann::json j = *this;
  return sha256_hex(j.dump()).substr(0, 16);
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"max_len", c.max_len}, {"d_model", c.d_model},
                     {"n_heads", c.n_heads},       {"n_layers", c.n_layers}, {"mlp_ratio", c.mlp_ratio},
                     {"seed", c.seed},             {"causal", c.causal}};
}

namespace {
template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if constexpr (std::is_same_v<V, bool>) {
    if (!v.is_boolean()) throw ConfigError(std::string("encoder config field '") + key + "' must be a boolean");
  } else {
    if (!v.is_number_unsigned()) {
      throw ConfigError(std::string("encoder config field '") + key + "' must be a non-negative integer");
    }
  }
  out = v.get<V>();
}
}  // namespace

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  if (!j.is_object()) throw ConfigError("encoder config must be a JSON object");
  read_field(j, "vocab_size", c.vocab_size);
  read_field(j, "max_len", c.max_len);
  read_field(j, "d_model", c.d_model);
  read_field(j, "n_heads", c.n_heads);
  read_field(j, "n_layers", c.n_layers);
  read_field(j, "mlp_ratio", c.mlp_ratio);
  read_field(j, "seed", c.seed);
  read_field(j, "causal", c.causal);
}

// ---------------------------------------------------------------------------
// Weights

namespace {

std::string block_prefix(std::size_t i) { return "blocks." + std::to_string(i) + "."; }

template <typename T>
const BasicTensor<T>& lookup(const std::map<std::string, BasicTensor<T>>& tensors, const std::string& name,
                             const Shape& expected) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("missing encoder tensor '" + name + "'");
  if (it->second.shape() != expected) {
    throw FormatError("encoder tensor '" + name + "' has shape " + to_string(it->second.shape()) + ", expected " +
                      to_string(expected));
  }
  return it->second;
}

}  // namespace

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> BasicEncoderWeights<T>::named_tensors() const {
  std::vector<std::pair<std::string, BasicTensor<T>>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto p = block_prefix(i);
    const auto& b = blocks[i];
    out.emplace_back(p + "ln1.gain", b.ln1_gain);
    out.emplace_back(p + "ln1.bias", b.ln1_bias);
    out.emplace_back(p + "attn.q.weight", b.q_weight);
    out.emplace_back(p + "attn.q.bias", b.q_bias);
    out.emplace_back(p + "attn.k.weight", b.k_weight);
    out.emplace_back(p + "attn.k.bias", b.k_bias);
    out.emplace_back(p + "attn.v.weight", b.v_weight);
    out.emplace_back(p + "attn.v.bias", b.v_bias);
    out.emplace_back(p + "attn.out.weight", b.out_weight);
    out.emplace_back(p + "attn.out.bias", b.out_bias);
    out.emplace_back(p + "ln2.gain", b.ln2_gain);
    out.emplace_back(p + "ln2.bias", b.ln2_bias);
    out.emplace_back(p + "mlp.in.weight", b.mlp_in_weight);
    out.emplace_back(p + "mlp.in.bias", b.mlp_in_bias);
    out.emplace_back(p + "mlp.out.weight", b.mlp_out_weight);
    out.emplace_back(p + "mlp.out.bias", b.mlp_out_bias);
  }
  out.emplace_back("final_ln.gain", final_gain);
  out.emplace_back("final_ln.bias", final_bias);
  return out;
}

template <typename T>
BasicEncoderWeights<T> BasicEncoderWeights<T>::from_named(const EncoderConfig& config,
                                                          const std::map<std::string, BasicTensor<T>>& t) {
  config.validate();
  const std::size_t d = config.d_model;
  const std::size_t hidden = d * config.mlp_ratio;
  BasicEncoderWeights w;
  w.config = config;
  w.token_embedding = lookup(t, "token_embedding", {config.vocab_size, d});
  w.position_embedding = lookup(t, "position_embedding", {config.max_len, d});
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const auto p = block_prefix(i);
    BasicBlockWeights<T> b;
    b.ln1_gain = lookup(t, p + "ln1.gain", {d});
    b.ln1_bias = lookup(t, p + "ln1.bias", {d});
    b.q_weight = lookup(t, p + "attn.q.weight", {d, d});
    b.q_bias = lookup(t, p + "attn.q.bias", {d});
    b.k_weight = lookup(t, p + "attn.k.weight", {d, d});
    b.k_bias = lookup(t, p + "attn.k.bias", {d});
    b.v_weight = lookup(t, p + "attn.v.weight", {d, d});
    b.v_bias = lookup(t, p + "attn.v.bias", {d});
    b.out_weight = lookup(t, p + "attn.out.weight", {d, d});
    b.out_bias = lookup(t, p + "attn.out.bias", {d});
    b.ln2_gain = lookup(t, p + "ln2.gain", {d});
    b.ln2_bias = lookup(t, p + "ln2.bias", {d});
    b.mlp_in_weight = lookup(t, p + "mlp.in.weight", {hidden, d});
    b.mlp_in_bias = lookup(t, p + "mlp.in.bias", {hidden});
    b.mlp_out_weight = lookup(t, p + "mlp.out.weight", {d, hidden});
    b.mlp_out_bias = lookup(t, p + "mlp.out.bias", {d});
    w.blocks.push_back(std::move(b));
  }
  w.final_gain = lookup(t, "final_ln.gain", {d});
  w.final_bias = lookup(t, "final_ln.bias", {d});
  return w;
}

template <typename T>
std::size_t BasicEncoderWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t.numel();
  return n;
}

template <typename T>
const BasicTensor<T>& BasicEncoderWeights<T>::projection_weight(LayerId layer) const {
  if (layer.block >= blocks.size()) throw ConfigError("no block " + std::to_string(layer.block) + " in encoder");
  const auto& b = blocks[layer.block];
  switch (layer.proj) {
    case Projection::kQuery: return b.q_weight;
    case Projection::kKey: return b.k_weight;
    case Projection::kValue: return b.v_weight;
    case Projection::kOut: return b.out_weight;
  }
  throw ContractError("unknown projection");
}

template <typename T>
BasicEncoderWeights<T> init_encoder(const EncoderConfig& config) {
  config.validate();
  const std::size_t d = config.d_model;
  const std::size_t hidden = d * config.mlp_ratio;
  using Tn = BasicTensor<T>;
  std::map<std::string, Tn> t;
  t.emplace("token_embedding", Tn::zeros({config.vocab_size, d}));
  t.emplace("position_embedding", Tn::zeros({config.max_len, d}));
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    const auto p = block_prefix(i);
    t.emplace(p + "ln1.gain", Tn::filled({d}, T(1)));
    t.emplace(p + "ln1.bias", Tn::zeros({d}));
    for (const char* proj : {"q", "k", "v", "out"}) {
      t.emplace(p + "attn." + proj + ".weight", Tn::zeros({d, d}));
      t.emplace(p + "attn." + proj + ".bias", Tn::zeros({d}));
    }
    t.emplace(p + "ln2.gain", Tn::filled({d}, T(1)));
    t.emplace(p + "ln2.bias", Tn::zeros({d}));
    t.emplace(p + "mlp.in.weight", Tn::zeros({hidden, d}));
    t.emplace(p + "mlp.in.bias", Tn::zeros({hidden}));
    t.emplace(p + "mlp.out.weight", Tn::zeros({d, hidden}));
    t.emplace(p + "mlp.out.bias", Tn::zeros({d}));
  }
  t.emplace("final_ln.gain", Tn::filled({d}, T(1)));
  t.emplace("final_ln.bias", Tn::zeros({d}));

  auto w = BasicEncoderWeights<T>::from_named(config, t);

  // Fill in canonical order so the stream of draws is stable.
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& [name, tensor] : w.named_tensors()) {
    const bool gaussian = name.ends_with("embedding") || name.ends_with(".weight");
    if (!gaussian) continue;
    for (auto& v : tensor.mutable_data()) v = static_cast<T>(normal(rng));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename T>
BasicTensor<T> project(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                       LayerId layer, const BasicAdapterSet<T>* adapters) {
  auto out = linear(input, weight, bias);
  if (adapters == nullptr) return out;
  for (const auto& ad : adapters->adapters) {
    if (ad.layer == layer) out = apply_lora(ad, input, out, adapters->multiplier);
  }
  return out;
}

}  // namespace

template <typename T>
BasicEncodingOutput<T> encode_text(const BasicEncoderWeights<T>& w, const BasicAdapterSet<T>* adapters,
                                   const TokenSeq& seq) {
  const auto& cfg = w.config;
  if (seq.ids.size() != cfg.max_len) {
    throw ContractError("token sequence length " + std::to_string(seq.ids.size()) + " does not match max_len " +
                        std::to_string(cfg.max_len));
  }
  if (seq.eos_pos >= cfg.max_len) throw ContractError("eos_pos out of range");
  if (adapters != nullptr) validate_against(*adapters, cfg);

  auto x = add(gather_rows(w.token_embedding, std::span<const std::int32_t>(seq.ids)), w.position_embedding);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    const auto& b = w.blocks[i];
    auto h = layernorm(x, b.ln1_gain, b.ln1_bias);
    auto q = project(h, b.q_weight, b.q_bias, {i, Projection::kQuery}, adapters);
    auto k = project(h, b.k_weight, b.k_bias, {i, Projection::kKey}, adapters);
    auto v = project(h, b.v_weight, b.v_bias, {i, Projection::kValue}, adapters);
    auto a = attention(q, k, v, cfg.n_heads, cfg.causal);
    x = add(x, project(a, b.out_weight, b.out_bias, {i, Projection::kOut}, adapters));
    auto h2 = layernorm(x, b.ln2_gain, b.ln2_bias);
    auto m = gelu(linear(h2, b.mlp_in_weight, b.mlp_in_bias));
    x = add(x, linear(m, b.mlp_out_weight, b.mlp_out_bias));
  }
  auto tokenwise = layernorm(x, w.final_gain, w.final_bias);
  auto pooled = reshape(slice_rows(tokenwise, seq.eos_pos, seq.eos_pos + 1), {cfg.d_model});
  return {tokenwise, pooled, seq.eos_pos};
}

TextEncoder make_text_encoder(EncoderConfig config, Vocab vocab) {
  if (config.vocab_size == 0) config.vocab_size = vocab.size();
  if (config.vocab_size < vocab.size()) {
    throw ConfigError("vocab_size " + std::to_string(config.vocab_size) + " is smaller than the vocabulary (" +
                      std::to_string(vocab.size()) + " ids)");
  }
  return TextEncoder{init_encoder<float>(config), std::make_shared<const Vocab>(std::move(vocab))};
}

template struct BasicEncoderWeights<float>;
template struct BasicEncoderWeights<double>;
template BasicEncoderWeights<float> init_encoder<float>(const EncoderConfig&);
template BasicEncoderWeights<double> init_encoder<double>(const EncoderConfig&);
template BasicEncodingOutput<float> encode_text(const BasicEncoderWeights<float>&, const BasicAdapterSet<float>*,
                                                const TokenSeq&);
template BasicEncodingOutput<double> encode_text(const BasicEncoderWeights<double>&, const BasicAdapterSet<double>*,
                                                 const TokenSeq&);

}  // namespace tslider
