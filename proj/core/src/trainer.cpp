#include "tslider/trainer.hpp"

#include <cmath>
#include <random>

#include "tslider/errors.hpp"

namespace tslider {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be non-negative");
  if (rank < 1) throw ConfigError("rank must be at least 1");
  if (projections.empty()) throw ConfigError("projections must not be empty");
  if (!std::isfinite(loss_weights.tokenwise) || !std::isfinite(loss_weights.pooled) || loss_weights.tokenwise < 0 ||
      loss_weights.pooled < 0) {
    throw ConfigError("loss_weights must be finite and non-negative");
  }
}

// ---------------------------------------------------------------------------
// Targets

template <typename T>
std::optional<BasicEncoderTarget<T>> preserved_direction(const BasicTextEncoder<T>& encoder, const PromptSpec& spec,
                                                         QMode mode) {
  const auto preserved = spec.flattened_preserved();
  if (preserved.empty()) return std::nullopt;
  std::optional<BasicEncoderTarget<T>> sum;
  for (const auto& q : preserved) {
    const std::string pos_parts[] = {spec.positive, q};
    const std::string neg_parts[] = {spec.negative, q};
    const auto plus = encoder.encode(join_prompt(pos_parts));
    const auto minus = encoder.encode(join_prompt(neg_parts));
    BasicEncoderTarget<T> diff{sub(plus.tokenwise, minus.tokenwise), sub(plus.pooled, minus.pooled)};
    if (!sum) {
      sum = std::move(diff);
    } else {
      sum = BasicEncoderTarget<T>{add(sum->tokenwise, diff.tokenwise), add(sum->pooled, diff.pooled)};
    }
  }
  if (mode == QMode::kMean) {
    const T n = static_cast<T>(preserved.size());
    auto divide = [n](const BasicTensor<T>& t) {
      auto out = t.detach();
      for (auto& v : out.mutable_data()) v /= n;
      return out;
    };
    sum = BasicEncoderTarget<T>{divide(sum->tokenwise), divide(sum->pooled)};
  }
  return sum;
}

template <typename T>
BasicEncoderTarget<T> target_for_prompt(const BasicTextEncoder<T>& encoder, std::string_view prompt,
                                        const std::optional<BasicEncoderTarget<T>>& direction) {
  const auto base = encoder.encode(prompt);
  if (!direction) return {base.tokenwise.detach(), base.pooled.detach()};
  return {add(base.tokenwise, direction->tokenwise), add(base.pooled, direction->pooled)};
}

template <typename T>
BasicEncoderTarget<T> build_target(const BasicTextEncoder<T>& encoder, const PromptSpec& spec, QMode mode) {
  spec.validate();
  return target_for_prompt(encoder, spec.target, preserved_direction(encoder, spec, mode));
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
BasicTensor<T> slider_loss(std::span<const BasicEncodingOutput<T>> adapted,
                           std::span<const BasicEncoderTarget<T>> targets, const LossWeights& weights,
                           bool mask_padding) {
  if (adapted.empty()) throw ContractError("slider_loss needs at least one encoder output");
  if (adapted.size() != targets.size()) {
    throw DimensionError("slider_loss got " + std::to_string(adapted.size()) + " outputs but " +
                         std::to_string(targets.size()) + " targets");
  }
  BasicTensor<T> total;
  for (std::size_t e = 0; e < adapted.size(); ++e) {
    const auto& out = adapted[e];
    const auto& tgt = targets[e];
    BasicTensor<T> tok_out = out.tokenwise;
    BasicTensor<T> tok_tgt = tgt.tokenwise;
    if (tok_out.shape() != tok_tgt.shape()) {
      throw DimensionError("tokenwise shapes " + to_string(tok_out.shape()) + " and " + to_string(tok_tgt.shape()) +
                           " differ for encoder " + std::to_string(e));
    }
    if (mask_padding) {
      tok_out = slice_rows(tok_out, 0, out.eos_pos + 1);
      tok_tgt = slice_rows(tok_tgt, 0, out.eos_pos + 1);
    }
    auto term = add(scale(mse(tok_out, tok_tgt), static_cast<T>(weights.tokenwise)),
                    scale(mse(out.pooled, tgt.pooled), static_cast<T>(weights.pooled)));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

// ---------------------------------------------------------------------------
// AdamW

template <typename T>
AdamW<T>::AdamW(std::vector<BasicTensor<T>> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) throw ContractError("AdamW: parameter " + std::to_string(i) + " has no gradient");
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto data = params_[i].mutable_data();
    auto grad = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = static_cast<double>(grad[j]);
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double p = static_cast<double>(data[j]);
      data[j] = static_cast<T>(p - config_.learning_rate * (m_hat / (std::sqrt(v_hat) + config_.eps) +
                                                            config_.weight_decay * p));
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Training loop

std::uint64_t adapter_seed(std::uint64_t seed, const std::string& fingerprint) {
  std::uint64_t h = 0;
  for (char c : fingerprint.substr(0, 16)) {
    h <<= 4;
    if (c >= '0' && c <= '9') h |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') h |= static_cast<std::uint64_t>(c - 'a' + 10);
  }
  return seed ^ h;
}

TrainResult train_slider(std::span<const TextEncoder> encoders, const PromptSpec& spec, const TrainConfig& config,
                         const ProgressFn& progress) {
  if (encoders.empty()) throw ContractError("train_slider needs at least one encoder");
  spec.validate();
  config.validate();

  // Candidate training prompts: c_t, then [c_t, q] when augmenting.
  std::vector<std::string> prompts{spec.target};
  if (config.augment) {
    for (const auto& q : spec.flattened_preserved()) {
      const std::string parts[] = {spec.target, q};
      prompts.push_back(join_prompt(parts));
    }
  }

  TrainResult result;
  std::vector<std::vector<EncoderTarget>> targets(prompts.size());
  std::vector<std::vector<TokenSeq>> tokens(prompts.size());
  std::vector<AdapterSet> sets;
  for (const auto& enc : encoders) {
    const auto direction = preserved_direction(enc, spec, config.q_mode);
    for (std::size_t y = 0; y < prompts.size(); ++y) {
      targets[y].push_back(target_for_prompt(enc, prompts[y], direction));
      tokens[y].push_back(enc.tokenize(prompts[y]));
    }
    const auto layers = attention_targets(enc.weights.config.n_layers, config.projections);
    sets.push_back(make_adapter_set<float>(enc.weights.config, config.rank, layers,
                                           adapter_seed(config.seed, enc.fingerprint())));
  }
  result.targets = targets.front();

  std::vector<Tensor> params;
  for (auto& s : sets) {
    for (auto& p : s.parameters()) {
      p.set_requires_grad(true);
      params.push_back(p);
    }
  }
  AdamW<float> optimizer(params, AdamWConfig{config.learning_rate, config.beta1, config.beta2, config.eps,
                                             config.weight_decay});

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, prompts.size() - 1);
  result.loss_history.reserve(config.epochs);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::size_t y = config.augment ? pick(rng) : 0;
    Tape<float> tape;
    TapeScope<float> scope(tape);
    std::vector<EncodingOutput> outputs;
    for (std::size_t e = 0; e < encoders.size(); ++e) {
      outputs.push_back(encode_text(encoders[e].weights, &sets[e], tokens[y][e]));
    }
    auto loss = slider_loss(std::span<const EncodingOutput>(outputs), std::span<const EncoderTarget>(targets[y]),
                            config.loss_weights, config.mask_padding);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(value);
    if (progress) progress(epoch, value);
    tape.backward(loss);
    optimizer.step();
    optimizer.zero_grad();
  }
  for (auto& p : params) p.set_requires_grad(false);

  auto& meta = result.slider.meta;
  for (const auto& enc : encoders) meta.encoder_fingerprints.push_back(enc.fingerprint());
  meta.rank = config.rank;
  for (const auto& ad : sets.front().adapters) meta.target_layers.push_back(to_string(ad.layer));
  meta.prompt_spec = prompt_to_json(spec, config.q_mode);
  meta.epochs = config.epochs;
  meta.learning_rate = config.learning_rate;
  meta.seed = config.seed;
  result.slider.sets = std::move(sets);
  return result;
}

#define TSLIDER_INSTANTIATE_TRAINER(T)                                                                               \
  template std::optional<BasicEncoderTarget<T>> preserved_direction(const BasicTextEncoder<T>&, const PromptSpec&,   \
                                                                    QMode);                                          \
  template BasicEncoderTarget<T> target_for_prompt(const BasicTextEncoder<T>&, std::string_view,                     \
                                                   const std::optional<BasicEncoderTarget<T>>&);                     \
  template BasicEncoderTarget<T> build_target(const BasicTextEncoder<T>&, const PromptSpec&, QMode);                 \
  template BasicTensor<T> slider_loss(std::span<const BasicEncodingOutput<T>>, std::span<const BasicEncoderTarget<T>>, \
                                      const LossWeights&, bool);                                                     \
  template class AdamW<T>;

TSLIDER_INSTANTIATE_TRAINER(float)
TSLIDER_INSTANTIATE_TRAINER(double)

#undef TSLIDER_INSTANTIATE_TRAINER

}  // namespace tslider
