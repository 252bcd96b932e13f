#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tslider/artifact.hpp"
#include "tslider/encoder.hpp"
#include "tslider/prompt_spec.hpp"
#include "tslider/tensor.hpp"

namespace tslider {

struct LossWeights {
  double tokenwise = 1.0;
  double pooled = 1.0;
};

struct TrainConfig {
  std::size_t epochs = 500;
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  QMode q_mode = QMode::kSum;
  LossWeights loss_weights;
  std::size_t rank = 4;
  std::vector<Projection> projections{kAttentionProjections.begin(), kAttentionProjections.end()};
  /// Train on y drawn from {c_t} and {[c_t, q]} instead of c_t alone.
  bool augment = false;
  /// Drop rows after EOS from the tokenwise term.
  bool mask_padding = false;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Target embedding for one encoder.
template <typename T>
struct BasicEncoderTarget {
  BasicTensor<T> tokenwise;
  BasicTensor<T> pooled;
};

using EncoderTarget = BasicEncoderTarget<float>;

/// sum over q of (tau([c+, q]) - tau([c-, q])), divided by |Q| in kMean mode.
/// Empty when the spec preserves nothing.
template <typename T>
std::optional<BasicEncoderTarget<T>> preserved_direction(const BasicTextEncoder<T>& encoder, const PromptSpec& spec,
                                                         QMode mode);

/// tau(prompt) + direction, using the base encoder only.
template <typename T>
BasicEncoderTarget<T> target_for_prompt(const BasicTextEncoder<T>& encoder, std::string_view prompt,
                                        const std::optional<BasicEncoderTarget<T>>& direction);

/// tau_t = tau(c_t) + sum_q (tau([c+, q]) - tau([c-, q])), applied separately to
/// the tokenwise and pooled outputs.
template <typename T>
BasicEncoderTarget<T> build_target(const BasicTextEncoder<T>& encoder, const PromptSpec& spec, QMode mode);

/// Sum over encoders of tokenwise_w * MSE(tokenwise) + pooled_w * MSE(pooled).
template <typename T>
BasicTensor<T> slider_loss(std::span<const BasicEncodingOutput<T>> adapted,
                           std::span<const BasicEncoderTarget<T>> targets, const LossWeights& weights,
                           bool mask_padding = false);

struct AdamWConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<BasicTensor<T>> params, AdamWConfig config);

  /// Throws ContractError if any parameter has no gradient.
  void step();
  void zero_grad();
  std::size_t step_count() const noexcept { return step_; }

 private:
  std::vector<BasicTensor<T>> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

struct TrainResult {
  SliderArtifact slider;
  /// Loss at each epoch, measured before that epoch's update.
  std::vector<double> loss_history;
  /// Targets for c_t, one per encoder, computed once before training.
  std::vector<EncoderTarget> targets;
};

using ProgressFn = std::function<void(std::size_t epoch, double loss)>;

/// Seed for an encoder's adapter initialization; depends on the encoder
/// identity, not its position in a multi-encoder run.
std::uint64_t adapter_seed(std::uint64_t seed, const std::string& fingerprint);

/// Minimizes the slider objective over fresh LoRA adapters on every encoder
/// (base weights untouched). Throws NumericalError naming the epoch when the
/// loss stops being finite.
TrainResult train_slider(std::span<const TextEncoder> encoders, const PromptSpec& spec, const TrainConfig& config,
                         const ProgressFn& progress = {});

}  // namespace tslider
