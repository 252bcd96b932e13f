#include "tslider/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tslider/encoder.hpp"
#include "tslider/errors.hpp"
#include "tslider/trainer.hpp"

namespace tslider {

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
  if (!options.vocab) throw ContractError("gradcheck needs a vocabulary");
  if (!(options.step > 0.0)) throw ConfigError("step must be positive");
  EncoderConfig config = options.config;
  config.seed = options.seed;
  if (config.vocab_size == 0) config.vocab_size = options.vocab->size();
  config.validate();

  BasicTextEncoder<double> encoder{init_encoder<float>(config).cast<double>(), options.vocab};
  const auto targets = std::vector{build_target(encoder, options.spec, options.q_mode)};
  const auto tokens = encoder.tokenize(options.spec.target);

  auto set = make_adapter_set<double>(config, options.rank, attention_targets(config.n_layers), options.seed);
  if (options.b_init_std != 0.0) {
    std::mt19937_64 rng(options.seed + 1);
    std::normal_distribution<double> dist(0.0, options.b_init_std);
    for (auto& ad : set.adapters) {
      for (auto& v : ad.b.mutable_data()) v = dist(rng);
    }
  }
  set.encoder_fingerprint = config.fingerprint();

  auto loss_value = [&]() {
    const std::vector outputs{encode_text(encoder.weights, &set, tokens)};
    return slider_loss(std::span<const BasicEncodingOutput<double>>(outputs),
                       std::span<const BasicEncoderTarget<double>>(targets), LossWeights{})
        .item();
  };

  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    for (auto& p : set.parameters()) p.set_requires_grad(true);
    const std::vector outputs{encode_text(encoder.weights, &set, tokens)};
    auto loss = slider_loss(std::span<const BasicEncodingOutput<double>>(outputs),
                            std::span<const BasicEncoderTarget<double>>(targets), LossWeights{});
    tape.backward(loss);
  }

  GradcheckReport report;
  std::mt19937_64 pick_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  for (auto& ad : set.adapters) {
    for (int which = 0; which < 2; ++which) {
      auto& tensor = which == 0 ? ad.a : ad.b;
      const std::string name = to_string(ad.layer) + (which == 0 ? ".A" : ".B");
      std::vector<std::size_t> indices(tensor.numel());
      std::iota(indices.begin(), indices.end(), std::size_t{0});
      if (options.samples_per_tensor != 0 && options.samples_per_tensor < indices.size()) {
        std::shuffle(indices.begin(), indices.end(), pick_rng);
        indices.resize(options.samples_per_tensor);
        std::sort(indices.begin(), indices.end());
      }
      const auto grad = tensor.has_grad() ? std::vector<double>(tensor.grad().begin(), tensor.grad().end())
                                          : std::vector<double>(tensor.numel(), 0.0);
      for (std::size_t idx : indices) {
        auto data = tensor.mutable_data();
        const double original = data[idx];
        data[idx] = original + options.step;
        const double plus = loss_value();
        data[idx] = original - options.step;
        const double minus = loss_value();
        data[idx] = original;
        const double numeric = (plus - minus) / (2.0 * options.step);
        const double analytic = grad[idx];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
        const double rel = std::abs(analytic - numeric) / denom;
        ++report.checked;
        if (report.worst_parameter.empty() || !(rel <= report.max_rel_error)) {
          report.max_rel_error = rel;
          report.worst_parameter = name + "[" + std::to_string(idx) + "]";
        }
      }
    }
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace tslider
