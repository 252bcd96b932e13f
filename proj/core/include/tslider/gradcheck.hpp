#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "tslider/encoder_config.hpp"
#include "tslider/prompt_spec.hpp"
#include "tslider/tokenizer.hpp"

namespace tslider {

/// Compares analytic LoRA gradients of the slider loss against central
/// finite differences. Everything runs in double precision.
struct GradcheckOptions {
  EncoderConfig config;
  std::shared_ptr<const Vocab> vocab;
  PromptSpec spec{"person", "person, old", "person, young", {{"male", "female"}}};
  QMode q_mode = QMode::kSum;
  std::size_t rank = 4;
  /// Overrides config.seed and seeds the adapters.
  std::uint64_t seed = 0;
  double step = 1e-3;
  double tolerance = 1e-3;
  /// Denominator floor for the relative error.
  double abs_floor = 1e-8;
  /// Elements checked per A/B tensor, chosen at random; 0 checks all.
  std::size_t samples_per_tensor = 8;
  /// Standard deviation of B. With 0, B starts at zero as in training and
  /// every A gradient vanishes.
  double b_init_std = 0.02;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
  bool passed = false;
};

GradcheckReport run_gradcheck(const GradcheckOptions& options);

}  // namespace tslider
