#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslider/artifact.hpp"
#include "tslider/encoder.hpp"

namespace tslider {

inline constexpr int kMaxTimestep = 1000;

/// Denoising runs from high t to low t. Sliders are off while t > t_gate.
struct GateSchedule {
  int t_gate = 800;
  float alpha_on = 1.0f;

  void validate() const;
};

/// 0 for t > t_gate, alpha_on for t <= t_gate. Throws ContractError for t
/// outside [0, 1000].
float gate_multiplier(const GateSchedule& schedule, int t);

struct SliderUse {
  const SliderArtifact* slider = nullptr;
  float alpha = 0.0f;
  std::string label;
};

struct ConditioningRequest {
  std::string prompt;
  std::vector<SliderUse> sliders;
  std::optional<int> timestep;
};

/// Effective alpha of every slider after gating.
std::vector<float> effective_alphas(const ConditioningRequest& request, int t_gate);

/// Per-encoder adapter sets for the request, or empty sets when no slider
/// applies. Throws ConfigError naming a slider trained for other encoders.
std::vector<AdapterSet> resolve_adapters(const ConditioningRequest& request, std::span<const TextEncoder> encoders,
                                         int t_gate);

/// Encodes the prompt with every slider composed at its (gated) alpha.
std::vector<EncodingOutput> condition(const ConditioningRequest& request, std::span<const TextEncoder> encoders,
                                      int t_gate = 800);

nlohmann::ordered_json request_to_json(const ConditioningRequest& request, int t_gate);

}  // namespace tslider
