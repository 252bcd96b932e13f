#include "tslider/runtime.hpp"

#include <cmath>

#include "tslider/errors.hpp"

namespace tslider {

void GateSchedule::validate() const {
  if (t_gate < 0 || t_gate > kMaxTimestep) {
    throw ConfigError("t_gate must be in [0, 1000], got " + std::to_string(t_gate));
  }
  if (!std::isfinite(alpha_on)) throw ConfigError("alpha_on must be finite");
}

float gate_multiplier(const GateSchedule& schedule, int t) {
  schedule.validate();
  if (t < 0 || t > kMaxTimestep) throw ContractError("timestep must be in [0, 1000], got " + std::to_string(t));
  return t > schedule.t_gate ? 0.0f : schedule.alpha_on;
}

std::vector<float> effective_alphas(const ConditioningRequest& request, int t_gate) {
  std::vector<float> alphas;
  for (const auto& use : request.sliders) {
    if (!std::isfinite(use.alpha)) throw ConfigError("slider " + use.label + " has a non-finite alpha");
    alphas.push_back(request.timestep ? gate_multiplier(GateSchedule{t_gate, use.alpha}, *request.timestep)
                                      : use.alpha);
  }
  return alphas;
}

std::vector<AdapterSet> resolve_adapters(const ConditioningRequest& request, std::span<const TextEncoder> encoders,
                                         int t_gate) {
  for (const auto& use : request.sliders) {
    if (use.slider == nullptr) throw ContractError("slider " + use.label + " is not loaded");
    check_fingerprints(*use.slider, encoders, use.label);
  }
  std::vector<AdapterSet> sets(encoders.size());
  for (std::size_t e = 0; e < encoders.size(); ++e) sets[e].encoder_fingerprint = encoders[e].fingerprint();
  if (request.sliders.empty()) return sets;

  const auto alphas = effective_alphas(request, t_gate);
  for (std::size_t e = 0; e < encoders.size(); ++e) {
    std::vector<AdapterSet> per_slider;
    for (const auto& use : request.sliders) per_slider.push_back(use.slider->sets.at(e));
    sets[e] = compose(std::span<const AdapterSet>(per_slider), std::span<const float>(alphas));
  }
  return sets;
}

std::vector<EncodingOutput> condition(const ConditioningRequest& request, std::span<const TextEncoder> encoders,
                                      int t_gate) {
  if (encoders.empty()) throw ContractError("condition needs at least one encoder");
  const auto sets = resolve_adapters(request, encoders, t_gate);
  std::vector<EncodingOutput> outputs;
  for (std::size_t e = 0; e < encoders.size(); ++e) {
    const AdapterSet* adapters = sets[e].adapters.empty() ? nullptr : &sets[e];
    outputs.push_back(encoders[e].encode(request.prompt, adapters));
  }
  return outputs;
}

nlohmann::ordered_json request_to_json(const ConditioningRequest& request, int t_gate) {
  nlohmann::ordered_json j;
  j["prompt"] = request.prompt;
  j["sliders"] = nlohmann::ordered_json::array();
  for (const auto& use : request.sliders) {
    j["sliders"].push_back({{"label", use.label}, {"alpha", static_cast<double>(use.alpha)}});
  }
  j["timestep"] = request.timestep ? nlohmann::ordered_json(*request.timestep) : nlohmann::ordered_json(nullptr);
  j["t_gate"] = t_gate;
  return j;
}

}  // namespace tslider
