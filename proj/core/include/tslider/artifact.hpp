#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslider/container.hpp"
#include "tslider/encoder.hpp"
#include "tslider/lora.hpp"

namespace tslider {

inline constexpr int kFormatVersion = 1;

struct SliderMetadata {
  int format_version = kFormatVersion;
  /// One per encoder, in the order of the adapter sets.
  std::vector<std::string> encoder_fingerprints;
  std::size_t rank = 4;
  std::vector<std::string> target_layers;
  nlohmann::ordered_json prompt_spec = nlohmann::ordered_json::object();
  std::size_t epochs = 0;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  bool composed = false;
  /// For composed sliders: {"prompt_spec", "alpha"} per source.
  nlohmann::ordered_json components = nlohmann::ordered_json::array();
};

/// Trained (or composed) adapters for one or more encoders. A single
/// multiplier applies to every set.
struct SliderArtifact {
  SliderMetadata meta;
  std::vector<AdapterSet> sets;

  void set_multiplier(float alpha);
};

Container slider_to_container(const SliderArtifact& slider);
SliderArtifact slider_from_container(const Container& container);
void save_slider(const std::filesystem::path& path, const SliderArtifact& slider);
SliderArtifact load_slider(const std::filesystem::path& path);

/// Weight-space composition of whole sliders; every slider must target the
/// same encoders in the same order.
SliderArtifact compose_sliders(std::span<const SliderArtifact> sliders, std::span<const float> alphas);

/// Throws ConfigError naming `label` when the slider was trained for
/// different encoders.
void check_fingerprints(const SliderArtifact& slider, std::span<const TextEncoder> encoders, const std::string& label);

Container encoder_to_container(const TextEncoder& encoder);
TextEncoder encoder_from_container(const Container& container);
void save_encoder(const std::filesystem::path& path, const TextEncoder& encoder);
TextEncoder load_encoder(const std::filesystem::path& path);

/// Export for downstream samplers: "tokenwise.<i>" and "pooled.<i>" per
/// encoder plus the request echo in the metadata.
Container conditioning_to_container(const nlohmann::ordered_json& request, std::span<const EncodingOutput> outputs);

}  // namespace tslider
