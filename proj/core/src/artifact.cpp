#include "tslider/artifact.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "tslider/errors.hpp"

namespace tslider {

namespace {

using ojson = nlohmann::ordered_json;

void require_kind(const Container& c, std::string_view kind) {
  const auto& m = c.metadata;
  if (!m.is_object() || !m.contains("kind") || !m["kind"].is_string() || m["kind"].get<std::string>() != kind) {
    throw FormatError("container is not a " + std::string(kind) + " file");
  }
  if (!m.contains("format_version") || !m["format_version"].is_number_integer() ||
      m["format_version"].get<int>() != kFormatVersion) {
    throw FormatError("unsupported " + std::string(kind) + " format_version");
  }
}

template <typename V>
V field(const ojson& m, const char* key) {
  try {
    return m.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("metadata field '") + key + "' missing or of the wrong type");
  }
}

}  // namespace

void SliderArtifact::set_multiplier(float alpha) {
  for (auto& s : sets) tslider::set_multiplier(s, alpha);
}

Container slider_to_container(const SliderArtifact& slider) {
  const auto& meta = slider.meta;
  if (meta.encoder_fingerprints.size() != slider.sets.size()) {
    throw ContractError("slider has " + std::to_string(slider.sets.size()) + " adapter sets but " +
                        std::to_string(meta.encoder_fingerprints.size()) + " encoder fingerprints");
  }
  Container c;
  auto& m = c.metadata;
  m["kind"] = "slider";
  m["format_version"] = meta.format_version;
  m["encoder_fingerprint"] = meta.encoder_fingerprints;
  m["rank"] = meta.rank;
  m["target_layers"] = meta.target_layers;
  m["prompt_spec"] = meta.prompt_spec;
  m["epochs"] = meta.epochs;
  m["learning_rate"] = meta.learning_rate;
  m["seed"] = meta.seed;
  m["composed"] = meta.composed;
  m["components"] = meta.components;
  m["adapters"] = ojson::array();
  for (std::size_t e = 0; e < slider.sets.size(); ++e) {
    std::map<LayerId, int> term_index;
    for (const auto& ad : slider.sets[e].adapters) {
      const int t = term_index[ad.layer]++;
      const std::string base = "enc" + std::to_string(e) + "." + to_string(ad.layer) + "." + std::to_string(t);
      m["adapters"].push_back({{"encoder", e},
                               {"layer", to_string(ad.layer)},
                               {"scale", static_cast<double>(ad.scale)},
                               {"a", base + ".A"},
                               {"b", base + ".B"}});
      c.tensors.push_back({base + ".A", ad.a});
      c.tensors.push_back({base + ".B", ad.b});
    }
  }
  return c;
}

SliderArtifact slider_from_container(const Container& c) {
  require_kind(c, "slider");
  const auto& m = c.metadata;
  SliderArtifact s;
  auto& meta = s.meta;
  meta.format_version = field<int>(m, "format_version");
  meta.encoder_fingerprints = field<std::vector<std::string>>(m, "encoder_fingerprint");
  meta.rank = field<std::size_t>(m, "rank");
  meta.target_layers = field<std::vector<std::string>>(m, "target_layers");
  meta.prompt_spec = m.contains("prompt_spec") ? m["prompt_spec"] : ojson::object();
  meta.epochs = field<std::size_t>(m, "epochs");
  meta.learning_rate = field<double>(m, "learning_rate");
  meta.seed = field<std::uint64_t>(m, "seed");
  meta.composed = field<bool>(m, "composed");
  meta.components = m.contains("components") ? m["components"] : ojson::array();
  if (meta.encoder_fingerprints.empty()) throw FormatError("slider lists no encoders");

  s.sets.resize(meta.encoder_fingerprints.size());
  for (std::size_t e = 0; e < s.sets.size(); ++e) s.sets[e].encoder_fingerprint = meta.encoder_fingerprints[e];
  if (!m.contains("adapters") || !m["adapters"].is_array()) throw FormatError("slider has no adapter list");
  for (const auto& rec : m["adapters"]) {
    const auto e = field<std::size_t>(rec, "encoder");
    if (e >= s.sets.size()) throw FormatError("adapter refers to encoder " + std::to_string(e) + " which is not listed");
    LoraAdapter ad;
    try {
      ad.layer = parse_layer_id(field<std::string>(rec, "layer"));
    } catch (const ConfigError& err) {
      throw FormatError(err.what());
    }
    ad.scale = static_cast<float>(field<double>(rec, "scale"));
    ad.a = c.get(field<std::string>(rec, "a"));
    ad.b = c.get(field<std::string>(rec, "b"));
    if (ad.a.dims() != 2 || ad.b.dims() != 2 || ad.a.dim(0) != ad.b.dim(1)) {
      throw FormatError("adapter " + to_string(ad.layer) + " has inconsistent A/B shapes");
    }
    s.sets[e].adapters.push_back(std::move(ad));
  }
  if (!meta.composed) {
    for (const auto& set : s.sets) {
      if (set.has_duplicate_layers()) throw FormatError("trained slider has duplicate adapters for one projection");
    }
  }
  return s;
}

void save_slider(const std::filesystem::path& path, const SliderArtifact& slider) {
  write_container(path, slider_to_container(slider));
}

SliderArtifact load_slider(const std::filesystem::path& path) { return slider_from_container(read_container(path)); }

SliderArtifact compose_sliders(std::span<const SliderArtifact> sliders, std::span<const float> alphas) {
  if (sliders.empty()) throw ContractError("compose needs at least one slider");
  if (sliders.size() != alphas.size()) throw ContractError("compose needs one multiplier per slider");
  const auto& fps = sliders.front().meta.encoder_fingerprints;
  for (const auto& s : sliders) {
    if (s.meta.encoder_fingerprints != fps) throw ConfigError("cannot compose sliders trained for different encoders");
  }
  SliderArtifact out;
  out.meta.encoder_fingerprints = fps;
  out.meta.composed = true;
  out.meta.rank = 0;
  std::set<std::string> layers;
  for (std::size_t i = 0; i < sliders.size(); ++i) {
    out.meta.rank = std::max(out.meta.rank, sliders[i].meta.rank);
    layers.insert(sliders[i].meta.target_layers.begin(), sliders[i].meta.target_layers.end());
    out.meta.components.push_back({{"prompt_spec", sliders[i].meta.prompt_spec}, {"alpha", static_cast<double>(alphas[i])}});
  }
  out.meta.target_layers.assign(layers.begin(), layers.end());
  for (std::size_t e = 0; e < fps.size(); ++e) {
    std::vector<AdapterSet> per_encoder;
    for (const auto& s : sliders) per_encoder.push_back(s.sets.at(e));
    out.sets.push_back(compose(std::span<const AdapterSet>(per_encoder), alphas));
    out.sets.back().encoder_fingerprint = fps[e];
  }
  return out;
}

void check_fingerprints(const SliderArtifact& slider, std::span<const TextEncoder> encoders, const std::string& label) {
  const auto& fps = slider.meta.encoder_fingerprints;
  bool ok = fps.size() == encoders.size();
  for (std::size_t i = 0; ok && i < fps.size(); ++i) ok = fps[i] == encoders[i].fingerprint();
  if (!ok) {
    std::string have;
    for (const auto& e : encoders) have += (have.empty() ? "" : ",") + e.fingerprint();
    std::string want;
    for (const auto& f : fps) want += (want.empty() ? "" : ",") + f;
    throw ConfigError("slider " + label + " was trained for encoder(s) [" + want + "] but loaded encoder(s) are [" +
                      have + "]");
  }
}

Container encoder_to_container(const TextEncoder& encoder) {
  Container c;
  nlohmann::json cfg = encoder.weights.config;
  c.metadata["kind"] = "encoder";
  c.metadata["format_version"] = kFormatVersion;
  c.metadata["config"] = ojson::parse(cfg.dump());
  c.metadata["fingerprint"] = encoder.fingerprint();
  c.metadata["vocab"] = encoder.vocab ? encoder.vocab->tokens() : std::vector<std::string>{};
  for (const auto& [name, t] : encoder.weights.named_tensors()) c.tensors.push_back({name, t});
  return c;
}

TextEncoder encoder_from_container(const Container& c) {
  require_kind(c, "encoder");
  EncoderConfig config;
  try {
    from_json(nlohmann::json::parse(c.metadata.at("config").dump()), config);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("encoder file has no config");
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  const auto fp = field<std::string>(c.metadata, "fingerprint");
  if (fp != config.fingerprint()) throw FormatError("encoder fingerprint does not match its config");
  auto vocab = Vocab::from_tokens(field<std::vector<std::string>>(c.metadata, "vocab"));
  if (vocab.size() > config.vocab_size) throw FormatError("encoder vocabulary exceeds vocab_size");
  std::map<std::string, Tensor> tensors;
  for (const auto& nt : c.tensors) tensors.emplace(nt.name, nt.tensor);
  TextEncoder enc;
  try {
    enc.weights = EncoderWeights::from_named(config, tensors);
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  enc.vocab = std::make_shared<const Vocab>(std::move(vocab));
  return enc;
}

void save_encoder(const std::filesystem::path& path, const TextEncoder& encoder) {
  write_container(path, encoder_to_container(encoder));
}

TextEncoder load_encoder(const std::filesystem::path& path) { return encoder_from_container(read_container(path)); }

Container conditioning_to_container(const nlohmann::ordered_json& request, std::span<const EncodingOutput> outputs) {
  Container c;
  c.metadata["kind"] = "conditioning";
  c.metadata["format_version"] = kFormatVersion;
  c.metadata["request"] = request;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    c.tensors.push_back({"tokenwise." + std::to_string(i), outputs[i].tokenwise});
    c.tensors.push_back({"pooled." + std::to_string(i), outputs[i].pooled});
  }
  return c;
}

}  // namespace tslider
