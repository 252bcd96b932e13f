#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tslider/encoder.hpp"
#include "tslider/prompt_spec.hpp"
#include "tslider/tensor.hpp"
#include "tslider/tokenizer.hpp"
#include "tslider/trainer.hpp"

namespace tslider::testing {

inline std::filesystem::path data_dir() { return TSLIDER_TEST_DATA_DIR; }

inline const Vocab& test_vocab() {
  static const Vocab vocab = Vocab::load(data_dir() / "test_vocab.txt");
  return vocab;
}

/// 2 layers, d_model 32, 4 heads, max_len 77.
inline EncoderConfig toy_config(std::uint64_t seed = 0) {
  EncoderConfig c;
  c.vocab_size = test_vocab().size();
  c.seed = seed;
  return c;
}

inline TextEncoder toy_encoder(std::uint64_t seed = 0) { return make_text_encoder(toy_config(seed), test_vocab()); }

/// Narrow, short encoder for tests that run many forward passes.
inline TextEncoder small_encoder(std::size_t d_model = 8, std::size_t max_len = 12, std::uint64_t seed = 0) {
  EncoderConfig c = toy_config(seed);
  c.d_model = d_model;
  c.n_heads = 2;
  c.max_len = max_len;
  return make_text_encoder(c, test_vocab());
}

/// Training fixture whose target lies within reach of the adapters.
inline PromptSpec convergence_spec() { return {"person, young", "person, old", "person, young", {{"male"}}}; }

inline TrainConfig convergence_config() {
  TrainConfig tc;
  tc.mask_padding = true;
  return tc;
}

/// Five preserved concepts in two groups.
inline PromptSpec five_q_spec() {
  return {"person", "person, elderly, wrinkles", "person, young",
          {{"white race", "black race", "asian race"}, {"male", "female"}}};
}

template <typename T = float>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(dist(rng));
  return BasicTensor<T>(std::move(shape), std::move(data));
}

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("tslider_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

/// Trained sliders are expensive; share them across tests in one binary.
inline const TrainResult& trained_fixture() {
  static const TrainResult result = [] {
    const std::vector encoders{toy_encoder()};
    return train_slider(encoders, convergence_spec(), convergence_config());
  }();
  return result;
}

}  // namespace tslider::testing
