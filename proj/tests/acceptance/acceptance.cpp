// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "tslider/artifact.hpp"
#include "tslider/errors.hpp"
#include "tslider/eval.hpp"
#include "tslider/gradcheck.hpp"
#include "tslider/runtime.hpp"
#include "tslider/sha256.hpp"
#include "tslider/trainer.hpp"

namespace tslider {
namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<TextEncoder> one_encoder() { return {testing::toy_encoder()}; }

TextEncoder wide_encoder() {
  EncoderConfig c = testing::toy_config(1);
  c.d_model = 48;
  return make_text_encoder(c, testing::test_vocab());
}

// ---------------------------------------------------------------------------

Outcome identity_at_zero() {
  const auto encs = one_encoder();
  AdapterSet set = testing::trained_fixture().slider.sets[0];
  set_multiplier(set, 0.0f);
  const auto& words = testing::test_vocab().tokens();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> word(0, words.size() - 1), len(1, 6);
  std::size_t same = 0;
  for (int i = 0; i < 20; ++i) {
    std::string prompt;
    for (std::size_t n = len(rng); n > 0; --n) prompt += (prompt.empty() ? "" : " ") + words[word(rng)];
    const auto base = encs[0].encode(prompt);
    const auto zero = encs[0].encode(prompt, &set);
    const auto via_runtime = condition({prompt, {{&testing::trained_fixture().slider, 0.0f, "s"}}, std::nullopt}, encs);
    if (bit_equal(base.tokenwise, zero.tokenwise) && bit_equal(base.pooled, zero.pooled) &&
        bit_equal(base.tokenwise, via_runtime[0].tokenwise)) {
      ++same;
    }
  }
  return {same == 20, std::to_string(same) + "/20 prompts bit-identical"};
}

Outcome gradcheck_seeds() {
  double worst = 0;
  std::string where;
  bool all = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GradcheckOptions o;
    o.config = testing::toy_config();
    o.vocab = std::make_shared<const Vocab>(testing::test_vocab());
    o.seed = seed;
    o.samples_per_tensor = 16;
    const auto r = run_gradcheck(o);
    all = all && r.passed && r.max_rel_error < 1e-3;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = r.worst_parameter + " seed " + std::to_string(seed);
    }
  }
  return {all, "max rel error " + fmt("%.3g", worst) + " (" + where + ")"};
}

Outcome recomposition() {
  const auto enc = testing::toy_encoder();
  const auto spec = testing::five_q_spec();
  const auto qs = spec.flattened_preserved();
  if (qs.size() != 5) return {false, "expected 5 preserved concepts"};
  auto pooled_tokenwise = [&](const std::string& p) { return enc.encode(p); };
  const auto base = pooled_tokenwise(spec.target);
  std::vector<float> tok(base.tokenwise.data().begin(), base.tokenwise.data().end());
  std::vector<float> pool(base.pooled.data().begin(), base.pooled.data().end());
  std::vector<float> dir_tok, dir_pool;
  for (const auto& q : qs) {
    const auto pos = pooled_tokenwise(spec.positive + ", " + q);
    const auto neg = pooled_tokenwise(spec.negative + ", " + q);
    std::vector<float> dt(tok.size()), dp(pool.size());
    for (std::size_t i = 0; i < dt.size(); ++i) dt[i] = pos.tokenwise.data()[i] - neg.tokenwise.data()[i];
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] = pos.pooled.data()[i] - neg.pooled.data()[i];
    if (dir_tok.empty()) {
      dir_tok = dt;
      dir_pool = dp;
    } else {
      for (std::size_t i = 0; i < dt.size(); ++i) dir_tok[i] = dir_tok[i] + dt[i];
      for (std::size_t i = 0; i < dp.size(); ++i) dir_pool[i] = dir_pool[i] + dp[i];
    }
  }
  for (std::size_t i = 0; i < tok.size(); ++i) tok[i] = tok[i] + dir_tok[i];
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = pool[i] + dir_pool[i];
  const auto t = build_target(enc, spec, QMode::kSum);
  double diff = 0;
  for (std::size_t i = 0; i < tok.size(); ++i) diff = std::max(diff, std::abs(double(t.tokenwise.data()[i]) - tok[i]));
  for (std::size_t i = 0; i < pool.size(); ++i) diff = std::max(diff, std::abs(double(t.pooled.data()[i]) - pool[i]));
  return {diff == 0.0, "|Q|=5, max abs difference " + fmt("%g", diff)};
}

double final_ratio(const PromptSpec& spec, bool mask) {
  const auto encs = one_encoder();
  TrainConfig tc;
  tc.mask_padding = mask;
  const auto r = train_slider(encs, spec, tc);
  return r.loss_history.back() / r.loss_history.front();
}

Outcome convergence() {
  const auto& r = testing::trained_fixture();
  const auto& h = r.loss_history;
  const double ratio = h.back() / h.front();
  bool monotone = true;
  double prev = h.front();
  for (std::size_t w = 0; w + 50 <= h.size(); w += 50) {
    const double m = *std::min_element(h.begin() + w, h.begin() + w + 50);
    monotone = monotone && m <= prev;
    prev = m;
  }
  const bool finite = std::all_of(h.begin(), h.end(), [](double v) { return std::isfinite(v); });
  const double unmasked = final_ratio(testing::convergence_spec(), false);
  const double faithful = final_ratio({"person", "person, old", "person, young", {{"male", "female"}}}, false);
  return {ratio < 0.01 && monotone && finite,
          "final/initial " + fmt("%.4f", ratio) + " after " + std::to_string(h.size()) + " epochs" +
              "; unmasked " + fmt("%.4f", unmasked) + ", person/old/young with male+female " + fmt("%.4f", faithful)};
}

Outcome composition() {
  const auto& trained = testing::trained_fixture().slider.sets[0];
  AdapterSet other = trained;
  for (auto& ad : other.adapters) {
    ad.b = testing::random_tensor(ad.b.shape(), 100 + ad.layer.block * 4 + int(ad.layer.proj), 0.05);
  }
  const float alpha = 0.6f, beta = -0.35f;
  const AdapterSet fwd[] = {trained, other}, rev[] = {other, trained};
  const float af[] = {alpha, beta}, ar[] = {beta, alpha};
  const auto a = compose<float>(fwd, af), b = compose<float>(rev, ar);
  const auto enc = testing::toy_encoder();
  double err = 0;
  bool swap_same = true;
  for (std::size_t l = 0; l < trained.adapters.size(); ++l) {
    const auto id = trained.adapters[l].layer;
    const auto& w0 = enc.weights.projection_weight(id);
    const auto merged = merged_weight(w0, a, id);
    swap_same = swap_same && bit_equal(merged, merged_weight(w0, b, id));
    const std::size_t rows = w0.dim(0), cols = w0.dim(1), r = trained.adapters[l].rank();
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        double ref = w0.data()[i * cols + j];
        for (const auto& [s, set] : {std::pair<double, const AdapterSet*>{alpha, &trained}, std::pair<double, const AdapterSet*>{beta, &other}}) {
          const auto& ad = set->adapters[l];
          double acc = 0;
          for (std::size_t p = 0; p < r; ++p) acc += double(ad.b.data()[i * r + p]) * ad.a.data()[p * cols + j];
          ref += s * acc;
        }
        err = std::max(err, std::abs(ref - merged.data()[i * cols + j]));
      }
    }
  }
  swap_same = swap_same && bit_equal(enc.encode("person, old", &a).tokenwise, enc.encode("person, old", &b).tokenwise);
  return {err <= 1e-5 && swap_same,
          "max merged-weight error " + fmt("%.3g", err) + ", order swap " + (swap_same ? "bit-identical" : "differs")};
}

Outcome gate() {
  std::size_t wrong = 0, checked = 0;
  for (int t_gate : {800, 550}) {
    const GateSchedule s{t_gate, 0.75f};
    for (int t = 0; t <= kMaxTimestep; ++t, ++checked) {
      if (gate_multiplier(s, t) != (t > t_gate ? 0.0f : 0.75f)) ++wrong;
    }
  }
  return {wrong == 0, std::to_string(checked - wrong) + "/" + std::to_string(checked) + " timesteps"};
}

struct StepOne {
  double loss = 0;
  std::vector<std::vector<float>> grads;
};

StepOne first_step(std::span<const TextEncoder> encs, const PromptSpec& spec) {
  std::vector<AdapterSet> sets;
  std::vector<EncoderTarget> targets;
  std::vector<Tensor> params;
  for (const auto& e : encs) {
    targets.push_back(build_target(e, spec, QMode::kSum));
    sets.push_back(make_adapter_set<float>(e.weights.config, 4, attention_targets(e.weights.config.n_layers),
                                           adapter_seed(0, e.fingerprint())));
    // Nonzero B so both A and B receive gradient.
    for (auto& ad : sets.back().adapters) {
      ad.b = testing::random_tensor(ad.b.shape(), e.weights.config.d_model + ad.layer.block * 4 + int(ad.layer.proj), 0.02);
    }
    for (auto& p : sets.back().parameters()) {
      p.set_requires_grad(true);
      params.push_back(p);
    }
  }
  Tape<float> tape;
  TapeScope<float> scope(tape);
  std::vector<EncodingOutput> outs;
  for (std::size_t i = 0; i < encs.size(); ++i) outs.push_back(encs[i].encode(spec.target, &sets[i]));
  const auto loss = slider_loss<float>(outs, targets, {});
  tape.backward(loss);
  StepOne r{loss.item(), {}};
  for (const auto& p : params) r.grads.emplace_back(p.grad().begin(), p.grad().end());
  return r;
}

Outcome dual_encoder() {
  const std::vector both{testing::toy_encoder(), wide_encoder()};
  const std::vector solo1{both[0]}, solo2{both[1]};
  const auto spec = testing::convergence_spec();
  const auto j = first_step(both, spec), s1 = first_step(solo1, spec), s2 = first_step(solo2, spec);
  const double gap = std::abs(j.loss - (s1.loss + s2.loss));
  std::vector<std::vector<float>> solo = s1.grads;
  solo.insert(solo.end(), s2.grads.begin(), s2.grads.end());
  const bool grads_equal = j.grads == solo;
  return {gap <= 1e-6 && grads_equal, "widths 32+48, loss gap " + fmt("%.3g", gap) + ", step-1 gradients " +
                                          (grads_equal ? "identical" : "differ")};
}

Outcome artifact_round_trip() {
  testing::TempDir dir;
  const auto& slider = testing::trained_fixture().slider;
  save_slider(dir.file("a.tsl"), slider);
  save_slider(dir.file("b.tsl"), load_slider(dir.file("a.tsl")));
  const auto bytes = read_file_bytes(dir.file("a.tsl"));
  const bool identical = bytes == read_file_bytes(dir.file("b.tsl"));
  auto rejected = [](const std::string& b) {
    try {
      slider_from_container(parse_container(b));
    } catch (const FormatError&) {
      return true;
    }
    return false;
  };
  std::string bad_magic = bytes;
  bad_magic[3] = 'Z';
  const bool magic = rejected(bad_magic);
  bool truncation = true;
  for (std::size_t cut : {std::size_t{4}, std::size_t{16}, bytes.size() / 2, bytes.size() - 1}) {
    truncation = truncation && rejected(bytes.substr(0, cut));
  }
  return {identical && magic && truncation, std::string("write/read/write ") + (identical ? "identical" : "differs") +
                                                ", bad magic " + (magic ? "rejected" : "accepted") + ", truncation " +
                                                (truncation ? "rejected" : "accepted")};
}

std::string sweep_baseline_path() { return (testing::data_dir() / "sweep_baseline.csv").string(); }

SweepReport fixture_sweep() {
  const auto encs = one_encoder();
  const std::vector<double> alphas{0.0, 0.1, 0.2, 0.3, 0.4};
  return sweep(testing::trained_fixture().slider, testing::convergence_spec(), alphas, encs);
}

// Largest absolute difference between two sweep CSVs with the same header.
double csv_distance(const std::string& a, const std::string& b) {
  std::istringstream la(a), lb(b);
  std::string ra, rb;
  std::getline(la, ra);
  std::getline(lb, rb);
  if (ra != rb) return INFINITY;
  double worst = 0;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(la, ra)), gb = static_cast<bool>(std::getline(lb, rb));
    if (ga != gb) return INFINITY;
    if (!ga) return worst;
    std::istringstream ca(ra), cb(rb);
    std::string fa, fb;
    while (std::getline(ca, fa, ',')) {
      if (!std::getline(cb, fb, ',')) return INFINITY;
      worst = std::max(worst, std::abs(std::stod(fa) - std::stod(fb)));
    }
  }
}

Outcome sweep_direction() {
  const auto report = fixture_sweep();
  const double p0 = report.rows.front().projection, p4 = report.rows.back().projection;
  std::ostringstream csv;
  write_sweep_csv(csv, report);
  const double dist = csv_distance(csv.str(), read_file_bytes(sweep_baseline_path()));
  return {p0 == 0.0 && p4 > 0.0 && dist <= 1e-4,
          "projection(0) " + fmt("%g", p0) + ", projection(0.4) " + fmt("%.4g", p4) + ", alignment(0.4) " +
              fmt("%.3f", report.rows.back().alignment) + ", baseline distance " + fmt("%.3g", dist)};
}

Outcome frozen_base() {
  const auto encs = one_encoder();
  const auto before = sha256_hex(serialize_container(encoder_to_container(encs[0])));
  TrainConfig tc = testing::convergence_config();
  tc.epochs = 50;
  (void)train_slider(encs, testing::convergence_spec(), tc);
  const auto after = sha256_hex(serialize_container(encoder_to_container(encs[0])));
  return {before == after, "sha256 " + before.substr(0, 16) + (before == after ? " unchanged" : " changed")};
}

}  // namespace
}  // namespace tslider

int main(int argc, char** argv) {
  using namespace tslider;
  if (argc == 2 && std::string(argv[1]) == "--update-sweep-baseline") {
    std::ostringstream csv;
    write_sweep_csv(csv, fixture_sweep());
    write_file_bytes(sweep_baseline_path(), csv.str());
    std::printf("wrote %s\n", sweep_baseline_path().c_str());
    return 0;
  }
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"identity-at-zero", identity_at_zero}, {"gradcheck", gradcheck_seeds},
      {"target-recomposition", recomposition}, {"convergence", convergence},
      {"composition", composition},           {"timestep-gate", gate},
      {"dual-encoder", dual_encoder},         {"artifact-round-trip", artifact_round_trip},
      {"sweep-direction", sweep_direction},   {"frozen-base", frozen_base},
  };
  int failures = 0;
  int index = 0;
  for (const auto& c : criteria) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %2d %-22s %s (%.1fs)\n", o.passed ? "PASS" : "FAIL", index, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.passed) ++failures;
  }
  std::printf("%d/%d criteria passed\n", index - failures, index);
  return failures == 0 ? 0 : 1;
}
