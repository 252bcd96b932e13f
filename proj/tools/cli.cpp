#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "tslider/artifact.hpp"
#include "tslider/errors.hpp"
#include "tslider/eval.hpp"
#include "tslider/gradcheck.hpp"
#include "tslider/runtime.hpp"
#include "tslider/sha256.hpp"
#include "tslider/trainer.hpp"
#include "tslider/version.hpp"

namespace tslider::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string file_digest(const fs::path& path) {
  if (!fs::exists(path)) return "";
  return sha256_hex(read_file_bytes(path));
}

void write_text(const fs::path& path, const std::string& text) { write_file_bytes(path, text); }

/// Record of one run: the resolved configuration plus digests of every file
/// read and written.
class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> args) : start_(std::chrono::steady_clock::now()) {
    j_["command"] = std::move(command);
    j_["args"] = std::move(args);
    j_["cwd"] = fs::current_path().string();
    j_["version"] = std::string(kVersion);
    j_["seed"] = 0;
    j_["config"] = ojson::object();
    j_["inputs"] = ojson::array();
    j_["outputs"] = ojson::array();
  }

  ojson& config() { return j_["config"]; }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void input(const std::string& path) {
    if (path.rfind("init:", 0) == 0) {
      input(path.substr(5));
      return;
    }
    j_["inputs"].push_back({{"path", path}, {"sha256", file_digest(path)}});
  }
  void output(const std::string& path) { outputs_.push_back(path); }

  void write(const std::string& path) {
    for (const auto& p : outputs_) j_["outputs"].push_back({{"path", p}, {"sha256", file_digest(p)}});
    j_["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text(path, j_.dump(2) + "\n");
  }

 private:
  ojson j_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

std::vector<std::string> without_manifest_flag(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--manifest") {
      ++i;
      continue;
    }
    if (args[i].rfind("--manifest=", 0) == 0) continue;
    out.push_back(args[i]);
  }
  return out;
}

std::vector<TextEncoder> load_encoders(const std::vector<std::string>& specs, Manifest& manifest) {
  if (specs.empty()) throw ConfigError("at least one --encoder is required");
  std::vector<TextEncoder> encoders;
  for (const auto& s : specs) {
    manifest.input(s);
    encoders.push_back(load_encoder_arg(s));
  }
  return encoders;
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> alphas;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      alphas.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("alphas: cannot parse '" + item + "' as a number");
    }
  }
  if (alphas.empty()) throw ConfigError("alphas must list at least one value");
  return alphas;
}

}  // namespace

TextEncoder load_encoder_arg(const std::string& spec) {
  if (spec.rfind("init:", 0) != 0) return load_encoder(spec);
  const fs::path config_path = spec.substr(5);
  const auto j = read_json_file(config_path);
  if (!j.is_object() || !j.contains("vocab") || !j["vocab"].is_string()) {
    throw ConfigError("encoder config " + config_path.string() + " needs a \"vocab\" path");
  }
  fs::path vocab_path = j["vocab"].get<std::string>();
  if (vocab_path.is_relative()) vocab_path = config_path.parent_path() / vocab_path;
  EncoderConfig config;
  from_json(j, config);
  Vocab vocab;
  try {
    vocab = Vocab::load(vocab_path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return make_text_encoder(config, std::move(vocab));
}

SliderArg parse_slider_arg(const std::string& text) {
  SliderArg arg;
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) {
    arg.path = text;
    return arg;
  }
  arg.path = text.substr(0, colon);
  const auto alpha_text = text.substr(colon + 1);
  try {
    std::size_t used = 0;
    arg.alpha = std::stod(alpha_text, &used);
    if (used != alpha_text.size()) throw std::invalid_argument(alpha_text);
  } catch (const std::exception&) {
    throw ConfigError("slider '" + text + "': alpha must be a number (syntax path:alpha)");
  }
  if (arg.path.empty()) throw ConfigError("slider '" + text + "' has an empty path");
  return arg;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text slider toolkit: train, apply and evaluate low-rank concept sliders", "tslider"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  std::string manifest_path;

  // init ---------------------------------------------------------------
  auto* init = app.add_subcommand("init", "Write a freshly initialized encoder weight file");
  std::string init_config, init_out;
  init->add_option("--config", init_config, "Encoder config JSON with a \"vocab\" path")->required();
  init->add_option("--out", init_out, "Output weight file")->required();
  init->add_option("--manifest", manifest_path, "Manifest path (default <out>.manifest.json)");

  // train --------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train a slider");
  std::string spec_path, train_out, loss_csv, q_mode_text;
  std::vector<std::string> encoder_specs;
  TrainConfig tc;
  train->add_option("--spec", spec_path, "Prompt spec JSON")->required();
  train->add_option("--encoder,--encoders", encoder_specs, "Encoder weight file or init:<config.json>; repeat for dual encoders")
      ->required();
  train->add_option("--out", train_out, "Output slider file")->required();
  train->add_option("--epochs", tc.epochs, "Optimizer steps")->capture_default_str();
  train->add_option("--lr", tc.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--rank", tc.rank, "LoRA rank")->capture_default_str();
  train->add_option("--weight-decay", tc.weight_decay, "AdamW weight decay")->capture_default_str();
  train->add_option("--q-mode", q_mode_text, "sum or mean (overrides the spec file)");
  train->add_option("--seed", tc.seed, "Seed for all randomness")->capture_default_str();
  train->add_option("--tokenwise-weight", tc.loss_weights.tokenwise)->capture_default_str();
  train->add_option("--pooled-weight", tc.loss_weights.pooled)->capture_default_str();
  train->add_flag("--augment", tc.augment, "Sample y from c_t and [c_t, q]");
  train->add_flag("--mask-padding", tc.mask_padding, "Exclude positions after EOS from the tokenwise loss");
  train->add_option("--loss-csv", loss_csv, "Loss history CSV (default <out>.loss.csv)");
  train->add_option("--manifest", manifest_path, "Manifest path (default <out>.manifest.json)");

  // apply --------------------------------------------------------------
  auto* apply = app.add_subcommand("apply", "Encode a prompt with sliders and write a conditioning file");
  std::string prompt, apply_out;
  std::vector<std::string> slider_texts;
  std::optional<int> timestep;
  int gate = 800;
  apply->add_option("--encoder,--encoders", encoder_specs, "Encoder weight file or init:<config.json>")->required();
  apply->add_option("--prompt", prompt, "Prompt text")->required();
  apply->add_option("--slider", slider_texts, "Slider as path:alpha; repeatable");
  apply->add_option("--timestep", timestep, "Denoising timestep in [0, 1000]");
  apply->add_option("--gate", gate, "Sliders are off for timesteps above this")->capture_default_str();
  apply->add_option("--out", apply_out, "Output conditioning file")->required();
  apply->add_option("--manifest", manifest_path, "Manifest path (default <out>.manifest.json)");

  // compose ------------------------------------------------------------
  auto* compose_cmd = app.add_subcommand("compose", "Merge sliders into one artifact");
  std::string compose_out;
  compose_cmd->add_option("--slider", slider_texts, "Slider as path:alpha; repeatable")->required();
  compose_cmd->add_option("--out", compose_out, "Output slider file")->required();
  compose_cmd->add_option("--manifest", manifest_path, "Manifest path (default <out>.manifest.json)");

  // sweep --------------------------------------------------------------
  auto* sweep_cmd = app.add_subcommand("sweep", "Alpha sweep of projection, alignment and drift as CSV");
  std::string sweep_slider, sweep_spec, sweep_out, alpha_text = "0,0.1,0.2,0.3,0.4";
  bool parallel = false;
  sweep_cmd->add_option("--encoder,--encoders", encoder_specs, "Encoder weight file or init:<config.json>")->required();
  sweep_cmd->add_option("--slider", sweep_slider, "Slider file")->required();
  sweep_cmd->add_option("--spec", sweep_spec, "Prompt spec JSON (default: the slider's training spec)");
  sweep_cmd->add_option("--alphas", alpha_text, "Comma-separated ascending alphas")->capture_default_str();
  sweep_cmd->add_option("--out", sweep_out, "CSV path (default stdout)");
  sweep_cmd->add_flag("--parallel", parallel, "Evaluate alphas concurrently");
  sweep_cmd->add_option("--manifest", manifest_path, "Manifest path (default <out>.manifest.json)");

  // gradcheck ----------------------------------------------------------
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Compare LoRA gradients with finite differences");
  std::string gc_config;
  GradcheckOptions gco;
  std::string corrupt;
  gradcheck_cmd->add_option("--config", gc_config, "Encoder config JSON with a \"vocab\" path");
  gradcheck_cmd->add_option("--seed", gco.seed)->capture_default_str();
  gradcheck_cmd->add_option("--rank", gco.rank)->capture_default_str();
  gradcheck_cmd->add_option("--samples", gco.samples_per_tensor, "Elements per tensor; 0 checks all")
      ->capture_default_str();
  gradcheck_cmd->add_option("--tolerance", gco.tolerance)->capture_default_str();
  gradcheck_cmd->add_option("--corrupt-backward", corrupt)->group("");
  gradcheck_cmd->add_option("--manifest", manifest_path, "Manifest path");

  // inspect ------------------------------------------------------------
  auto* inspect = app.add_subcommand("inspect", "Print a container header as JSON");
  std::string inspect_path;
  inspect->add_option("file", inspect_path, "Weight, slider or conditioning file")->required();
  inspect->add_option("--manifest", manifest_path, "Manifest path");

  // replay -------------------------------------------------------------
  auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare output digests");
  std::string replay_path;
  replay->add_option("manifest", replay_path, "Manifest JSON")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  const auto* sub = app.get_subcommands().front();
  Manifest manifest(sub->get_name(), without_manifest_flag(args));
  auto finish_manifest = [&](const std::string& default_out) {
    const std::string path = !manifest_path.empty() ? manifest_path
                             : default_out.empty()  ? std::string()
                                                    : default_out + ".manifest.json";
    if (!path.empty()) manifest.write(path);
  };

  try {
    if (sub == init) {
      manifest.input(init_config);
      const auto enc = load_encoder_arg("init:" + init_config);
      save_encoder(init_out, enc);
      manifest.config() = nlohmann::ordered_json::parse(nlohmann::json(enc.weights.config).dump());
      manifest.seed(enc.weights.config.seed);
      manifest.output(init_out);
      out << "encoder " << enc.fingerprint() << " (" << enc.weights.parameter_count() << " parameters) -> " << init_out
          << "\n";
      finish_manifest(init_out);
      return kExitOk;
    }

    if (sub == train) {
      manifest.input(spec_path);
      const auto prompt_file = load_prompt_file(spec_path);
      tc.q_mode = !q_mode_text.empty() ? parse_q_mode(q_mode_text) : prompt_file.q_mode.value_or(QMode::kSum);
      tc.validate();
      const auto encoders = load_encoders(encoder_specs, manifest);
      const auto result = train_slider(encoders, prompt_file.spec, tc);
      save_slider(train_out, result.slider);
      if (loss_csv.empty()) loss_csv = train_out + ".loss.csv";
      std::string csv = "epoch,loss\n";
      for (std::size_t i = 0; i < result.loss_history.size(); ++i) {
        csv += std::to_string(i + 1) + "," + g9(result.loss_history[i]) + "\n";
      }
      write_text(loss_csv, csv);
      auto& c = manifest.config();
      c["epochs"] = tc.epochs;
      c["learning_rate"] = tc.learning_rate;
      c["rank"] = tc.rank;
      c["weight_decay"] = tc.weight_decay;
      c["q_mode"] = std::string(to_string(tc.q_mode));
      c["tokenwise_weight"] = tc.loss_weights.tokenwise;
      c["pooled_weight"] = tc.loss_weights.pooled;
      c["augment"] = tc.augment;
      c["mask_padding"] = tc.mask_padding;
      manifest.seed(tc.seed);
      manifest.output(train_out);
      manifest.output(loss_csv);
      out << "trained " << tc.epochs << " epochs: loss " << g9(result.loss_history.front()) << " -> "
          << g9(result.loss_history.back()) << "\n";
      finish_manifest(train_out);
      return kExitOk;
    }

    if (sub == apply) {
      const auto encoders = load_encoders(encoder_specs, manifest);
      std::vector<SliderArtifact> sliders;
      ConditioningRequest request;
      request.prompt = prompt;
      request.timestep = timestep;
      std::vector<SliderArg> parsed;
      for (const auto& t : slider_texts) {
        parsed.push_back(parse_slider_arg(t));
        manifest.input(parsed.back().path);
        sliders.push_back(load_slider(parsed.back().path));
      }
      for (std::size_t i = 0; i < sliders.size(); ++i) {
        request.sliders.push_back({&sliders[i], static_cast<float>(parsed[i].alpha), parsed[i].path});
      }
      GateSchedule{gate, 1.0f}.validate();
      const auto outputs = condition(request, encoders, gate);
      const auto req_json = request_to_json(request, gate);
      write_container(apply_out, conditioning_to_container(req_json, outputs));
      manifest.config() = req_json;
      manifest.output(apply_out);
      out << "wrote conditioning for " << outputs.size() << " encoder(s) -> " << apply_out << "\n";
      finish_manifest(apply_out);
      return kExitOk;
    }

    if (sub == compose_cmd) {
      std::vector<SliderArtifact> sliders;
      std::vector<float> alphas;
      for (const auto& t : slider_texts) {
        const auto a = parse_slider_arg(t);
        manifest.input(a.path);
        sliders.push_back(load_slider(a.path));
        alphas.push_back(static_cast<float>(a.alpha));
        manifest.config()["sliders"].push_back({{"path", a.path}, {"alpha", a.alpha}});
      }
      save_slider(compose_out, compose_sliders(sliders, alphas));
      manifest.output(compose_out);
      out << "composed " << sliders.size() << " slider(s) -> " << compose_out << "\n";
      finish_manifest(compose_out);
      return kExitOk;
    }

    if (sub == sweep_cmd) {
      const auto encoders = load_encoders(encoder_specs, manifest);
      manifest.input(sweep_slider);
      const auto slider = load_slider(sweep_slider);
      PromptSpec spec;
      if (!sweep_spec.empty()) {
        manifest.input(sweep_spec);
        spec = load_prompt_file(sweep_spec).spec;
      } else {
        spec = parse_prompt_json(nlohmann::json::parse(slider.meta.prompt_spec.dump())).spec;
      }
      const auto alphas = parse_alpha_list(alpha_text);
      const auto report = sweep(slider, spec, alphas, encoders, SweepOptions{parallel});
      std::ostringstream csv;
      write_sweep_csv(csv, report);
      if (sweep_out.empty()) {
        out << csv.str();
      } else {
        write_text(sweep_out, csv.str());
        manifest.output(sweep_out);
      }
      manifest.config()["alphas"] = alphas;
      finish_manifest(sweep_out);
      return kExitOk;
    }

    if (sub == gradcheck_cmd) {
      if (!gc_config.empty()) {
        manifest.input(gc_config);
        const auto enc = load_encoder_arg("init:" + gc_config);
        gco.config = enc.weights.config;
        gco.vocab = enc.vocab;
      } else {
        std::vector<std::string> words;
        for (const auto& p : {gco.spec.target, gco.spec.positive, gco.spec.negative}) {
          for (auto& w : split_words(p)) words.push_back(w);
        }
        for (const auto& q : gco.spec.flattened_preserved()) {
          for (auto& w : split_words(q)) words.push_back(w);
        }
        std::sort(words.begin(), words.end());
        words.erase(std::unique(words.begin(), words.end()), words.end());
        gco.vocab = std::make_shared<const Vocab>(Vocab::from_tokens(words));
      }
      std::optional<OpKind> fault;
      if (!corrupt.empty()) {
        fault = op_from_name(corrupt);
        if (!fault) throw ConfigError("corrupt-backward: unknown op '" + corrupt + "'");
      }
      debug::set_backward_fault(fault);
      GradcheckReport report;
      try {
        report = run_gradcheck(gco);
      } catch (...) {
        debug::set_backward_fault(std::nullopt);
        throw;
      }
      debug::set_backward_fault(std::nullopt);
      manifest.seed(gco.seed);
      manifest.config()["rank"] = gco.rank;
      manifest.config()["samples"] = gco.samples_per_tensor;
      manifest.config()["tolerance"] = gco.tolerance;
      out << "max relative error " << g9(report.max_rel_error) << " over " << report.checked
          << " elements (worst " << report.worst_parameter << ")\n";
      finish_manifest("");
      if (!report.passed) {
        err << "gradcheck failed: " << report.worst_parameter << " has relative error " << g9(report.max_rel_error)
            << " >= " << g9(gco.tolerance) << "\n";
        return kExitCheckFailed;
      }
      return kExitOk;
    }

    if (sub == inspect) {
      manifest.input(inspect_path);
      const auto c = read_container(inspect_path);
      ojson j;
      j["metadata"] = c.metadata;
      j["tensors"] = ojson::array();
      for (const auto& nt : c.tensors) j["tensors"].push_back({{"name", nt.name}, {"shape", nt.tensor.shape()}});
      out << j.dump(2) << "\n";
      finish_manifest("");
      return kExitOk;
    }

    if (sub == replay) {
      const auto j = read_json_file(replay_path);
      std::vector<std::string> replay_args;
      std::string cwd;
      try {
        replay_args = j.at("args").get<std::vector<std::string>>();
        cwd = j.at("cwd").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("manifest " + replay_path + " has no args/cwd");
      }
      if (!replay_args.empty() && replay_args.front() == "replay") throw ConfigError("cannot replay a replay");
      replay_args.push_back("--manifest");
      replay_args.push_back(fs::absolute(replay_path).string() + ".replay.json");
      const auto previous = fs::current_path();
      fs::current_path(cwd);
      std::ostringstream sink;
      int code = kExitOk;
      try {
        code = run_cli(replay_args, sink, err);
      } catch (...) {
        fs::current_path(previous);
        throw;
      }
      if (code != kExitOk) {
        fs::current_path(previous);
        return code;
      }
      bool same = true;
      for (const auto& o : j.value("outputs", nlohmann::json::array())) {
        const auto path = o.at("path").get<std::string>();
        const auto digest = file_digest(path);
        const bool match = digest == o.at("sha256").get<std::string>();
        out << (match ? "same     " : "DIFFERS  ") << path << "\n";
        same = same && match;
      }
      fs::current_path(previous);
      return same ? kExitOk : kExitCheckFailed;
    }
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumericalError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}

}  // namespace tslider::cli
