#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "tslider/encoder.hpp"

namespace tslider::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitConfigError = 2,
  kExitNumericalError = 3,
};

/// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// A weight file, or "init:<config.json>" for a fresh encoder built from a
/// config whose "vocab" entry points at a vocabulary file (relative to the
/// config's directory).
TextEncoder load_encoder_arg(const std::string& spec);

struct SliderArg {
  std::string path;
  double alpha = 1.0;
};

/// "path:alpha"; a missing suffix means alpha 1.
SliderArg parse_slider_arg(const std::string& text);

}  // namespace tslider::cli
