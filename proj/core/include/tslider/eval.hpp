#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tslider/artifact.hpp"
#include "tslider/encoder.hpp"
#include "tslider/prompt_spec.hpp"

namespace tslider {

/// Unit vector along pooled(c+) - pooled(c-), concatenated across encoders.
/// Throws DegenerateDirectionError when the difference is zero.
std::vector<double> concept_direction(std::span<const TextEncoder> encoders, const PromptSpec& spec);

struct SweepRow {
  double alpha = 0.0;
  double projection = 0.0;
  /// 0 when the slider leaves the pooled embedding unchanged.
  double alignment = 0.0;
  /// One entry per flattened preserved concept.
  std::vector<double> drift;
};

struct SweepReport {
  std::vector<std::string> concepts;
  std::vector<SweepRow> rows;
};

struct SweepOptions {
  /// Evaluate alphas on worker threads; rows keep the input order.
  bool parallel = false;
};

/// For each alpha: projection and cosine of pooled_alpha(c_t) - pooled_base(c_t)
/// onto the concept direction, and the relative pooled displacement of
/// [c_t, q] for every preserved q. Alphas must be ascending.
SweepReport sweep(const SliderArtifact& slider, const PromptSpec& spec, std::span<const double> alphas,
                  std::span<const TextEncoder> encoders, const SweepOptions& options = {});

/// "alpha,projection,alignment,drift:<q>..." with 9 significant digits.
void write_sweep_csv(std::ostream& out, const SweepReport& report);

}  // namespace tslider
