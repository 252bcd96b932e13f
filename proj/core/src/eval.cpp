#include "tslider/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>

#include "tslider/errors.hpp"

namespace tslider {

namespace {

std::vector<double> pooled_concat(std::span<const TextEncoder> encoders, std::string_view prompt,
                                  const std::vector<AdapterSet>* sets) {
  std::vector<double> out;
  for (std::size_t e = 0; e < encoders.size(); ++e) {
    const AdapterSet* adapters = sets ? &(*sets)[e] : nullptr;
    const auto pooled = encoders[e].encode(prompt, adapters).pooled;
    for (float v : pooled.data()) out.push_back(static_cast<double>(v));
  }
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

std::vector<double> minus(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

std::string format_g9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::vector<double> concept_direction(std::span<const TextEncoder> encoders, const PromptSpec& spec) {
  if (encoders.empty()) throw ContractError("concept_direction needs at least one encoder");
  spec.validate();
  auto dir = minus(pooled_concat(encoders, spec.positive, nullptr), pooled_concat(encoders, spec.negative, nullptr));
  const double n = norm(dir);
  if (n == 0.0) {
    throw DegenerateDirectionError("positive and negative prompts have identical pooled embeddings");
  }
  for (auto& v : dir) v /= n;
  return dir;
}

SweepReport sweep(const SliderArtifact& slider, const PromptSpec& spec, std::span<const double> alphas,
                  std::span<const TextEncoder> encoders, const SweepOptions& options) {
  check_fingerprints(slider, encoders, "under evaluation");
  if (!std::is_sorted(alphas.begin(), alphas.end())) throw ContractError("sweep alphas must be ascending");
  const auto direction = concept_direction(encoders, spec);

  SweepReport report;
  report.concepts = spec.flattened_preserved();
  std::vector<std::string> preserved_prompts;
  for (const auto& q : report.concepts) {
    const std::string parts[] = {spec.target, q};
    preserved_prompts.push_back(join_prompt(parts));
  }
  const auto base_target = pooled_concat(encoders, spec.target, nullptr);
  std::vector<std::vector<double>> base_preserved;
  for (const auto& p : preserved_prompts) base_preserved.push_back(pooled_concat(encoders, p, nullptr));

  auto evaluate = [&](double alpha) {
    SweepRow row;
    row.alpha = alpha;
    std::vector<AdapterSet> sets = slider.sets;
    for (auto& s : sets) set_multiplier(s, static_cast<float>(alpha));
    const auto diff = minus(pooled_concat(encoders, spec.target, &sets), base_target);
    row.projection = dot(diff, direction);
    const double dn = norm(diff);
    row.alignment = dn == 0.0 ? 0.0 : std::clamp(row.projection / dn, -1.0, 1.0);
    for (std::size_t i = 0; i < preserved_prompts.size(); ++i) {
      const auto moved = minus(pooled_concat(encoders, preserved_prompts[i], &sets), base_preserved[i]);
      const double bn = norm(base_preserved[i]);
      row.drift.push_back(bn == 0.0 ? 0.0 : norm(moved) / bn);
    }
    return row;
  };

  if (options.parallel) {
    std::vector<std::future<SweepRow>> futures;
    for (double a : alphas) futures.push_back(std::async(std::launch::async, evaluate, a));
    for (auto& f : futures) report.rows.push_back(f.get());
  } else {
    for (double a : alphas) report.rows.push_back(evaluate(a));
  }
  return report;
}

void write_sweep_csv(std::ostream& out, const SweepReport& report) {
  out << "alpha,projection,alignment";
  for (const auto& q : report.concepts) out << ",drift:" << q;
  out << '\n';
  for (const auto& row : report.rows) {
    out << format_g9(row.alpha) << ',' << format_g9(row.projection) << ',' << format_g9(row.alignment);
    for (double d : row.drift) out << ',' << format_g9(d);
    out << '\n';
  }
}

}  // namespace tslider
