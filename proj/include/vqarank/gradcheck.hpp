#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vqarank/errors.hpp"
#include "vqarank/layers.hpp"
#include "vqarank/rng.hpp"

namespace vqarank {

struct GradCheckConfig {
  double h = 1e-5;
  std::size_t samples_per_layer = 200;
  double tolerance = 1e-4;
  std::uint64_t seed = 17;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_site;  // "layer[index]" of the worst parameter
  std::size_t params_checked = 0;
  bool passed = false;
};

// Central-difference check of analytic gradients. `loss` must evaluate the
// scalar objective and, as a side effect, accumulate gradients into the given
// layers; the perturbation passes ignore those accumulations. Relative error
// is |analytic - numeric| / max(|analytic|, |numeric|, 1), so tiny gradients
// are judged on absolute error.
template <typename LossFn>
GradCheckReport gradient_check(LossFn&& loss, const std::vector<NamedLayer>& layers,
                               const GradCheckConfig& cfg) {
  for (const NamedLayer& nl : layers) nl.layer->zero_grads();
  const double base = loss();
  if (!std::isfinite(base)) throw DataError("gradient_check: non-finite loss at base point");

  std::vector<std::vector<double>> analytic(layers.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    analytic[li].resize(layers[li].layer->param_count());
    for (std::size_t i = 0; i < analytic[li].size(); ++i)
      analytic[li][i] = layers[li].layer->grad_at(i);
  }

  GradCheckReport report;
  Rng rng(cfg.seed);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    LinearLayer& layer = *layers[li].layer;
    const std::size_t n = layer.param_count();
    std::vector<std::size_t> picks;
    if (n <= cfg.samples_per_layer) {
      picks.resize(n);
      for (std::size_t i = 0; i < n; ++i) picks[i] = i;
    } else {
      picks = rng.sample_without_replacement(n, cfg.samples_per_layer);
    }
    for (std::size_t idx : picks) {
      double& theta = layer.param_at(idx);
      const double saved = theta;
      theta = saved + cfg.h;
      const double lp = loss();
      theta = saved - cfg.h;
      const double lm = loss();
      theta = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw DataError("gradient_check: non-finite loss at perturbed point " + layers[li].name +
                        "[" + std::to_string(idx) + "]");
      const double numeric = (lp - lm) / (2.0 * cfg.h);
      const double ana = analytic[li][idx];
      const double abs_err = std::fabs(ana - numeric);
      const double rel_err =
          abs_err / std::max({std::fabs(ana), std::fabs(numeric), 1.0});
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst_site = layers[li].name + "[" + std::to_string(idx) + "]";
      }
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      ++report.params_checked;
    }
  }
  for (const NamedLayer& nl : layers) nl.layer->zero_grads();
  report.passed = report.max_rel_error <= cfg.tolerance;
  return report;
}

}  // namespace vqarank
