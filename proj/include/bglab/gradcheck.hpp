#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "bglab/rng.hpp"
#include "bglab/tensor.hpp"

namespace bglab {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so that two gradients that are
  // both ~0 do not produce 0/0.
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample of this many per tensor.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct ParamGradCheck {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  double max_rel_error = 0;
  bool passed = true;
};

inline double grad_rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of `build_loss` against central
/// differences (f(x+eps) - f(x-eps)) / 2eps for every listed parameter.
/// `build_loss` must rebuild the graph from the current parameter values.
inline GradCheckReport grad_check(const std::vector<NamedTensor>& params,
                                  const std::function<Tensor()>& build_loss,
                                  const GradCheckOptions& opts = {}) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  const Tensor loss = build_loss();
  backward(loss);

  GradCheckReport report;
  Rng rng(opts.seed);
  for (const auto& p : params) {
    Tensor t = p.tensor;
    ParamGradCheck entry;
    entry.name = p.name;
    const std::vector<double> analytic = t.has_grad()
                                             ? std::vector<double>(t.grad().begin(), t.grad().end())
                                             : std::vector<double>(t.numel(), 0.0);
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opts.max_coords_per_param != 0 && coords.size() > opts.max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(opts.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    auto values = t.mutable_data();
    for (const auto i : coords) {
      const double saved = values[i];
      values[i] = saved + opts.epsilon;
      const double up = build_loss().item();
      values[i] = saved - opts.epsilon;
      const double down = build_loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * opts.epsilon);
      const double err = grad_rel_error(analytic[i], numeric, opts.floor);
      if (err > entry.max_rel_error || entry.coords_checked == 0) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic_at_worst = analytic[i];
        entry.numeric_at_worst = numeric;
      }
      ++entry.coords_checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < opts.tolerance;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  return report;
}

}  // namespace bglab
