#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace langsg {

/// One parameter tensor under test: its live values (perturbed in place and
/// restored) and the analytic gradient computed beforehand.
struct GradCheckEntry {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst per-tensor ||a - n|| / (||a|| + ||n||)
  std::string worst_tensor;
  std::size_t checked = 0;  // coordinates compared
  std::size_t kinks = 0;    // coordinates skipped as non-differentiable
  bool passed = false;
};

/// Gradients whose norm stays below this (times max(1, |loss|) and the
/// square root of the coordinate count) are treated as zero on both sides.
inline constexpr double kNegligibleGradient = 1e-9;

/// Central finite differences with step h, compared with the analytic
/// gradient per tensor. A coordinate is skipped as a kink when the central
/// estimates at h and h/2 disagree, or when the one-sided slope gap does not
/// halve with the step, by more than kink_tolerance * max(1, |loss|).
/// Throws TrainingError on a non-finite loss.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<GradCheckEntry> entries,
                           double tolerance, double h = 1e-5, double kink_tolerance = 1e-7);

}  // namespace langsg
