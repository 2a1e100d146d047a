#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "skillrec/neuralkit/tensor.hpp"

namespace skillrec::nk {

/// Evaluates the loss at the given parameters. When `grads` is non-null the
/// function also accumulates analytic gradients into it (already zeroed).
using LossFunction = std::function<double(const Parameters& params, Gradients* grads)>;

struct GradCheckOptions {
  double step = 1e-4;
  /// Entries sampled per tensor; row-sparse tensors sample only touched rows.
  std::size_t max_entries_per_tensor = 256;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double denominator_floor = 1e-6;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_tensor;
  Eigen::Index worst_row = -1;
  Eigen::Index worst_col = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_relative_error <= tolerance; }
};

/// Central finite differences against analytic gradients. Parameters are
/// perturbed in place and restored before returning.
GradCheckReport grad_check(const LossFunction& loss, Parameters& params, double tolerance,
                           const GradCheckOptions& options = {});

}  // namespace skillrec::nk
