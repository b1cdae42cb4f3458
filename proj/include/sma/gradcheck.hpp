#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sma/tensor.hpp"

namespace sma {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates checked per input; 0 checks all of them. Larger inputs are
  /// sampled deterministically from `seed`.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of the scalar `f` with respect to each leaf
/// in `inputs` against central differences. The per-coordinate error is
/// |analytic - numeric| / max(1, |analytic|, |numeric|). Throws NumericError
/// if two evaluations of `f` at the same point disagree.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opt = {});

/// Single-input form.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-5);

}  // namespace sma
