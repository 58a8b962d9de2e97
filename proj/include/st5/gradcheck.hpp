#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "st5/autodiff.hpp"

namespace st5 {

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every coordinate; otherwise a seeded sample of this many
  // coordinates per tensor (always including the largest-|gradient| one).
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_tensor = 0;
  Index worst_coord = 0;
};

// Compares `analytic[t]` against central differences of `f` taken by
// perturbing `params[t]` in place. The error per coordinate is
// |analytic - fd| / max(1, |analytic|).
GradCheckResult finite_difference_check(const std::function<double()>& f,
                                        std::span<Tensor* const> params,
                                        std::span<const Tensor> analytic,
                                        const GradCheckOptions& options = {});

// Builds the loss on a tape from leaf Vars bound to `params`, differentiates
// it once, and checks the result against central differences.
using LossBuilder = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

GradCheckResult gradient_check(const LossBuilder& build, std::vector<Tensor>& params,
                               const GradCheckOptions& options = {});

}  // namespace st5
