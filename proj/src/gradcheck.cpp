#include "st5/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace st5 {

namespace {

std::vector<Index> coords_to_check(const Tensor& analytic, const GradCheckOptions& options,
                                   std::mt19937_64& rng) {
  const Index n = analytic.size();
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  if (options.max_coords_per_tensor == 0 || all.size() <= options.max_coords_per_tensor) return all;

  Index largest = 0;
  analytic.mat().cwiseAbs().reshaped<Eigen::RowMajor>().maxCoeff(&largest);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(options.max_coords_per_tensor);
  if (std::find(all.begin(), all.end(), largest) == all.end()) all.back() = largest;
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradCheckResult finite_difference_check(const std::function<double()>& f,
                                        std::span<Tensor* const> params,
                                        std::span<const Tensor> analytic,
                                        const GradCheckOptions& options) {
  if (!(options.step >= 1e-7 && options.step <= 1e-3)) {
    throw ParameterError("finite-difference step must lie in [1e-7, 1e-3]");
  }
  if (params.size() != analytic.size()) {
    throw DimensionError("finite_difference_check: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(analytic.size()) + " gradients");
  }
  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  const double h = options.step;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    if (p.shape() != analytic[t].shape()) {
      throw DimensionError("gradient " + shape_string(analytic[t].shape()) + " does not match parameter " +
                           shape_string(p.shape()));
    }
    for (Index c : coords_to_check(analytic[t], options, rng)) {
      const double saved = p[c];
      p[c] = saved + h;
      const double up = f();
      p[c] = saved - h;
      const double down = f();
      p[c] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("non-finite objective while perturbing tensor " + std::to_string(t) +
                           " coordinate " + std::to_string(c));
      }
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic[t][c];
      const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
      ++result.coords_checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_tensor = t;
        result.worst_coord = c;
      }
    }
  }
  return result;
}

GradCheckResult gradient_check(const LossBuilder& build, std::vector<Tensor>& params,
                               const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.parameter(p));
    ad::Var loss = build(tape, vars);
    tape.backward(loss);
    for (const ad::Var& v : vars) analytic.push_back(tape.grad(v));
  }
  auto evaluate = [&]() {
    ad::Tape tape(ad::Tape::Mode::Inference);
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.constant(p));
    return build(tape, vars).value().item();
  };
  std::vector<Tensor*> ptrs;
  for (Tensor& p : params) ptrs.push_back(&p);
  return finite_difference_check(evaluate, ptrs, analytic, options);
}

}  // namespace st5
