#include <algorithm>
#include <cmath>
#include <set>

#include "st5/evaluation.hpp"
#include "st5/log.hpp"
#include "st5/ops.hpp"

namespace st5 {

namespace {

struct ProbeParams {
  Matrix w;
  Eigen::RowVectorXd b;

  double squared_norm() const { return w.squaredNorm() + b.squaredNorm(); }
  double dot(const ProbeParams& o) const { return w.cwiseProduct(o.w).sum() + b.dot(o.b); }
};

ProbeParams axpy(const ProbeParams& x, double a, const ProbeParams& y) { return {x.w + a * y.w, x.b + a * y.b}; }

Matrix logits(const Matrix& x, const ProbeParams& p) { return (x * p.w).rowwise() + p.b; }

double objective(const Matrix& x, std::span<const int> y, const ProbeParams& p, double l2) {
  const Matrix z = logits(x, p);
  double total = 0.0;
  for (Index i = 0; i < z.rows(); ++i) total += log_sum_exp(z.row(i)) - z(i, y[static_cast<std::size_t>(i)]);
  return total / static_cast<double>(z.rows()) + 0.5 * l2 * p.squared_norm();
}

ProbeParams gradient(const Matrix& x, std::span<const int> y, const ProbeParams& p, double l2) {
  Matrix r = softmax_rows(logits(x, p), 1.0);
  for (Index i = 0; i < r.rows(); ++i) r(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  r /= static_cast<double>(x.rows());
  return {x.transpose() * r + l2 * p.w, r.colwise().sum() + l2 * p.b};
}

}  // namespace

double probe_objective(const Matrix& features, std::span<const int> labels, const Matrix& weights,
                       const Eigen::RowVectorXd& bias, double l2_penalty) {
  return objective(features, labels, {weights, bias}, l2_penalty);
}

std::vector<int> Probe::predict(const Matrix& features) const {
  if (features.cols() != weights.rows()) {
    throw DimensionError("probe expects " + std::to_string(weights.rows()) + " features, got " +
                         std::to_string(features.cols()));
  }
  const Matrix z = (features * weights).rowwise() + bias;
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Index i = 0; i < z.rows(); ++i) {
    Index best = 0;
    z.row(i).maxCoeff(&best);  // first maximum on ties
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

Probe train_probe(const Matrix& features, std::span<const int> labels, const ProbeOptions& options) {
  const Index n = features.rows(), d = features.cols();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw DimensionError("probe has " + std::to_string(n) + " feature rows but " + std::to_string(labels.size()) +
                         " labels");
  }
  if (!(options.l2_penalty > 0.0)) throw ParameterError("probe l2_penalty must be > 0");
  if (options.max_iterations < 1) throw ParameterError("probe max_iterations must be positive");
  for (int y : labels) {
    if (y < 0) throw ContractError("probe labels must be non-negative class ids");
  }
  const std::set<int> present(labels.begin(), labels.end());
  const Index classes = present.empty() ? 0 : *present.rbegin() + 1;
  if (present.size() < 2) throw ContractError("probe needs at least 2 classes in the training labels");
  if (n < classes) throw ContractError("probe needs at least as many examples as classes");
  if (!features.allFinite()) throw NumericError("probe features contain non-finite values");

  const double l2 = options.l2_penalty;
  ProbeParams p{Matrix::Zero(d, classes), Eigen::RowVectorXd::Zero(classes)};
  double f = objective(features, labels, p, l2);
  ProbeParams g = gradient(features, labels, p, l2);

  Probe probe;
  probe.objective_trace.push_back(f);
  double step = 1.0;
  constexpr double kArmijo = 1e-4;
  std::int64_t it = 0;
  double gnorm = std::sqrt(g.squared_norm());
  while (gnorm >= options.gradient_tolerance && it < options.max_iterations) {
    const double g2 = g.squared_norm();
    ProbeParams trial = axpy(p, -step, g);
    double f_trial = objective(features, labels, trial, l2);
    while (!(f_trial <= f - kArmijo * step * g2)) {
      step *= 0.5;
      if (step < 1e-20) break;
      trial = axpy(p, -step, g);
      f_trial = objective(features, labels, trial, l2);
    }
    if (!(f_trial <= f)) break;  // no descent possible at machine precision
    ProbeParams g_new = gradient(features, labels, trial, l2);
    // Barzilai-Borwein step for the next trial.
    const ProbeParams s = axpy(trial, -1.0, p);
    const ProbeParams yk = axpy(g_new, -1.0, g);
    const double sy = s.dot(yk);
    step = sy > 0.0 ? std::clamp(s.squared_norm() / sy, 1e-10, 1e10) : 1.0;
    p = std::move(trial);
    g = std::move(g_new);
    f = f_trial;
    gnorm = std::sqrt(g.squared_norm());
    probe.objective_trace.push_back(f);
    ++it;
  }

  probe.weights = std::move(p.w);
  probe.bias = std::move(p.b);
  probe.iterations = it;
  probe.gradient_norm = gnorm;
  probe.converged = gnorm < options.gradient_tolerance;
  if (!probe.converged) {
    warn("probe did not converge after " + std::to_string(it) + " iterations; final gradient norm " +
         std::to_string(gnorm));
  }
  return probe;
}

}  // namespace st5
