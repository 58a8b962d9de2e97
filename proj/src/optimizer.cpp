#include "st5/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace st5 {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::Adafactor ? "adafactor" : "adam";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adafactor") return OptimizerKind::Adafactor;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected adafactor or adam)");
}

bool is_factored(const Shape& shape) { return shape.size() == 2 && shape[0] > 1 && shape[1] > 1; }

OptimizerState make_optimizer_state(const OptimizerConfig& config, const ParameterStore& params) {
  OptimizerState state{config, 0, {}};
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& n = params.name(i);
    const Shape& s = params[i].shape();
    if (config.kind == OptimizerKind::Adafactor) {
      if (is_factored(s)) {
        state.slots.add(n + ".row", Tensor(Shape{s[0]}));
        state.slots.add(n + ".col", Tensor(Shape{s[1]}));
      } else {
        state.slots.add(n + ".v", Tensor(s));
      }
    } else {
      state.slots.add(n + ".m", Tensor(s));
      state.slots.add(n + ".v", Tensor(s));
    }
  }
  return state;
}

namespace {

void adafactor_update(Tensor& param, const Tensor& grad, OptimizerState& state, const std::string& name,
                      double beta, double lr) {
  const OptimizerConfig& c = state.config;
  const Matrix g2 = grad.mat().array().square() + c.epsilon1;
  Matrix update;
  if (is_factored(param.shape())) {
    Matrix& row = state.slots.at(name + ".row").mat();  // 1 x rows
    Matrix& col = state.slots.at(name + ".col").mat();  // 1 x cols
    row = beta * row + (1.0 - beta) * g2.rowwise().mean().transpose();
    col = beta * col + (1.0 - beta) * g2.colwise().mean();
    const Matrix v = (row.transpose() * col) / row.mean();
    update = grad.mat().array() / v.array().sqrt();
  } else {
    Matrix& v = state.slots.at(name + ".v").mat();
    v = beta * v + (1.0 - beta) * g2;
    update = grad.mat().array() / v.array().sqrt();
  }
  const double rms = std::sqrt(update.squaredNorm() / static_cast<double>(update.size()));
  update /= std::max(1.0, rms / c.clip_threshold);
  param.mat() -= lr * update;
}

void adam_update(Tensor& param, const Tensor& grad, OptimizerState& state, const std::string& name, double t,
                 double lr) {
  const OptimizerConfig& c = state.config;
  Matrix& m = state.slots.at(name + ".m").mat();
  Matrix& v = state.slots.at(name + ".v").mat();
  m = c.beta1 * m + (1.0 - c.beta1) * grad.mat();
  v = c.beta2 * v + (1.0 - c.beta2) * grad.mat().cwiseAbs2();
  const double mc = 1.0 - std::pow(c.beta1, t);
  const double vc = 1.0 - std::pow(c.beta2, t);
  param.mat().array() -= lr * (m.array() / mc) / ((v.array() / vc).sqrt() + c.adam_epsilon);
}

}  // namespace

void optimizer_step(ParameterStore& params, OptimizerState& state, std::span<const Tensor> grads, double lr) {
  if (grads.size() != params.size()) {
    throw DimensionError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape()) {
      throw DimensionError("gradient for '" + params.name(i) + "' has shape " + shape_string(grads[i].shape()) +
                           ", parameter has " + shape_string(params[i].shape()));
    }
    if (!grads[i].all_finite()) throw NumericError("non-finite gradient for '" + params.name(i) + "'");
  }
  const double t = static_cast<double>(state.step + 1);
  const double beta = 1.0 - std::pow(t, -state.config.decay_exponent);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.config.kind == OptimizerKind::Adafactor) {
      adafactor_update(params[i], grads[i], state, params.name(i), beta, lr);
    } else {
      adam_update(params[i], grads[i], state, params.name(i), t, lr);
    }
  }
  ++state.step;
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) sq += g.mat().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& g : grads) g.mat() *= factor;
  }
  return norm;
}

}  // namespace st5
