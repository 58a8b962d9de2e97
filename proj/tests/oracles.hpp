#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "st5/tensor.hpp"

namespace st5::testing {

// Straight cross-entropy: every candidate's exp(logit) summed explicitly
// after shifting by the row max.
inline double loss_oracle(const Matrix& pos, const Matrix* neg, double tau) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (Index i = 0; i < pos.rows(); ++i) {
    std::vector<double> logits;
    for (Index j = 0; j < pos.cols(); ++j) logits.push_back(pos(i, j) / tau);
    if (neg) {
      for (Index j = 0; j < neg->cols(); ++j) logits.push_back((*neg)(i, j) / tau);
    }
    double m = kNegInf;
    for (double l : logits) m = std::max(m, l);
    double z = 0.0;
    for (double l : logits) {
      if (l != kNegInf) z += std::exp(l - m);
    }
    total += -(pos(i, i) / tau - m - std::log(z));
  }
  return total / static_cast<double>(pos.rows());
}

// O(n^2) counting ranks and a two-pass Pearson.
inline double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Newton's method on the same regularized multinomial objective, with the
// parameters stacked as theta[k * (d + 1) + j], j == d being the bias.
inline std::pair<Matrix, Eigen::RowVectorXd> newton_probe(const Matrix& x, const std::vector<int>& y, int K, double l2) {
  const Index n = x.rows(), d = x.cols(), p = K * (d + 1);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd g = l2 * theta;
    Eigen::MatrixXd h = l2 * Eigen::MatrixXd::Identity(p, p);
    for (Index i = 0; i < n; ++i) {
      Eigen::VectorXd xt(d + 1);
      xt << x.row(i).transpose(), 1.0;
      Eigen::VectorXd z(K);
      for (int k = 0; k < K; ++k) z(k) = theta.segment(k * (d + 1), d + 1).dot(xt);
      Eigen::VectorXd prob = (z.array() - z.maxCoeff()).exp();
      prob /= prob.sum();
      for (int k = 0; k < K; ++k) {
        g.segment(k * (d + 1), d + 1) += (prob(k) - (y[i] == k)) * xt / static_cast<double>(n);
        for (int m = 0; m < K; ++m) {
          const double c = prob(k) * ((k == m) - prob(m)) / static_cast<double>(n);
          h.block(k * (d + 1), m * (d + 1), d + 1, d + 1) += c * xt * xt.transpose();
        }
      }
    }
    theta -= h.ldlt().solve(g);
    if (g.norm() < 1e-14) break;
  }
  Matrix w(d, K);
  Eigen::RowVectorXd b(K);
  for (int k = 0; k < K; ++k) {
    w.col(k) = theta.segment(k * (d + 1), d);
    b(k) = theta(k * (d + 1) + d);
  }
  return {w, b};
}

}  // namespace st5::testing
