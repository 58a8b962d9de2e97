#include "st5/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "st5/ops.hpp"

namespace st5::ad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("vars recorded on different tapes");
}

Shape with_last(const Shape& s, Index last) {
  Shape out = s;
  if (out.empty()) out.push_back(last);
  else out.back() = last;
  return out;
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return tape_->node(*this).value;
}

const Tape::Node& Tape::node(const Var& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("Var does not belong to this tape");
  return nodes_[v.id_];
}

Tape::Node& Tape::node(const Var& v) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(v));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.requires_grad = value.requires_grad() && recording();
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  if (value.mat().hasNaN()) throw NumericError(std::string(op) + " produced NaN");
  if (!value.all_finite()) {
    const bool inputs_finite =
        std::all_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.value().all_finite(); });
    if (inputs_finite) throw NumericError(std::string(op) + " produced Inf from finite inputs");
  }
  Node n;
  n.value = std::move(value);
  if (recording()) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](const Var& v) { return node(v).requires_grad; });
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

std::size_t Tape::backward(const Var& loss) {
  if (!recording()) throw ContractError("backward on an inference-mode tape");
  if (consumed_) throw ContractError("backward already run on this tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  consumed_ = true;
  Node& root = node(loss);
  if (!root.requires_grad) return 0;
  root.grad = Matrix::Ones(1, 1);
  root.has_grad = true;

  std::size_t visited = 0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(n.grad, *this);
    ++visited;
  }
  return visited;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = node(v);
  if (!n.has_grad) return Tensor(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

// ---- ops -------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (b.value().rank() != 2 || a.value().rank() < 1 || a.mat().cols() != b.mat().rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  Tensor out(with_last(a.shape(), b.mat().cols()), Matrix(a.mat() * b.mat()));
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](const Matrix& g, Tape& t) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.mat().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.mat().transpose() * g);
  });
}

Var matmul_transposed(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.mat().cols() != b.mat().cols()) {
    throw DimensionError("matmul_transposed: cannot multiply " + shape_string(a.shape()) +
                         " by the transpose of " + shape_string(b.shape()));
  }
  Matrix prod = a.mat() * b.mat().transpose();
  Tensor out = Tensor::from_matrix(prod);
  return a.tape().record("matmul_transposed", std::move(out), {a, b}, [a, b](const Matrix& g, Tape& t) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.mat());
    if (t.requires_grad(b)) t.accumulate(b, g.transpose() * a.mat());
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor out(a.shape(), Matrix(a.mat() + b.mat()));
  return a.tape().record("add", std::move(out), {a, b}, [a, b](const Matrix& g, Tape& t) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor out(a.shape(), Matrix(a.mat().cwiseProduct(b.mat())));
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](const Matrix& g, Tape& t) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(b.mat()));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(a.mat()));
  });
}

Var scale(const Var& a, double factor) {
  Tensor out(a.shape(), Matrix(a.mat() * factor));
  return a.tape().record("scale", std::move(out), {a},
                         [a, factor](const Matrix& g, Tape& t) { t.accumulate(a, g * factor); });
}

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.mat().sum());
  return a.tape().record("sum", std::move(out), {a}, [a](const Matrix& g, Tape& t) {
    t.accumulate(a, Matrix::Constant(a.mat().rows(), a.mat().cols(), g(0, 0)));
  });
}

Var relu(const Var& a) {
  Tensor out(a.shape(), Matrix(a.mat().cwiseMax(0.0)));
  return a.tape().record("relu", std::move(out), {a}, [a](const Matrix& g, Tape& t) {
    t.accumulate(a, (a.mat().array() > 0.0).select(g, 0.0));
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(out), {a}, [a](const Matrix& g, Tape& t) {
    t.accumulate(a, Eigen::Map<const Matrix>(g.data(), a.mat().rows(), a.mat().cols()));
  });
}

Var hcat(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.mat().rows() != b.mat().rows()) {
    throw DimensionError("hcat: cannot join " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  Matrix m(a.mat().rows(), a.mat().cols() + b.mat().cols());
  m << a.mat(), b.mat();
  Tensor out = Tensor::from_matrix(m);
  return a.tape().record("hcat", std::move(out), {a, b}, [a, b](const Matrix& g, Tape& t) {
    const Index ca = a.mat().cols();
    t.accumulate(a, g.leftCols(ca));
    t.accumulate(b, g.rightCols(g.cols() - ca));
  });
}

Var rms_norm(const Var& x, const Var& gain, double eps) {
  require_same_tape(x, gain);
  const Index d = x.mat().cols();
  if (gain.value().size() != d) {
    throw DimensionError("rms_norm: gain " + shape_string(gain.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
  }
  const Matrix& xm = x.mat();
  Eigen::VectorXd inv_rms(xm.rows());
  for (Index i = 0; i < xm.rows(); ++i) {
    inv_rms(i) = 1.0 / std::sqrt(xm.row(i).squaredNorm() / static_cast<double>(d) + eps);
  }
  const Eigen::RowVectorXd g_row = gain.mat().reshaped<Eigen::RowMajor>(1, d);
  Matrix y = (inv_rms.asDiagonal() * xm).array().rowwise() * g_row.array();
  Tensor out(x.shape(), std::move(y));
  return x.tape().record("rms_norm", std::move(out), {x, gain}, [x, gain, inv_rms, d](const Matrix& up, Tape& t) {
    const Matrix& xm = x.mat();
    const Eigen::RowVectorXd g_row = gain.mat().reshaped<Eigen::RowMajor>(1, d);
    if (t.requires_grad(gain)) {
      Eigen::RowVectorXd dg = (up.cwiseProduct(inv_rms.asDiagonal() * xm)).colwise().sum();
      t.accumulate(gain, Eigen::Map<const Matrix>(dg.data(), gain.mat().rows(), gain.mat().cols()));
    }
    if (t.requires_grad(x)) {
      Matrix u = up.array().rowwise() * g_row.array();
      Matrix dx(xm.rows(), d);
      for (Index i = 0; i < xm.rows(); ++i) {
        const double r = inv_rms(i);
        const double dot = u.row(i).dot(xm.row(i));
        dx.row(i) = u.row(i) * r - xm.row(i) * (dot * r * r * r / static_cast<double>(d));
      }
      t.accumulate(x, dx);
    }
  });
}

Var gather_rows(const Var& table, const IntMatrix& ids) {
  const Matrix& tm = table.mat();
  const Index n = ids.size();
  Matrix m(n, tm.cols());
  for (Index i = 0; i < n; ++i) {
    const auto id = ids.data()[i];
    if (id < 0 || id >= tm.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(id) + " outside table of " +
                           std::to_string(tm.rows()) + " rows");
    }
    m.row(i) = tm.row(id);
  }
  Tensor out(Shape{n, tm.cols()}, std::move(m));
  return table.tape().record("gather_rows", std::move(out), {table}, [table, ids](const Matrix& g, Tape& t) {
    Matrix dt = Matrix::Zero(table.mat().rows(), table.mat().cols());
    for (Index i = 0; i < ids.size(); ++i) dt.row(ids.data()[i]) += g.row(i);
    t.accumulate(table, dt);
  });
}

Var select_rows(const Var& x, std::span<const Index> rows) {
  const Matrix& xm = x.mat();
  std::vector<Index> idx(rows.begin(), rows.end());
  Matrix m(static_cast<Index>(idx.size()), xm.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= xm.rows()) {
      throw DimensionError("select_rows: row " + std::to_string(idx[i]) + " out of range for " +
                           shape_string(x.shape()));
    }
    m.row(static_cast<Index>(i)) = xm.row(idx[i]);
  }
  Tensor out = Tensor::from_matrix(m);
  return x.tape().record("select_rows", std::move(out), {x}, [x, idx](const Matrix& g, Tape& t) {
    Matrix dx = Matrix::Zero(x.mat().rows(), x.mat().cols());
    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(x, dx);
  });
}

Var masked_mean_rows(const Var& x, const IntMatrix& mask) {
  const Matrix& xm = x.mat();
  const Index batch = mask.rows(), len = mask.cols();
  if (batch * len != xm.rows()) {
    throw DimensionError("masked_mean_rows: mask " + std::to_string(batch) + "x" + std::to_string(len) +
                         " does not cover " + shape_string(x.shape()));
  }
  Matrix m(batch, xm.cols());
  Eigen::VectorXd inv_count(batch);
  for (Index b = 0; b < batch; ++b) {
    // Same kernel as the standalone masked_mean.
    m.row(b) = masked_mean(xm.middleRows(b * len, len), mask.row(b));
    inv_count(b) = 1.0 / static_cast<double>((mask.row(b).array() != 0).count());
  }
  Tensor out(Shape{batch, xm.cols()}, std::move(m));
  return x.tape().record("masked_mean_rows", std::move(out), {x}, [x, mask, inv_count](const Matrix& g, Tape& t) {
    const Index len = mask.cols();
    Matrix dx = Matrix::Zero(x.mat().rows(), x.mat().cols());
    for (Index b = 0; b < mask.rows(); ++b) {
      for (Index l = 0; l < len; ++l) {
        if (mask(b, l) != 0) dx.row(b * len + l) = g.row(b) * inv_count(b);
      }
    }
    t.accumulate(x, dx);
  });
}

Var l2_normalize_rows(const Var& x) {
  Matrix y = st5::l2_normalize_rows(x.mat());
  Eigen::VectorXd norms = x.mat().rowwise().norm();
  Tensor out(x.shape(), y);
  return x.tape().record("l2_normalize_rows", std::move(out), {x}, [x, y, norms](const Matrix& g, Tape& t) {
    Matrix dx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      dx.row(i) = (g.row(i) - y.row(i) * y.row(i).dot(g.row(i))) / norms(i);
    }
    t.accumulate(x, dx);
  });
}

Var softmax_rows(const Var& x, double temperature) {
  Matrix y = st5::softmax_rows(x.mat(), temperature);
  Tensor out(x.shape(), y);
  return x.tape().record("softmax_rows", std::move(out), {x}, [x, y, temperature](const Matrix& g, Tape& t) {
    Eigen::VectorXd inner = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = y.cwiseProduct(g - inner.replicate(1, g.cols())) / temperature;
    t.accumulate(x, dx);
  });
}

Var cross_entropy_diagonal(const Var& logits, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("cross_entropy_diagonal: temperature must be > 0");
  const Matrix& z = logits.mat();
  const Index rows = z.rows();
  if (logits.value().rank() != 2 || rows == 0 || z.cols() < rows) {
    throw DimensionError("cross_entropy_diagonal: need a [B x M] matrix with M >= B >= 1, got " +
                         shape_string(logits.shape()));
  }
  Matrix probs(rows, z.cols());
  double total = 0.0;
  for (Index i = 0; i < rows; ++i) {
    const Eigen::RowVectorXd scaled = z.row(i) / temperature;
    const double lse = log_sum_exp(scaled);
    total += lse - scaled(i);
    probs.row(i) = (scaled.array() == kNegInf).select(0.0, (scaled.array() - lse).exp()).matrix();
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(rows));
  return logits.tape().record("cross_entropy_diagonal", std::move(out), {logits},
                              [logits, probs, temperature](const Matrix& g, Tape& t) {
                                Matrix d = probs;
                                for (Index i = 0; i < d.rows(); ++i) d(i, i) -= 1.0;
                                d *= g(0, 0) / (static_cast<double>(d.rows()) * temperature);
                                t.accumulate(logits, d);
                              });
}

Var attention(const Var& q, const Var& k, const Var& v, const AttentionLayout& layout,
              const std::optional<Var>& rel_bias) {
  const Index B = layout.batch, Lq = layout.q_len, Lk = layout.k_len, H = layout.heads;
  const Index D = q.mat().cols();
  if (q.mat().rows() != B * Lq || k.mat().rows() != B * Lk || v.mat().rows() != B * Lk ||
      k.mat().cols() != D || v.mat().cols() != D || H <= 0 || D % H != 0) {
    throw DimensionError("attention: inconsistent q " + shape_string(q.shape()) + ", k " +
                         shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  if (layout.key_mask && (layout.key_mask->rows() != B || layout.key_mask->cols() != Lk)) {
    throw DimensionError("attention: key mask does not match batch x key length");
  }
  if (rel_bias && (!layout.buckets || layout.buckets->rows() != Lq || layout.buckets->cols() != Lk ||
                   rel_bias->mat().cols() != H)) {
    throw DimensionError("attention: relative bias needs a q_len x k_len bucket map and one column per head");
  }
  const Index dh = D / H;
  const double sc = layout.scale;

  // Probabilities for every (batch, head) block, kept for backward.
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(B * H));
  Matrix out(B * Lq, D);
  Matrix logits(Lq, Lk);
  for (Index b = 0; b < B; ++b) {
    for (Index h = 0; h < H; ++h) {
      const auto qh = q.mat().block(b * Lq, h * dh, Lq, dh);
      const auto kh = k.mat().block(b * Lk, h * dh, Lk, dh);
      const auto vh = v.mat().block(b * Lk, h * dh, Lk, dh);
      logits.noalias() = sc * (qh * kh.transpose());
      for (Index i = 0; i < Lq; ++i) {
        for (Index j = 0; j < Lk; ++j) {
          const bool masked = (layout.key_mask && (*layout.key_mask)(b, j) == 0) || (layout.causal && j > i);
          if (masked) {
            logits(i, j) = kNegInf;
          } else if (rel_bias) {
            logits(i, j) += rel_bias->mat()((*layout.buckets)(i, j), h);
          }
        }
      }
      Matrix& p = (*probs)[static_cast<std::size_t>(b * H + h)];
      p.resize(Lq, Lk);
      for (Index i = 0; i < Lq; ++i) {
        const double m = logits.row(i).maxCoeff();
        if (m == kNegInf) {
          p.row(i).setZero();
          continue;
        }
        // Eigen's vectorized exp clamps -inf to a denormal; masked keys must get exactly 0.
        p.row(i) = (logits.row(i).array() == kNegInf).select(0.0, (logits.row(i).array() - m).exp()).matrix();
        p.row(i) /= p.row(i).sum();
      }
      out.block(b * Lq, h * dh, Lq, dh).noalias() = p * vh;
    }
  }

  Tape& tape = q.tape();
  Tensor result(q.shape(), std::move(out));
  std::optional<Var> bias = rel_bias;
  const IntMatrix buckets = layout.buckets ? *layout.buckets : IntMatrix();
  auto backward = [q, k, v, bias, probs, buckets, B, Lq, Lk, H, dh, sc](const Matrix& g, Tape& t) {
    const Index D = H * dh;
    Matrix dq = Matrix::Zero(B * Lq, D), dk = Matrix::Zero(B * Lk, D), dv = Matrix::Zero(B * Lk, D);
    Matrix dbias;
    if (bias) dbias = Matrix::Zero(bias->mat().rows(), bias->mat().cols());
    Matrix dp(Lq, Lk), ds(Lq, Lk);
    for (Index b = 0; b < B; ++b) {
      for (Index h = 0; h < H; ++h) {
        const Matrix& p = (*probs)[static_cast<std::size_t>(b * H + h)];
        const auto qh = q.mat().block(b * Lq, h * dh, Lq, dh);
        const auto kh = k.mat().block(b * Lk, h * dh, Lk, dh);
        const auto vh = v.mat().block(b * Lk, h * dh, Lk, dh);
        const auto gh = g.block(b * Lq, h * dh, Lq, dh);
        dv.block(b * Lk, h * dh, Lk, dh).noalias() += p.transpose() * gh;
        dp.noalias() = gh * vh.transpose();
        const Eigen::VectorXd inner = dp.cwiseProduct(p).rowwise().sum();
        ds = p.cwiseProduct(dp - inner.replicate(1, Lk));
        dq.block(b * Lq, h * dh, Lq, dh).noalias() += sc * (ds * kh);
        dk.block(b * Lk, h * dh, Lk, dh).noalias() += sc * (ds.transpose() * qh);
        if (bias) {
          for (Index i = 0; i < Lq; ++i) {
            for (Index j = 0; j < Lk; ++j) dbias(buckets(i, j), h) += ds(i, j);
          }
        }
      }
    }
    t.accumulate(q, dq);
    t.accumulate(k, dk);
    t.accumulate(v, dv);
    if (bias) t.accumulate(*bias, dbias);
  };
  if (rel_bias) return tape.record("attention", std::move(result), {q, k, v, *rel_bias}, std::move(backward));
  return tape.record("attention", std::move(result), {q, k, v}, std::move(backward));
}

}  // namespace st5::ad
