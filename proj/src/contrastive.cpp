#include "st5/contrastive.hpp"

#include <numeric>

#include "st5/ops.hpp"

namespace st5 {

void PairBatch::validate(bool use_negatives) const {
  if (positives.batch() != anchors.batch()) {
    throw DimensionError("pair batch has " + std::to_string(anchors.batch()) + " anchors but " +
                         std::to_string(positives.batch()) + " positives");
  }
  if (use_negatives) {
    if (!negatives) throw ContractError("hard-negative loss requested but the batch has no negatives");
    if (negatives->batch() != anchors.batch()) {
      throw DimensionError("pair batch has " + std::to_string(anchors.batch()) + " anchors but " +
                           std::to_string(negatives->batch()) + " negatives");
    }
    if (size() < 1) throw ContractError("pair batch is empty");
  } else if (size() < 2) {
    throw ContractError("in-batch loss needs at least 2 pairs, got " + std::to_string(size()));
  }
}

Matrix similarity_matrix(const Matrix& anchors, const Matrix& candidates) {
  if (anchors.cols() != candidates.cols()) {
    throw DimensionError("similarity_matrix: embedding dims " + std::to_string(anchors.cols()) + " and " +
                         std::to_string(candidates.cols()) + " differ");
  }
  return anchors * candidates.transpose();
}

namespace {

void check_temperature(double t) {
  if (!(t > 0.0)) throw ParameterError("temperature must be > 0");
}

}  // namespace

double in_batch_loss(const Matrix& sim, double temperature) {
  check_temperature(temperature);
  if (sim.rows() != sim.cols() || sim.rows() < 2) {
    throw DimensionError("in_batch_loss needs a square similarity matrix with B >= 2, got " +
                         std::to_string(sim.rows()) + "x" + std::to_string(sim.cols()));
  }
  double total = 0.0;
  for (Index i = 0; i < sim.rows(); ++i) {
    total += log_sum_exp(sim.row(i) / temperature) - sim(i, i) / temperature;
  }
  return total / static_cast<double>(sim.rows());
}

double in_batch_loss_with_negatives(const Matrix& sim_pos, const Matrix& sim_neg, double temperature) {
  check_temperature(temperature);
  if (sim_pos.rows() != sim_pos.cols() || sim_pos.rows() < 1 || sim_neg.rows() != sim_pos.rows() ||
      sim_neg.cols() != sim_pos.cols()) {
    throw DimensionError("in_batch_loss_with_negatives needs two equal square matrices");
  }
  double total = 0.0;
  Eigen::RowVectorXd row(2 * sim_pos.cols());
  for (Index i = 0; i < sim_pos.rows(); ++i) {
    row << sim_pos.row(i) / temperature, sim_neg.row(i) / temperature;
    total += log_sum_exp(row) - sim_pos(i, i) / temperature;
  }
  return total / static_cast<double>(sim_pos.rows());
}

ad::Var contrastive_loss(const ad::Var& anchors, const ad::Var& positives, const std::optional<ad::Var>& negatives,
                         double temperature) {
  ad::Var logits = ad::matmul_transposed(anchors, positives);
  if (negatives) logits = ad::hcat(logits, ad::matmul_transposed(anchors, *negatives));
  return ad::cross_entropy_diagonal(logits, temperature);
}

ad::Var pair_batch_loss(const BoundModel& model, const PairBatch& batch, ExtractionStrategy strategy,
                        const LossConfig& config) {
  const bool with_negatives = config.use_hard_negatives;
  batch.validate(with_negatives);
  const Index B = batch.size();

  std::vector<const TokenBatch*> parts{&batch.anchors, &batch.positives};
  if (with_negatives) parts.push_back(&*batch.negatives);
  const TokenBatch joint = concat_batches(parts);

  const ad::Var raw = extract_raw(model, joint, strategy);
  const ad::Var emb = project_and_normalize(raw, model["proj"]);

  auto rows = [B](Index role) {
    std::vector<Index> r(static_cast<std::size_t>(B));
    std::iota(r.begin(), r.end(), role * B);
    return r;
  };
  const ad::Var anchors = ad::select_rows(emb, rows(0));
  const ad::Var positives = ad::select_rows(emb, rows(1));
  std::optional<ad::Var> negatives;
  if (with_negatives) negatives = ad::select_rows(emb, rows(2));
  return contrastive_loss(anchors, positives, negatives, config.temperature);
}

LossAndGradients loss_forward_backward(const EncoderDecoderModel& model, const PairBatch& batch,
                                       ExtractionStrategy strategy, const LossConfig& config) {
  ad::Tape tape;
  BoundModel bound(tape, model, true);
  const ad::Var loss = pair_batch_loss(bound, batch, strategy, config);
  tape.backward(loss);
  LossAndGradients out;
  out.loss = loss.value().item();
  out.gradients.reserve(bound.vars().size());
  for (const ad::Var& v : bound.vars()) out.gradients.push_back(tape.grad(v));
  return out;
}

}  // namespace st5
