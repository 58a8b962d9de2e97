#pragma once

#include <optional>
#include <vector>

#include "st5/autodiff.hpp"
#include "st5/embedder.hpp"
#include "st5/model.hpp"

namespace st5 {

struct LossConfig {
  double temperature = 0.01;
  bool use_hard_negatives = false;
};

// Row i of anchors, positives and (optionally) negatives belong together.
struct PairBatch {
  TokenBatch anchors;
  TokenBatch positives;
  std::optional<TokenBatch> negatives;

  Index size() const { return anchors.batch(); }
  // Equal batch sizes; B >= 2 unless hard negatives are present.
  void validate(bool use_negatives) const;
};

// Entry (i, j) = <anchors_i, candidates_j>.
Matrix similarity_matrix(const Matrix& anchors, const Matrix& candidates);

// (1/B) sum_i -log( exp(s_ii/t) / sum_j exp(s_ij/t) ), via log-sum-exp.
double in_batch_loss(const Matrix& sim, double temperature);

// Same, with every anchor's denominator also running over all B negatives:
// sum_j exp(pos_ij/t) + exp(neg_ij/t). -inf negatives contribute nothing.
double in_batch_loss_with_negatives(const Matrix& sim_pos, const Matrix& sim_neg, double temperature);

// Differentiable loss from unit-norm embedding rows.
ad::Var contrastive_loss(const ad::Var& anchors, const ad::Var& positives, const std::optional<ad::Var>& negatives,
                         double temperature);

// tokens -> shared-weight towers -> extract -> project -> normalize -> loss.
// All three roles go through one forward pass over the same parameters.
ad::Var pair_batch_loss(const BoundModel& model, const PairBatch& batch, ExtractionStrategy strategy,
                        const LossConfig& config);

struct LossAndGradients {
  double loss = 0.0;
  std::vector<Tensor> gradients;  // aligned with model.params
};

LossAndGradients loss_forward_backward(const EncoderDecoderModel& model, const PairBatch& batch,
                                       ExtractionStrategy strategy, const LossConfig& config);

}  // namespace st5
