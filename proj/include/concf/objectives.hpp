#pragma once

#include <span>
#include <vector>

#include "concf/types.hpp"

// The five one-class CF objectives. Every loss is summed over its inputs and
// returns its gradient with respect to the values it was given.
namespace concf {

struct PairwiseLoss {
  double loss = 0.0;
  std::vector<double> grad_pos;
  std::vector<double> grad_neg;
};

struct PointwiseLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

// Head A: -sum log sigmoid(pos - neg).
PairwiseLoss bpr_loss(std::span<const double> pos, std::span<const double> neg);

// Head B: sum max(0, -pos + neg + margin) on negative-distance scores.
// Subgradient is 0 at the hinge boundary.
PairwiseLoss triplet_hinge_loss(std::span<const double> pos, std::span<const double> neg,
                                double margin = 1.0);

// Head C: binary cross-entropy of sigmoid(logit) against 0/1 labels,
// evaluated from logits for stability. grad is d loss / d logit = p - r.
PointwiseLoss bce_with_logits_loss(std::span<const double> logits, std::span<const double> labels);

// Head D: 0.5 * sum (r - score)^2.
PointwiseLoss squared_error_loss(std::span<const double> scores, std::span<const double> labels);

struct MultinomialLoss {
  double loss = 0.0;
  Matrix grad;  // same shape as the logits
};

// Head E, one direction: row k of logits is a softmax over its columns;
// positives[k] lists the positive column indices of row k. Loss is
// -sum_k sum_{c in positives[k]} log softmax(logits.row(k))[c].
// Throws std::invalid_argument for a row without positives.
MultinomialLoss multinomial_loss(const Matrix& logits,
                                 const std::vector<std::span<const int>>& positives);

}  // namespace concf
