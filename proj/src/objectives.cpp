#include "concf/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace concf {
namespace {

// log(1 + e^x) without overflow
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": input lengths differ");
}

}  // namespace

PairwiseLoss bpr_loss(std::span<const double> pos, std::span<const double> neg) {
  require_same_size(pos.size(), neg.size(), "bpr_loss");
  PairwiseLoss out;
  out.grad_pos.resize(pos.size());
  out.grad_neg.resize(pos.size());
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const double delta = pos[k] - neg[k];
    out.loss += softplus(-delta);
    const double g = sigmoid(-delta);  // 1 - sigmoid(delta)
    out.grad_pos[k] = -g;
    out.grad_neg[k] = g;
  }
  return out;
}

PairwiseLoss triplet_hinge_loss(std::span<const double> pos, std::span<const double> neg,
                                double margin) {
  require_same_size(pos.size(), neg.size(), "triplet_hinge_loss");
  PairwiseLoss out;
  out.grad_pos.assign(pos.size(), 0.0);
  out.grad_neg.assign(pos.size(), 0.0);
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const double v = -pos[k] + neg[k] + margin;
    if (v > 0.0) {
      out.loss += v;
      out.grad_pos[k] = -1.0;
      out.grad_neg[k] = 1.0;
    }
  }
  return out;
}

PointwiseLoss bce_with_logits_loss(std::span<const double> logits, std::span<const double> labels) {
  require_same_size(logits.size(), labels.size(), "bce_with_logits_loss");
  PointwiseLoss out;
  out.grad.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double x = logits[k], r = labels[k];
    // -[r log s(x) + (1-r) log(1-s(x))] = r softplus(-x) + (1-r) softplus(x)
    out.loss += r * softplus(-x) + (1.0 - r) * softplus(x);
    out.grad[k] = sigmoid(x) - r;
  }
  return out;
}

PointwiseLoss squared_error_loss(std::span<const double> scores, std::span<const double> labels) {
  require_same_size(scores.size(), labels.size(), "squared_error_loss");
  PointwiseLoss out;
  out.grad.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double diff = scores[k] - labels[k];
    out.loss += 0.5 * diff * diff;
    out.grad[k] = diff;
  }
  return out;
}

MultinomialLoss multinomial_loss(const Matrix& logits,
                                 const std::vector<std::span<const int>>& positives) {
  if (static_cast<Eigen::Index>(positives.size()) != logits.rows())
    throw std::invalid_argument("multinomial_loss: one positive list per row required");
  MultinomialLoss out;
  out.grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto& pos = positives[static_cast<std::size_t>(r)];
    if (pos.empty())
      throw std::invalid_argument("multinomial_loss: row " + std::to_string(r) + " has no positives");
    const auto row = logits.row(r);
    const double shift = row.maxCoeff();
    const double lse = shift + std::log((row.array() - shift).exp().sum());
    const auto n = static_cast<double>(pos.size());
    for (int c : pos) out.loss -= row(c) - lse;
    // d/dl_c = n * softmax_c - [c positive]
    out.grad.row(r) = n * (row.array() - lse).exp();
    for (int c : pos) out.grad(r, c) -= 1.0;
  }
  return out;
}

}  // namespace concf
