#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "concf/consensus.hpp"
#include "concf/model.hpp"

namespace concf {

struct ListLikelihood {
  double log_prob = 0.0;
  std::vector<double> grad;  // d log_prob / d scores[j]
};

// Top-n Plackett-Luce log-likelihood of the list order given the scores of
// its items (scores[k] belongs to the k-th listed item):
//   sum_{k<n} [ s_k - logsumexp(s_k..s_last) ].
// Throws std::invalid_argument when the list is shorter than n or n == 0.
ListLikelihood topn_log_likelihood(std::span<const double> scores, std::size_t n);

// Negative top-n log-likelihood of each user's consensus list under the
// head's scores, summed over users. Pushes weight * d loss / d score into the
// forward pass, which must have encoded the users and their consensus items.
// Throws std::invalid_argument for a user without a consensus list of at
// least n items.
double consensus_learning_loss(HeadForward& forward, std::span<const int> users,
                               const Consensus& consensus, std::size_t n, double weight);

}  // namespace concf
