#include "concf/ranking_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace concf {

ListLikelihood topn_log_likelihood(std::span<const double> scores, std::size_t n) {
  if (n == 0) throw std::invalid_argument("top-n likelihood needs n >= 1");
  if (scores.size() < n)
    throw std::invalid_argument("list of length " + std::to_string(scores.size()) +
                                " is shorter than n = " + std::to_string(n));
  const std::size_t len = scores.size();
  for (double s : scores)
    if (!std::isfinite(s)) throw std::domain_error("non-finite score in listwise loss");

  // suffix[k] = log sum_{i >= k} exp(s_i)
  std::vector<double> suffix(len);
  suffix[len - 1] = scores[len - 1];
  for (std::size_t k = len - 1; k-- > 0;) {
    const double a = scores[k], b = suffix[k + 1];
    const double hi = std::max(a, b);
    suffix[k] = hi + std::log1p(std::exp(std::min(a, b) - hi));
  }

  ListLikelihood out;
  for (std::size_t k = 0; k < n; ++k) out.log_prob += scores[k] - suffix[k];

  // For item j the softmax mass over suffixes k <= min(j, n-1):
  //   sum_k exp(s_j - suffix[k]) = exp(s_j - suffix[m]) * acc[m],
  //   acc[m] = sum_{k<=m} exp(suffix[m] - suffix[k]) (each term <= 1).
  out.grad.resize(len);
  double acc = 0.0;
  for (std::size_t j = 0; j < len; ++j) {
    if (j < n) acc = (j == 0 ? 0.0 : acc * std::exp(suffix[j] - suffix[j - 1])) + 1.0;
    const std::size_t m = std::min(j, n - 1);
    const double mass = std::exp(scores[j] - suffix[m]) * acc;
    out.grad[j] = (j < n ? 1.0 : 0.0) - mass;
  }
  return out;
}

double consensus_learning_loss(HeadForward& forward, std::span<const int> users,
                               const Consensus& consensus, std::size_t n, double weight) {
  double total = 0.0;
  std::vector<double> scores;
  std::vector<int> item_rows;
  for (int u : users) {
    if (u < 0 || static_cast<std::size_t>(u) >= consensus.users.size())
      throw std::invalid_argument("no consensus list for user " + std::to_string(u));
    const auto& list = consensus.users[static_cast<std::size_t>(u)].items;
    if (list.size() < n)
      throw std::invalid_argument("consensus list of user " + std::to_string(u) + " has " +
                                  std::to_string(list.size()) + " items, fewer than n = " +
                                  std::to_string(n));
    const int ur = forward.user_row(u);
    scores.resize(list.size());
    item_rows.resize(list.size());
    for (std::size_t k = 0; k < list.size(); ++k) {
      item_rows[k] = forward.item_row(list[k]);
      scores[k] = forward.score(ur, item_rows[k]);
    }
    const ListLikelihood ll = topn_log_likelihood(scores, n);
    total -= ll.log_prob;
    if (weight != 0.0)
      for (std::size_t k = 0; k < list.size(); ++k)
        forward.add_score_grad(ur, item_rows[k], -weight * ll.grad[k]);
  }
  return total;
}

}  // namespace concf
