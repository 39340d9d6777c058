#include "concf/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "concf/types.hpp"

namespace concf {

InteractionSet planted_factor_data(const PlantedOptions& o, std::uint64_t seed) {
  if (o.num_users <= 0 || o.num_items <= 0 || o.rank <= 0)
    throw std::invalid_argument("planted data needs positive sizes");
  if (o.per_user < 0 || o.per_user > o.num_items)
    throw std::invalid_argument("per_user must lie in [0, num_items]");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> factor(0.0, 1.0 / std::sqrt(static_cast<double>(o.rank)));
  std::normal_distribution<double> offset(0.0, o.popularity);

  Matrix users(o.num_users, o.rank), items(o.num_items, o.rank);
  for (Eigen::Index k = 0; k < users.size(); ++k) users.data()[k] = factor(rng);
  for (Eigen::Index k = 0; k < items.size(); ++k) items.data()[k] = factor(rng);
  Vector bias(o.num_items);
  for (Eigen::Index i = 0; i < bias.size(); ++i) bias(i) = o.popularity > 0 ? offset(rng) : 0.0;

  std::extreme_value_distribution<double> gumbel(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto noise = [&] { return o.noise == PlantedNoise::Gumbel ? gumbel(rng) : gauss(rng); };
  std::vector<Interaction> pairs;
  pairs.reserve(static_cast<std::size_t>(o.num_users) * static_cast<std::size_t>(o.per_user));
  std::vector<double> key(static_cast<std::size_t>(o.num_items));
  std::vector<int> order(static_cast<std::size_t>(o.num_items));
  for (int u = 0; u < o.num_users; ++u) {
    const Vector affinity = items * users.row(u).transpose() + bias;
    for (int i = 0; i < o.num_items; ++i)
      key[static_cast<std::size_t>(i)] = o.sharpness * affinity(i) + noise();
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + o.per_user, order.end(),
                      [&](int a, int b) { return key[static_cast<std::size_t>(a)] > key[static_cast<std::size_t>(b)]; });
    for (int k = 0; k < o.per_user; ++k) pairs.push_back({u, order[static_cast<std::size_t>(k)]});
  }
  return InteractionSet(o.num_users, o.num_items, std::move(pairs));
}

}  // namespace concf
