#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "concf/dataset.hpp"

namespace concf {

// Both take the ranked list (only its first n entries count) and the user's
// sorted held-out items. Throw std::invalid_argument when truth is empty.
double recall_at_n(std::span<const int> ranked, std::span<const int> truth, std::size_t n);
double ndcg_at_n(std::span<const int> ranked, std::span<const int> truth, std::size_t n);

struct RankingMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;  // users with at least one held-out item
};

// Means over users that have held-out items; lists[u] is user u's ranking.
RankingMetrics evaluate_lists(const std::vector<std::vector<int>>& lists,
                              const InteractionSet& truth, std::size_t n);

// Correct predictions of one model: (user, item) pairs of held-out items that
// appear in the user's top-k list. Sorted and unique.
using HitSet = std::vector<Interaction>;

HitSet hit_set(const std::vector<std::vector<int>>& lists, const InteractionSet& truth,
               std::size_t k = 50);

// |Hx - Hy| / |Hx|; nullopt when Hx is empty.
std::optional<double> per(const HitSet& hx, const HitSet& hy);

// |U - Hy| / |U| with U the union of the family; nullopt when U is empty.
std::optional<double> chr(const HitSet& hy, std::span<const HitSet> family);

// Per-user CHR of family[y] against the whole family, users with an empty
// union skipped, as (value, cumulative fraction) rows. One row per distinct
// value, so both columns are non-decreasing.
std::vector<std::pair<double, double>> user_chr_cdf(std::span<const HitSet> family, std::size_t y);

// Per-user CHR values before aggregation, in ascending user order.
std::vector<double> user_chr_values(std::span<const HitSet> family, std::size_t y);

}  // namespace concf
