#include "concf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <map>
#include <stdexcept>

namespace concf {

namespace {
std::span<const int> head_of(std::span<const int> ranked, std::size_t n) {
  return ranked.first(std::min(n, ranked.size()));
}

bool contains_sorted(std::span<const int> sorted, int x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

std::size_t overlap(const HitSet& a, const HitSet& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) ++i;
    else if (*j < *i) ++j;
    else { ++n; ++i; ++j; }
  }
  return n;
}

HitSet family_union(std::span<const HitSet> family) {
  HitSet u;
  for (const auto& h : family) {
    HitSet merged;
    std::set_union(u.begin(), u.end(), h.begin(), h.end(), std::back_inserter(merged));
    u.swap(merged);
  }
  return u;
}
}  // namespace

double recall_at_n(std::span<const int> ranked, std::span<const int> truth, std::size_t n) {
  if (truth.empty()) throw std::invalid_argument("recall needs at least one held-out item");
  std::size_t hits = 0;
  for (int i : head_of(ranked, n)) hits += contains_sorted(truth, i);
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ndcg_at_n(std::span<const int> ranked, std::span<const int> truth, std::size_t n) {
  if (truth.empty()) throw std::invalid_argument("ndcg needs at least one held-out item");
  const auto top = head_of(ranked, n);
  double dcg = 0.0;
  for (std::size_t k = 0; k < top.size(); ++k)
    if (contains_sorted(truth, top[k])) dcg += 1.0 / std::log2(static_cast<double>(k) + 2.0);
  double idcg = 0.0;
  for (std::size_t k = 0; k < std::min(truth.size(), n); ++k)
    idcg += 1.0 / std::log2(static_cast<double>(k) + 2.0);
  return dcg / idcg;
}

RankingMetrics evaluate_lists(const std::vector<std::vector<int>>& lists,
                              const InteractionSet& truth, std::size_t n) {
  RankingMetrics m;
  const int users = std::min(truth.num_users(), static_cast<int>(lists.size()));
  for (int u = 0; u < users; ++u) {
    const auto held = truth.items_of(u);
    if (held.empty()) continue;
    const auto& list = lists[static_cast<std::size_t>(u)];
    m.recall += recall_at_n(list, held, n);
    m.ndcg += ndcg_at_n(list, held, n);
    ++m.users;
  }
  if (m.users) {
    m.recall /= static_cast<double>(m.users);
    m.ndcg /= static_cast<double>(m.users);
  }
  return m;
}

HitSet hit_set(const std::vector<std::vector<int>>& lists, const InteractionSet& truth,
               std::size_t k) {
  HitSet hits;
  const int users = std::min(truth.num_users(), static_cast<int>(lists.size()));
  for (int u = 0; u < users; ++u) {
    const auto held = truth.items_of(u);
    if (held.empty()) continue;
    std::vector<int> found;
    for (int i : head_of(lists[static_cast<std::size_t>(u)], k))
      if (contains_sorted(held, i)) found.push_back(i);
    std::sort(found.begin(), found.end());
    found.erase(std::unique(found.begin(), found.end()), found.end());
    for (int i : found) hits.push_back({u, i});
  }
  return hits;
}

std::optional<double> per(const HitSet& hx, const HitSet& hy) {
  if (hx.empty()) return std::nullopt;
  return static_cast<double>(hx.size() - overlap(hx, hy)) / static_cast<double>(hx.size());
}

std::optional<double> chr(const HitSet& hy, std::span<const HitSet> family) {
  const HitSet u = family_union(family);
  if (u.empty()) return std::nullopt;
  return static_cast<double>(u.size() - overlap(u, hy)) / static_cast<double>(u.size());
}

std::vector<double> user_chr_values(std::span<const HitSet> family, std::size_t y) {
  if (y >= family.size()) throw std::out_of_range("user_chr: model index out of range");
  // user -> (|union|, |union ∩ Hy|)
  std::map<int, std::pair<std::size_t, std::size_t>> counts;
  const HitSet u = family_union(family);
  const HitSet& hy = family[y];
  auto j = hy.begin();
  for (const auto& p : u) {
    auto& c = counts[p.user];
    ++c.first;
    while (j != hy.end() && *j < p) ++j;
    if (j != hy.end() && *j == p) ++c.second;
  }
  std::vector<double> out;
  out.reserve(counts.size());
  for (const auto& [user, c] : counts)
    out.push_back(static_cast<double>(c.first - c.second) / static_cast<double>(c.first));
  return out;
}

std::vector<std::pair<double, double>> user_chr_cdf(std::span<const HitSet> family, std::size_t y) {
  std::vector<double> v = user_chr_values(family, y);
  std::sort(v.begin(), v.end());
  std::vector<std::pair<double, double>> rows;
  const double total = static_cast<double>(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k + 1 < v.size() && v[k + 1] == v[k]) continue;
    rows.emplace_back(v[k], static_cast<double>(k + 1) / total);
  }
  return rows;
}

}  // namespace concf
