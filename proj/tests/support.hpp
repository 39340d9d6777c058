#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "concf/dataset.hpp"
#include "concf/model.hpp"

namespace concf::testing {

// Random binary matrix where every user has at least one item and at least
// one non-item.
inline InteractionSet random_interactions(int users, int items, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(density);
  std::uniform_int_distribution<int> pick(0, items - 1);
  std::vector<Interaction> pairs;
  for (int u = 0; u < users; ++u) {
    std::vector<int> row;
    for (int i = 0; i < items; ++i)
      if (keep(rng)) row.push_back(i);
    if (row.empty()) row.push_back(pick(rng));
    if (static_cast<int>(row.size()) == items) row.erase(row.begin() + pick(rng));
    for (int i : row) pairs.push_back({u, i});
  }
  return InteractionSet(users, items, std::move(pairs));
}

// Overwrites every tensor with N(0, scale^2) draws. Keeps relu inputs and
// unit-ball norms away from their kinks so finite differences are clean.
inline void randomize(ModelParams& params, std::mt19937_64& rng, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  for (auto& t : params.mutable_tensors())
    for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = n(rng);
}

struct GradCheck {
  bool ok = true;
  double worst_rel = 0.0;  // over entries with |gradient| > 1e-3
  std::string where;
  std::size_t entries = 0;
};

// Central differences over every parameter entry. loss(params, grads) returns
// the loss and accumulates analytic gradients when grads is non-null.
template <typename LossFn>
GradCheck check_gradients(ModelParams& params, LossFn&& loss, double eps = 1e-5,
                          double rel_tol = 1e-4, double abs_tol = 1e-6) {
  Gradients analytic(params);
  loss(params, &analytic);
  GradCheck out;
  double worst_failed = 0.0;
  const std::size_t nt = params.tensors().size();
  for (std::size_t k = 0; k < nt; ++k) {
    const Eigen::Index size = params.tensors()[k].value.size();
    for (Eigen::Index e = 0; e < size; ++e) {
      double& w = params.mutable_tensors()[k].value.data()[e];
      const double saved = w;
      w = saved + eps;
      const double up = loss(params, nullptr);
      params.mutable_tensors()[k].value.data()[e] = saved - eps;
      const double down = loss(params, nullptr);
      params.mutable_tensors()[k].value.data()[e] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.touched(k) ? analytic.value(k).data()[e] : 0.0;
      const double diff = std::abs(a - numeric);
      const double rel = diff / std::max({std::abs(a), std::abs(numeric), 1e-300});
      ++out.entries;
      const bool failed = diff > abs_tol && rel >= rel_tol;
      // reported relative error skips entries near zero
      if (std::max(std::abs(a), std::abs(numeric)) > 1e-3) out.worst_rel = std::max(out.worst_rel, rel);
      if (failed && rel >= worst_failed) {
        worst_failed = rel;
        out.where = params.tensors()[k].name + "[" + std::to_string(e) + "] analytic " +
                    std::to_string(a) + " numeric " + std::to_string(numeric);
        out.ok = false;
      }
    }
  }
  return out;
}

}  // namespace concf::testing
