#include "concf/balancing.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace concf {

namespace {
constexpr double kMinWeight = 1e-6;

double sign(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

void normalize(std::vector<double>& w, double target_sum) {
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v *= target_sum / total;
}
}  // namespace

BalanceState::BalanceState(std::size_t num_heads, const BalanceOptions& options)
    : options_(options),
      weights_(num_heads, options.target_sum / static_cast<double>(num_heads)) {
  if (num_heads == 0) throw std::invalid_argument("balancing needs at least one head");
  if (!(options.target_sum > 0.0)) throw std::invalid_argument("weight sum must be positive");
  if (options.learning_rate < 0.0) throw std::invalid_argument("balancing learning rate must be >= 0");
}

void BalanceState::record_initial_losses(std::span<const double> losses) {
  if (!initial_.empty()) return;
  if (losses.size() != weights_.size()) throw std::invalid_argument("one initial loss per head required");
  for (double l : losses)
    if (!(l > 0.0)) throw std::invalid_argument("initial losses must be positive");
  initial_.assign(losses.begin(), losses.end());
}

void BalanceState::set_weights(std::span<const double> weights) {
  if (weights.size() != weights_.size()) throw std::invalid_argument("one weight per head required");
  weights_.assign(weights.begin(), weights.end());
}

std::vector<double> relative_ratio(std::span<const double> current, std::span<const double> initial) {
  if (current.size() != initial.size() || current.empty())
    throw std::invalid_argument("relative_ratio: mismatched head counts");
  std::vector<double> ratio(current.size());
  double mean = 0.0;
  for (std::size_t x = 0; x < current.size(); ++x) {
    if (!(initial[x] > 0.0)) throw std::invalid_argument("initial loss must be positive");
    ratio[x] = current[x] / initial[x];
    mean += ratio[x];
  }
  mean /= static_cast<double>(current.size());
  for (double& r : ratio) r = mean > 0.0 ? r / mean : 1.0;
  return ratio;
}

BalanceReport balance_step(BalanceState& state, std::span<const double> grad_norms,
                           std::span<const double> losses) {
  const std::size_t n = state.weights().size();
  if (grad_norms.size() != n || losses.size() != n)
    throw std::invalid_argument("balance_step: one gradient norm and loss per head required");
  BalanceReport report;
  if (!state.options().enabled) return report;

  state.record_initial_losses(losses);
  report.gamma = relative_ratio(losses, state.initial_losses());

  const auto lambda = state.weights();
  report.scale.resize(n);
  double mean_scale = 0.0;
  bool any = false;
  for (std::size_t x = 0; x < n; ++x) {
    report.scale[x] = lambda[x] * grad_norms[x];
    mean_scale += report.scale[x];
    any = any || grad_norms[x] > 0.0;
  }
  mean_scale /= static_cast<double>(n);
  report.target.resize(n);
  for (std::size_t x = 0; x < n; ++x) {
    report.target[x] = mean_scale * report.gamma[x];
    report.balance_loss += std::abs(report.scale[x] - report.target[x]);
  }
  if (!any) return report;

  const auto& opt = state.options();
  std::vector<double> next(lambda.begin(), lambda.end());
  for (std::size_t x = 0; x < n; ++x) {
    const double direction = sign(report.scale[x] - report.target[x]);
    if (opt.rule == BalanceRule::Additive)
      next[x] -= opt.learning_rate * direction * grad_norms[x];
    else
      next[x] *= std::exp(-opt.learning_rate * direction);
    next[x] = std::max(next[x], kMinWeight);
  }
  normalize(next, opt.target_sum);
  state.set_weights(next);
  report.updated = true;
  return report;
}

}  // namespace concf
