#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace concf {

enum class BalanceRule {
  // lambda_x *= exp(-lr * sign(G_x - target_x)); scale-free, the default.
  LogSign,
  // lambda_x -= lr * sign(G_x - target_x) * |grad L_x|; the raw subgradient step.
  Additive,
};

struct BalanceOptions {
  bool enabled = true;
  double learning_rate = 0.025;
  double target_sum = 1.0;  // S: weights are renormalized to sum to this
  BalanceRule rule = BalanceRule::LogSign;
};

// Gradient-norm balancing of per-head loss weights. Weights start equal at
// S / |heads| and always sum to S.
class BalanceState {
 public:
  BalanceState(std::size_t num_heads, const BalanceOptions& options);

  std::span<const double> weights() const { return weights_; }
  std::span<const double> initial_losses() const { return initial_; }
  bool has_initial_losses() const { return !initial_.empty(); }
  const BalanceOptions& options() const { return options_; }

  // Recorded once; later calls are ignored.
  void record_initial_losses(std::span<const double> losses);
  void set_weights(std::span<const double> weights);

 private:
  BalanceOptions options_;
  std::vector<double> weights_;
  std::vector<double> initial_;
};

// gamma_x = (L_x / L0_x) / mean_y (L_y / L0_y). Throws for any L0_x <= 0.
std::vector<double> relative_ratio(std::span<const double> current, std::span<const double> initial);

struct BalanceReport {
  std::vector<double> gamma;
  std::vector<double> scale;   // G_x = lambda_x * |grad L_x|
  std::vector<double> target;  // mean(G) * gamma_x, held constant
  double balance_loss = 0.0;   // sum |G_x - target_x|
  bool updated = false;
};

// One balancing step. grad_norms[x] is |grad L_x| on the shared embeddings
// (unweighted), losses[x] the current L_x. The first call also records the
// initial losses. Weights stay unchanged when balancing is disabled or every
// gradient norm is zero.
BalanceReport balance_step(BalanceState& state, std::span<const double> grad_norms,
                           std::span<const double> losses);

}  // namespace concf
