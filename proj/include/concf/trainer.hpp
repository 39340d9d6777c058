#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "concf/balancing.hpp"
#include "concf/consensus.hpp"
#include "concf/dataset.hpp"
#include "concf/model.hpp"

namespace concf {

enum class TrainMode {
  ConCF,   // every head jointly, with consensus learning after warm-up
  Single,  // one head alone, no consensus machinery
};

struct TrainConfig {
  TrainMode mode = TrainMode::ConCF;
  Head single_head = Head::A;
  std::vector<Head> heads{kAllHeads.begin(), kAllHeads.end()};

  double alpha = 0.01;         // consensus-learning weight
  double temperature = 10.0;   // T
  std::size_t list_n = 50;     // N, top-N prefix of the consensus target
  int period = 20;             // p
  std::size_t queue_size = 5;  // |Q|
  std::size_t max_rank = 300;  // M
  std::size_t consensus_length = 0;  // L; 0 means 2N

  double learning_rate = 0.01;
  double weight_decay = 0.0;
  std::size_t batch_size = 1024;
  int dim = 64;
  int max_epochs = 500;
  int patience = 20;
  SharingLevel sharing = SharingLevel::EmbeddingOnly;

  bool balancing = true;
  double balance_lr = 0.025;
  double balance_sum = 1.0;  // S
  BalanceRule balance_rule = BalanceRule::LogSign;

  double margin = 1.0;        // head B hinge margin
  bool cf_e_columns = true;   // add the item-wise softmax term to head E
  std::size_t eval_n = 50;    // validation cutoff for model selection
  std::vector<std::uint64_t> seeds{1};
  unsigned threads = 1;

  std::size_t effective_length() const { return consensus_length ? consensus_length : 2 * list_n; }
  int warmup_epochs() const { return static_cast<int>(queue_size) * period; }
  std::vector<Head> active_heads() const;
};

// Throws std::invalid_argument naming the offending field.
void validate(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  std::vector<double> cf_loss;  // per head, summed over batches
  std::vector<double> cl_loss;  // per head, unweighted, 0 during warm-up
  std::vector<double> lambda;   // per head, at the end of the epoch
  double total_loss = 0.0;      // sum over batches of sum_x lambda_x L_x
  std::vector<double> val_recall;           // per head
  std::optional<double> consensus_recall;   // once the queue can be filled
  bool consensus_active = false;
  double seconds = 0.0;
};

struct BatchRecord {
  int epoch = 0;
  std::size_t batch = 0;
  std::vector<double> loss;    // L_x = L_CF-x + alpha * L_CL-x
  std::vector<double> lambda;  // weights used for this batch
  double total = 0.0;          // sum_x lambda_x L_x
};

struct TrainHistory {
  std::vector<Head> heads;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_metric = 0.0;
  std::vector<int> head_best_epoch;
  std::vector<double> head_best_metric;
  double seconds = 0.0;
};

struct TrainResult {
  ModelParams best_params;
  SnapshotQueue best_queue;   // queue as it stood before the best epoch's fresh snapshot
  SnapshotQueue final_queue;
  std::vector<ModelParams> head_best_params;  // per head, by own validation recall
  TrainHistory history;
  // State after the last epoch, enough to resume.
  ModelParams final_params;
  AdamState final_adam;
  std::vector<double> final_lambda;
};

// Continues a run from saved state. Balancing re-records its initial losses
// on the first resumed batch.
struct ResumeState {
  ModelParams params;
  AdamState adam;
  SnapshotQueue queue;
  std::vector<double> lambda;  // empty restarts from equal weights
  int next_epoch = 0;
};

struct TrainCallbacks {
  std::function<void(const EpochRecord&, const ModelParams&)> on_epoch;
  std::function<void(const BatchRecord&)> on_batch;
};

struct HeadLoss {
  double cf = 0.0;
  double cl = 0.0;  // unweighted; 0 without consensus
};

// One head on one batch: the CF loss and, when consensus is given, the
// consensus-learning loss. Gradients of cf + alpha * cl are accumulated into
// grads.
HeadLoss head_batch_loss(const ModelParams& params, Head head, const TrainBatch& batch,
                         const InteractionSet& train, const TrainConfig& config,
                         const Consensus* consensus, Gradients& grads);

TrainResult train(const TrainConfig& config, const SplitDataset& split, std::uint64_t seed,
                  const TrainCallbacks& callbacks = {}, const ResumeState* resume = nullptr);

// Top-n list of one head for one user, train positives excluded.
std::vector<int> infer_target(const ModelParams& params, Head head, const InteractionSet& train,
                              int user, std::size_t n);
// Same for every user.
std::vector<std::vector<int>> infer_target_all(const ModelParams& params, Head head,
                                               const InteractionSet& train, std::size_t n,
                                               unsigned threads = 1);

struct InferConsensusOptions {
  double temperature = 10.0;
  std::size_t length = 100;  // L before truncation to n
  bool rank_only = false;    // R-consensus instead of RC-consensus
};

// Pushes a fresh snapshot of params onto a copy of queue (evicting the
// oldest) and returns every user's consensus truncated to n. Throws
// std::logic_error when the queue cannot be filled.
std::vector<std::vector<int>> infer_consensus(const ModelParams& params, const SnapshotQueue& queue,
                                              const InteractionSet& train, std::size_t n,
                                              const InferConsensusOptions& options,
                                              unsigned threads = 1);
std::vector<int> infer_consensus(const ModelParams& params, const SnapshotQueue& queue,
                                 const InteractionSet& train, int user, std::size_t n,
                                 const InferConsensusOptions& options);

// key = value text, '#' comments. Every TrainConfig field has a key; unknown
// keys and bad values throw std::invalid_argument naming the key.
void apply_config_setting(TrainConfig& config, const std::string& key, const std::string& value);
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});
std::string config_to_text(const TrainConfig& config);

}  // namespace concf
