#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "concf/dataset.hpp"
#include "concf/model.hpp"
#include "concf/types.hpp"

namespace concf {

// Top-max_len items by descending score, ties by ascending item index, with
// the sorted `exclude` list removed first. Throws std::domain_error on a
// non-finite score.
std::vector<int> rank_items(std::span<const double> scores, std::span<const int> exclude,
                            std::size_t max_len);

// Position decay f(k) = exp(-k / temperature). Throws for temperature <= 0.
double decay(double k, double temperature);

// Truncated ranking of every head for every user at one epoch. An item
// outside a top-M list has rank M.
struct RankSnapshot {
  int epoch = 0;
  std::size_t max_len = 0;  // M
  std::vector<Head> heads;
  std::vector<std::vector<std::vector<int>>> lists;  // [head position][user] -> items

  std::size_t num_users() const { return lists.empty() ? 0 : lists.front().size(); }
  std::size_t head_position(Head h) const;
  // Linear scan of the user's list; M when absent.
  std::size_t rank(std::size_t head_pos, int user, int item) const;
};

// Per-head top-M lists of the current parameters, excluding train positives.
RankSnapshot take_snapshot(const ModelParams& params, const InteractionSet& train, int epoch,
                           std::size_t max_len, unsigned threads = 1);

// FIFO of the last `capacity` snapshots taken every `period` epochs.
class SnapshotQueue {
 public:
  SnapshotQueue() = default;
  SnapshotQueue(std::size_t capacity, int period);

  std::size_t capacity() const { return capacity_; }
  int period() const { return period_; }
  std::size_t size() const { return snapshots_.size(); }
  bool full() const { return snapshots_.size() == capacity_; }
  bool empty() const { return snapshots_.empty(); }
  const RankSnapshot& latest() const;
  const std::deque<RankSnapshot>& snapshots() const { return snapshots_; }

  // Throws std::invalid_argument unless snapshot.epoch is a multiple of the
  // period and directly follows the latest stored epoch.
  void push(RankSnapshot snapshot);
  // Appends without the epoch checks, evicting the oldest when full.
  void push_unchecked(RankSnapshot snapshot);

 private:
  std::size_t capacity_ = 0;
  int period_ = 1;
  std::deque<RankSnapshot> snapshots_;
};

// Rank importance: decay of the item's rank in the latest snapshot.
double rank_importance(const RankSnapshot& snapshot, std::size_t head_pos, int user, int item,
                       double temperature);

// Consistency: decay of the population standard deviation of the item's ranks
// across every queued snapshot. Needs at least two snapshots.
double consistency(const SnapshotQueue& queue, std::size_t head_pos, int user, int item,
                   double temperature);

enum class ConsensusMode {
  RankAndConsistency,  // I = mean_x (R + C)
  RankOnly,            // I = mean_x R
};

struct ConsensusOptions {
  double temperature = 10.0;
  std::size_t length = 100;  // L
  ConsensusMode mode = ConsensusMode::RankAndConsistency;
  // Head positions to aggregate; empty means every head in the snapshots.
  std::vector<std::size_t> head_positions;
};

struct ConsensusList {
  std::vector<int> items;
  std::vector<double> importance;
};

struct Consensus {
  int epoch = 0;
  std::vector<ConsensusList> users;
};

// Per user: candidates are the union of the latest top-M lists across heads,
// reranked by importance (ties by ascending item index), truncated to L.
// Throws std::logic_error unless the queue is full.
Consensus generate_consensus(const SnapshotQueue& queue, const ConsensusOptions& options,
                             unsigned threads = 1);

// Takes a snapshot at `epoch` and pushes it; returns the regenerated
// consensus once the queue is full. Throws std::invalid_argument when epoch
// is not a multiple of the queue period.
std::optional<Consensus> push_snapshot(SnapshotQueue& queue, const ModelParams& params,
                                       const InteractionSet& train, int epoch,
                                       std::size_t max_len, const ConsensusOptions& options,
                                       unsigned threads = 1);

// Text dump of a queue (header, capacity, period, then every snapshot's
// per-head per-user lists).
void write_queue(const std::filesystem::path& path, const SnapshotQueue& queue);
SnapshotQueue read_queue(const std::filesystem::path& path);

// CSV of per-user consensus lists: epoch,user,position,item,importance.
void write_consensus_csv(const std::filesystem::path& path, const Consensus& consensus);

}  // namespace concf
