#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace concf {

struct Interaction {
  int user = 0;
  int item = 0;
  auto operator<=>(const Interaction&) const = default;
};

// Sparse binary user-item matrix. Pairs are kept sorted by (user, item) and
// unique; both row (user -> items) and column (item -> users) adjacency are
// available as sorted spans. Immutable after construction.
class InteractionSet {
 public:
  InteractionSet() = default;
  // Duplicates are collapsed. Throws std::out_of_range for indices outside
  // [0, num_users) x [0, num_items).
  InteractionSet(int num_users, int num_items, std::vector<Interaction> pairs);

  int num_users() const { return num_users_; }
  int num_items() const { return num_items_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }

  std::span<const Interaction> pairs() const { return pairs_; }
  std::span<const int> items_of(int user) const;
  std::span<const int> users_of(int item) const;
  bool contains(int user, int item) const;

  double density() const;

 private:
  int num_users_ = 0;
  int num_items_ = 0;
  std::vector<Interaction> pairs_;
  std::vector<int> row_items_;
  std::vector<std::size_t> row_offsets_;
  std::vector<int> col_users_;
  std::vector<std::size_t> col_offsets_;
};

// Dense re-indexing of raw ids in first-seen order.
class IdMap {
 public:
  int intern(const std::string& raw);
  int find(const std::string& raw) const;  // -1 when absent
  const std::string& raw(int index) const { return raw_.at(static_cast<std::size_t>(index)); }
  int size() const { return static_cast<int>(raw_.size()); }
  const std::vector<std::string>& raw_ids() const { return raw_; }

 private:
  std::vector<std::string> raw_;
  std::unordered_map<std::string, int> index_;
};

enum class Delimiter { Auto, Tab, Comma, Whitespace };

struct LoadedInteractions {
  InteractionSet interactions;
  IdMap users;
  IdMap items;
};

// Reads "user<sep>item[<sep>extra...]" lines. Extra columns (ratings,
// timestamps) are ignored. Errors: unreadable file, malformed line (message
// carries the 1-based line number), empty dataset.
LoadedInteractions load_interactions(const std::filesystem::path& path,
                                     Delimiter delimiter = Delimiter::Auto);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitOptions {
  SplitRatios ratios;
  // Users with fewer interactions keep everything in train.
  int min_interactions = 10;
  // Pairs of items with fewer interactions than this are forced into train.
  // 0 disables the item rule.
  int min_item_interactions = 0;
};

struct SplitDataset {
  InteractionSet train;
  InteractionSet val;
  InteractionSet test;
  std::uint64_t split_seed = 0;
};

// Per-user random 60/20/20 split: floor(ratio * n) to val and test, the
// remainder to train. Items that end up with no train occurrence have their
// val/test pairs relocated to train.
SplitDataset split_user_history(const InteractionSet& data, const SplitOptions& options,
                                std::uint64_t seed);

struct Triple {
  int user = 0;
  int pos = 0;
  int neg = 0;
};

struct TrainBatch {
  std::vector<Triple> triples;
};

// Uniform negative sampling over a shuffled pass of the train pairs.
class BatchSampler {
 public:
  // Throws std::invalid_argument when train is empty or some user has
  // interacted with every item (no negative exists).
  BatchSampler(const InteractionSet& train, std::size_t batch_size, std::uint64_t seed);

  std::vector<TrainBatch> next_epoch();
  int draw_negative(int user);

  std::size_t batch_size() const { return batch_size_; }

 private:
  const InteractionSet* train_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<Interaction> order_;
};

struct SplitManifest {
  SplitDataset split;
  IdMap users;
  IdMap items;
};

// Text manifest: header, seed, id maps, then the three pair lists. The
// layout is documented in the README.
void write_split_manifest(const std::filesystem::path& path, const SplitManifest& manifest);
SplitManifest read_split_manifest(const std::filesystem::path& path);

// "5219 users, 25181 items, 125580 interactions, 0.096% density"
std::string describe(const InteractionSet& data);

}  // namespace concf
