#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "concf/types.hpp"

namespace concf {

// Which parts of the two-tower encoder the heads share. Head maps are always
// private to their head.
enum class SharingLevel : std::uint8_t {
  Full = 0,                   // embeddings + both encoder layers
  EmbeddingPlusOneLayer = 1,  // embeddings + first encoder layer
  EmbeddingOnly = 2,          // embeddings
  NoSharing = 3,              // nothing; every head is a separate model
};

SharingLevel parse_sharing_level(std::string_view text);
std::string_view sharing_level_name(SharingLevel level);

struct ModelShape {
  int num_users = 0;
  int num_items = 0;
  int dim = 64;
  SharingLevel sharing = SharingLevel::EmbeddingOnly;
  std::vector<Head> heads{kAllHeads.begin(), kAllHeads.end()};
};

struct Tensor {
  std::string name;
  Matrix value;
};

// Tensor slots of one tower (user or item side) as seen by one head.
// Layers are stored (in x out) and applied as x * W + b.
struct TowerSlots {
  std::size_t emb = 0;
  std::size_t w1 = 0, b1 = 0;  // d -> d/2, relu
  std::size_t w2 = 0, b2 = 0;  // d/2 -> d/4, relu
  std::size_t wh = 0, bh = 0;  // head map d/4 -> d/4
};

struct HeadSlots {
  TowerSlots user;
  TowerSlots item;
};

class ModelParams {
 public:
  ModelParams() = default;

  // Layers ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)), biases 0,
  // embeddings ~ N(0, 0.01^2). Every tensor draws from its own stream keyed by
  // (seed, tensor name), so a head's private tensors are identical whether the
  // head is trained alone or alongside others.
  static ModelParams init(const ModelShape& shape, std::uint64_t seed);

  // Zero-filled tensors with the layout implied by shape.
  static ModelParams zeros(const ModelShape& shape);

  const ModelShape& shape() const { return shape_; }
  std::span<const Head> heads() const { return shape_.heads; }
  bool has_head(Head h) const;
  std::size_t head_position(Head h) const;
  const HeadSlots& slots(Head h) const;

  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::vector<Tensor>& mutable_tensors() {
    ++version_;
    return tensors_;
  }
  std::size_t find_tensor(std::string_view name) const;

  // Bumped on every mutable access; forward caches compare against it.
  std::uint64_t version() const { return version_; }

 private:
  ModelShape shape_;
  std::vector<Tensor> tensors_;
  std::vector<HeadSlots> slots_;  // indexed by head position in shape_.heads
  std::uint64_t version_ = 0;
};

// Per-tensor gradient buffers; a tensor's buffer exists only once some
// scored pair on its path wrote to it.
class Gradients {
 public:
  explicit Gradients(const ModelParams& params);

  Matrix& at(std::size_t slot);
  bool touched(std::size_t slot) const { return touched_[slot] != 0; }
  const Matrix& value(std::size_t slot) const { return grads_[slot]; }
  std::size_t size() const { return grads_.size(); }

  // this += scale * other, over other's touched tensors.
  void add_scaled(const Gradients& other, double scale);
  double squared_norm(std::span<const std::size_t> slots) const;
  // Index of the first tensor holding a non-finite value, if any.
  std::optional<std::size_t> first_non_finite() const;

 private:
  std::vector<Matrix> grads_;
  std::vector<char> touched_;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes_;
};

// Forward activations of one head over a chosen set of users and items.
// Scores of any (encoded user, encoded item) pair can then be read, loss
// gradients pushed back pair by pair (or as dense logit blocks), and
// backward() turns them into parameter gradients.
class HeadForward {
 public:
  struct Tower {
    std::vector<int> ids;     // sorted, unique
    std::vector<int> row_of;  // entity -> row, -1 when not encoded
    Matrix emb, h1, a1, h2, a2, z, out;
    Vector norm;  // |z| per row (used by the unit-ball projection)
    Matrix grad;  // accumulated dL/d(out)
  };

  Head head() const { return head_; }
  int user_row(int user) const;
  int item_row(int item) const;
  std::span<const int> users() const { return user_.ids; }
  std::span<const int> items() const { return item_.ids; }
  const Matrix& user_repr() const { return user_.out; }
  const Matrix& item_repr() const { return item_.out; }

  // Interaction value before the head's output nonlinearity: dot product for
  // A, C, D, E and negative distance for B. score() equals raw() except for C,
  // where it is the logistic of raw().
  double raw(int user_row, int item_row) const;
  double score(int user_row, int item_row) const;

  void add_raw_grad(int user_row, int item_row, double g);
  void add_score_grad(int user_row, int item_row, double g);

  // Dense logits for dot-product heads: selected user rows x every encoded
  // item, and selected item rows x every encoded user.
  Matrix user_logits(std::span<const int> user_rows) const;
  void add_user_logits_grad(std::span<const int> user_rows, const Matrix& g);
  Matrix item_logits(std::span<const int> item_rows) const;
  void add_item_logits_grad(std::span<const int> item_rows, const Matrix& g);

  // Accumulates (sums) parameter gradients into grads. Throws
  // std::logic_error if params changed since the forward pass.
  void backward(const ModelParams& params, Gradients& grads) const;

 private:
  friend HeadForward forward(const ModelParams&, Head, std::span<const int>,
                             std::span<const int>);
  Head head_ = Head::A;
  const ModelParams* params_ = nullptr;
  std::uint64_t version_ = 0;
  Tower user_;
  Tower item_;
};

// Encodes the given users and items (duplicates allowed) for one head.
HeadForward forward(const ModelParams& params, Head head, std::span<const int> users,
                    std::span<const int> items);

// Final (post-head, projected for B) representations of every user and item,
// for read-only scoring.
class EncodedHead {
 public:
  EncodedHead(const ModelParams& params, Head head);

  Head head() const { return head_; }
  int num_items() const { return static_cast<int>(items_.rows()); }
  double score(int user, int item) const;
  // Scores of one user against every item.
  void score_row(int user, std::span<double> out) const;

 private:
  Head head_;
  Matrix users_;
  Matrix items_;
  Vector item_sq_norm_;
};

double score(const ModelParams& params, Head head, int user, int item);

// users x items score matrix; items = nullopt means every item.
Matrix score_batch(const ModelParams& params, Head head, std::span<const int> users,
                   std::optional<std::span<const int>> items);

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // L2 prior coefficient, off by default
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t step = 0;
};

AdamState make_adam_state(const ModelParams& params);

// One Adam step over the tensors grads touched. Throws std::runtime_error
// naming the tensor and context on a non-finite gradient.
void apply_adam(ModelParams& params, const Gradients& grads, AdamState& state,
                const AdamConfig& config, std::string_view context = {});

// Binary checkpoint: shape, heads, every tensor, optional Adam state.
// Round-trips bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const AdamState* adam = nullptr);

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> adam;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace concf
