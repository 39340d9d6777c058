#include "concf/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <stdexcept>

namespace concf {

Head parse_head(std::string_view text) {
  if (text.size() == 1) {
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
    if (c >= 'A' && c <= 'E') return static_cast<Head>(c - 'A');
  }
  throw std::invalid_argument("unknown head '" + std::string(text) + "' (expected A-E)");
}

std::vector<Head> parse_head_list(std::string_view text) {
  std::vector<Head> heads;
  for (char c : text) {
    if (c == ',' || c == ' ') continue;
    const Head h = parse_head(std::string_view(&c, 1));
    if (std::find(heads.begin(), heads.end(), h) != heads.end())
      throw std::invalid_argument("head " + std::string(1, head_tag(h)) + " listed twice");
    heads.push_back(h);
  }
  if (heads.empty()) throw std::invalid_argument("empty head list");
  return heads;
}

std::string head_list_string(const std::vector<Head>& heads) {
  std::string s;
  for (Head h : heads) s += head_tag(h);
  return s;
}

SharingLevel parse_sharing_level(std::string_view text) {
  if (text == "full") return SharingLevel::Full;
  if (text == "embedding+1" || text == "embedding_plus_one_layer") return SharingLevel::EmbeddingPlusOneLayer;
  if (text == "embedding" || text == "embedding_only") return SharingLevel::EmbeddingOnly;
  if (text == "none" || text == "no_sharing") return SharingLevel::NoSharing;
  throw std::invalid_argument("unknown sharing level '" + std::string(text) +
                              "' (full | embedding+1 | embedding | none)");
}

std::string_view sharing_level_name(SharingLevel level) {
  switch (level) {
    case SharingLevel::Full: return "full";
    case SharingLevel::EmbeddingPlusOneLayer: return "embedding+1";
    case SharingLevel::EmbeddingOnly: return "embedding";
    case SharingLevel::NoSharing: return "none";
  }
  return "?";
}

namespace {

enum class InitKind { Embedding, Layer, Zero };

struct TensorSpec {
  std::string name;
  Eigen::Index rows, cols;
  InitKind kind;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Builds the tensor list and per-head slot table for a shape. Shared tensors
// are created once under a "shared/" prefix; private ones under "<tag>/".
std::pair<std::vector<TensorSpec>, std::vector<HeadSlots>> layout(const ModelShape& shape) {
  if (shape.dim <= 0 || shape.dim % 4 != 0)
    throw std::invalid_argument("embedding dimension must be a positive multiple of 4, got " +
                                std::to_string(shape.dim));
  if (shape.num_users <= 0 || shape.num_items <= 0)
    throw std::invalid_argument("model needs at least one user and one item");
  if (shape.heads.empty()) throw std::invalid_argument("model needs at least one head");

  const Eigen::Index d = shape.dim, d2 = shape.dim / 2, d4 = shape.dim / 4;
  const bool share_emb = shape.sharing != SharingLevel::NoSharing;
  const bool share_l1 =
      shape.sharing == SharingLevel::Full || shape.sharing == SharingLevel::EmbeddingPlusOneLayer;
  const bool share_l2 = shape.sharing == SharingLevel::Full;

  std::vector<TensorSpec> specs;
  auto slot_of = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                     InitKind kind) -> std::size_t {
    for (std::size_t k = 0; k < specs.size(); ++k)
      if (specs[k].name == name) return k;
    specs.push_back({name, rows, cols, kind});
    return specs.size() - 1;
  };

  std::vector<HeadSlots> slots;
  for (Head h : shape.heads) {
    const std::string own = std::string(1, head_tag(h)) + "/";
    HeadSlots hs;
    for (int side = 0; side < 2; ++side) {
      const std::string tower = side == 0 ? "user" : "item";
      const Eigen::Index entities = side == 0 ? shape.num_users : shape.num_items;
      TowerSlots& t = side == 0 ? hs.user : hs.item;
      const std::string emb_owner = share_emb ? "shared/" : own;
      const std::string l1_owner = share_l1 ? "shared/" : own;
      const std::string l2_owner = share_l2 ? "shared/" : own;
      t.emb = slot_of(emb_owner + tower + "_emb", entities, d, InitKind::Embedding);
      t.w1 = slot_of(l1_owner + tower + ".l1.w", d, d2, InitKind::Layer);
      t.b1 = slot_of(l1_owner + tower + ".l1.b", 1, d2, InitKind::Zero);
      t.w2 = slot_of(l2_owner + tower + ".l2.w", d2, d4, InitKind::Layer);
      t.b2 = slot_of(l2_owner + tower + ".l2.b", 1, d4, InitKind::Zero);
      t.wh = slot_of(own + tower + ".head.w", d4, d4, InitKind::Layer);
      t.bh = slot_of(own + tower + ".head.b", 1, d4, InitKind::Zero);
    }
    slots.push_back(hs);
  }
  return {std::move(specs), std::move(slots)};
}

}  // namespace

ModelParams ModelParams::zeros(const ModelShape& shape) {
  auto [specs, slots] = layout(shape);
  ModelParams p;
  p.shape_ = shape;
  p.slots_ = std::move(slots);
  p.tensors_.reserve(specs.size());
  for (const auto& s : specs) p.tensors_.push_back({s.name, Matrix::Zero(s.rows, s.cols)});
  return p;
}

ModelParams ModelParams::init(const ModelShape& shape, std::uint64_t seed) {
  auto [specs, slots] = layout(shape);
  ModelParams p;
  p.shape_ = shape;
  p.slots_ = std::move(slots);
  p.tensors_.reserve(specs.size());
  for (const auto& s : specs) {
    Matrix value = Matrix::Zero(s.rows, s.cols);
    std::mt19937_64 rng(splitmix64(seed ^ fnv1a(s.name)));
    if (s.kind == InitKind::Embedding) {
      std::normal_distribution<double> dist(0.0, 0.01);
      for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = dist(rng);
    } else if (s.kind == InitKind::Layer) {
      const double a = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
      std::uniform_real_distribution<double> dist(-a, a);
      for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = dist(rng);
    }
    p.tensors_.push_back({s.name, std::move(value)});
  }
  return p;
}

bool ModelParams::has_head(Head h) const {
  return std::find(shape_.heads.begin(), shape_.heads.end(), h) != shape_.heads.end();
}

std::size_t ModelParams::head_position(Head h) const {
  auto it = std::find(shape_.heads.begin(), shape_.heads.end(), h);
  if (it == shape_.heads.end())
    throw std::invalid_argument(std::string("model has no head ") + head_tag(h));
  return static_cast<std::size_t>(it - shape_.heads.begin());
}

const HeadSlots& ModelParams::slots(Head h) const { return slots_[head_position(h)]; }

std::size_t ModelParams::find_tensor(std::string_view name) const {
  for (std::size_t k = 0; k < tensors_.size(); ++k)
    if (tensors_[k].name == name) return k;
  throw std::invalid_argument("no tensor named '" + std::string(name) + "'");
}

Gradients::Gradients(const ModelParams& params)
    : grads_(params.tensors().size()), touched_(params.tensors().size(), 0) {
  shapes_.reserve(params.tensors().size());
  for (const auto& t : params.tensors()) shapes_.emplace_back(t.value.rows(), t.value.cols());
}

Matrix& Gradients::at(std::size_t slot) {
  if (!touched_[slot]) {
    grads_[slot] = Matrix::Zero(shapes_[slot].first, shapes_[slot].second);
    touched_[slot] = 1;
  }
  return grads_[slot];
}

void Gradients::add_scaled(const Gradients& other, double scale) {
  for (std::size_t k = 0; k < other.grads_.size(); ++k) {
    if (!other.touched_[k]) continue;
    Matrix& g = at(k);
    g.noalias() += scale * other.grads_[k];
  }
}

double Gradients::squared_norm(std::span<const std::size_t> slots) const {
  double s = 0.0;
  for (std::size_t k : slots)
    if (touched_[k]) s += grads_[k].squaredNorm();
  return s;
}

std::optional<std::size_t> Gradients::first_non_finite() const {
  for (std::size_t k = 0; k < grads_.size(); ++k)
    if (touched_[k] && !grads_[k].allFinite()) return k;
  return std::nullopt;
}

namespace {

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

std::vector<int> unique_sorted(std::span<const int> ids, int limit, const char* what) {
  std::vector<int> out(ids.begin(), ids.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (!out.empty() && (out.front() < 0 || out.back() >= limit))
    throw std::out_of_range(std::string(what) + " index out of range");
  return out;
}

void encode_tower(const ModelParams& params, const TowerSlots& s, bool project,
                  HeadForward::Tower& t) {
  const auto& T = params.tensors();
  const Matrix& emb = T[s.emb].value;
  t.emb.resize(static_cast<Eigen::Index>(t.ids.size()), emb.cols());
  for (std::size_t r = 0; r < t.ids.size(); ++r)
    t.emb.row(static_cast<Eigen::Index>(r)) = emb.row(t.ids[r]);
  t.h1 = t.emb * T[s.w1].value;
  t.h1.rowwise() += T[s.b1].value.row(0);
  t.a1 = t.h1.cwiseMax(0.0);
  t.h2 = t.a1 * T[s.w2].value;
  t.h2.rowwise() += T[s.b2].value.row(0);
  t.a2 = t.h2.cwiseMax(0.0);
  t.z = t.a2 * T[s.wh].value;
  t.z.rowwise() += T[s.bh].value.row(0);
  t.norm = t.z.rowwise().norm();
  t.out = t.z;
  if (project) {
    for (Eigen::Index r = 0; r < t.out.rows(); ++r)
      if (t.norm(r) > 1.0) t.out.row(r) /= t.norm(r);
  }
  t.grad = Matrix::Zero(t.out.rows(), t.out.cols());
}

void backward_tower(const ModelParams& params, const TowerSlots& s, bool project,
                    const HeadForward::Tower& t, Gradients& grads) {
  if (t.ids.empty()) return;
  const auto& T = params.tensors();
  Matrix dz = t.grad;
  if (project) {
    // out = z / |z| outside the unit ball: d out/dz = (I - out out^T) / |z|
    for (Eigen::Index r = 0; r < dz.rows(); ++r) {
      if (t.norm(r) > 1.0) {
        const double along = t.out.row(r).dot(dz.row(r));
        dz.row(r) = (dz.row(r) - along * t.out.row(r)) / t.norm(r);
      }
    }
  }
  grads.at(s.wh).noalias() += t.a2.transpose() * dz;
  grads.at(s.bh).row(0) += dz.colwise().sum();
  Matrix dh2 = (dz * T[s.wh].value.transpose()).cwiseProduct(
      (t.h2.array() > 0.0).cast<double>().matrix());
  grads.at(s.w2).noalias() += t.a1.transpose() * dh2;
  grads.at(s.b2).row(0) += dh2.colwise().sum();
  Matrix dh1 = (dh2 * T[s.w2].value.transpose())
                   .cwiseProduct((t.h1.array() > 0.0).cast<double>().matrix());
  grads.at(s.w1).noalias() += t.emb.transpose() * dh1;
  grads.at(s.b1).row(0) += dh1.colwise().sum();
  const Matrix de = dh1 * T[s.w1].value.transpose();
  Matrix& gemb = grads.at(s.emb);
  for (std::size_t r = 0; r < t.ids.size(); ++r)
    gemb.row(t.ids[r]) += de.row(static_cast<Eigen::Index>(r));
}

}  // namespace

HeadForward forward(const ModelParams& params, Head head, std::span<const int> users,
                    std::span<const int> items) {
  const HeadSlots& slots = params.slots(head);
  HeadForward f;
  f.head_ = head;
  f.params_ = &params;
  f.version_ = params.version();
  const bool project = head == Head::B;
  const int nu = params.shape().num_users, ni = params.shape().num_items;

  f.user_.ids = unique_sorted(users, nu, "user");
  f.user_.row_of.assign(static_cast<std::size_t>(nu), -1);
  for (std::size_t r = 0; r < f.user_.ids.size(); ++r)
    f.user_.row_of[static_cast<std::size_t>(f.user_.ids[r])] = static_cast<int>(r);
  encode_tower(params, slots.user, project, f.user_);

  f.item_.ids = unique_sorted(items, ni, "item");
  f.item_.row_of.assign(static_cast<std::size_t>(ni), -1);
  for (std::size_t r = 0; r < f.item_.ids.size(); ++r)
    f.item_.row_of[static_cast<std::size_t>(f.item_.ids[r])] = static_cast<int>(r);
  encode_tower(params, slots.item, project, f.item_);
  return f;
}

int HeadForward::user_row(int user) const {
  if (user < 0 || static_cast<std::size_t>(user) >= user_.row_of.size() ||
      user_.row_of[static_cast<std::size_t>(user)] < 0)
    throw std::out_of_range("user " + std::to_string(user) + " not encoded in this pass");
  return user_.row_of[static_cast<std::size_t>(user)];
}

int HeadForward::item_row(int item) const {
  if (item < 0 || static_cast<std::size_t>(item) >= item_.row_of.size() ||
      item_.row_of[static_cast<std::size_t>(item)] < 0)
    throw std::out_of_range("item " + std::to_string(item) + " not encoded in this pass");
  return item_.row_of[static_cast<std::size_t>(item)];
}

double HeadForward::raw(int ur, int ir) const {
  if (head_ == Head::B) return -(user_.out.row(ur) - item_.out.row(ir)).norm();
  return user_.out.row(ur).dot(item_.out.row(ir));
}

double HeadForward::score(int ur, int ir) const {
  const double r = raw(ur, ir);
  return head_ == Head::C ? logistic(r) : r;
}

void HeadForward::add_raw_grad(int ur, int ir, double g) {
  if (g == 0.0) return;
  if (head_ == Head::B) {
    const RowVector diff = user_.out.row(ur) - item_.out.row(ir);
    const double dist = diff.norm();
    if (dist == 0.0) return;  // gradient of the distance at 0 taken as 0
    user_.grad.row(ur) -= (g / dist) * diff;
    item_.grad.row(ir) += (g / dist) * diff;
    return;
  }
  user_.grad.row(ur) += g * item_.out.row(ir);
  item_.grad.row(ir) += g * user_.out.row(ur);
}

void HeadForward::add_score_grad(int ur, int ir, double g) {
  if (head_ == Head::C) {
    const double s = logistic(raw(ur, ir));
    g *= s * (1.0 - s);
  }
  add_raw_grad(ur, ir, g);
}

namespace {
void require_dot(Head h) {
  if (h == Head::B) throw std::logic_error("dense logits are defined for dot-product heads only");
}
}  // namespace

Matrix HeadForward::user_logits(std::span<const int> rows) const {
  require_dot(head_);
  Matrix sel(static_cast<Eigen::Index>(rows.size()), user_.out.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    sel.row(static_cast<Eigen::Index>(k)) = user_.out.row(rows[k]);
  return sel * item_.out.transpose();
}

void HeadForward::add_user_logits_grad(std::span<const int> rows, const Matrix& g) {
  require_dot(head_);
  Matrix sel(static_cast<Eigen::Index>(rows.size()), user_.out.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    sel.row(static_cast<Eigen::Index>(k)) = user_.out.row(rows[k]);
  const Matrix du = g * item_.out;
  for (std::size_t k = 0; k < rows.size(); ++k)
    user_.grad.row(rows[k]) += du.row(static_cast<Eigen::Index>(k));
  item_.grad.noalias() += g.transpose() * sel;
}

Matrix HeadForward::item_logits(std::span<const int> rows) const {
  require_dot(head_);
  Matrix sel(static_cast<Eigen::Index>(rows.size()), item_.out.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    sel.row(static_cast<Eigen::Index>(k)) = item_.out.row(rows[k]);
  return sel * user_.out.transpose();
}

void HeadForward::add_item_logits_grad(std::span<const int> rows, const Matrix& g) {
  require_dot(head_);
  Matrix sel(static_cast<Eigen::Index>(rows.size()), item_.out.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    sel.row(static_cast<Eigen::Index>(k)) = item_.out.row(rows[k]);
  const Matrix di = g * user_.out;
  for (std::size_t k = 0; k < rows.size(); ++k)
    item_.grad.row(rows[k]) += di.row(static_cast<Eigen::Index>(k));
  user_.grad.noalias() += g.transpose() * sel;
}

void HeadForward::backward(const ModelParams& params, Gradients& grads) const {
  if (&params != params_ || params.version() != version_)
    throw std::logic_error("stale activation cache: parameters changed since the forward pass");
  const HeadSlots& slots = params.slots(head_);
  const bool project = head_ == Head::B;
  backward_tower(params, slots.user, project, user_, grads);
  backward_tower(params, slots.item, project, item_, grads);
}

EncodedHead::EncodedHead(const ModelParams& params, Head head) : head_(head) {
  std::vector<int> users(static_cast<std::size_t>(params.shape().num_users));
  std::vector<int> items(static_cast<std::size_t>(params.shape().num_items));
  for (std::size_t k = 0; k < users.size(); ++k) users[k] = static_cast<int>(k);
  for (std::size_t k = 0; k < items.size(); ++k) items[k] = static_cast<int>(k);
  HeadForward f = forward(params, head, users, items);
  users_ = f.user_repr();
  items_ = f.item_repr();
}

double EncodedHead::score(int user, int item) const {
  if (head_ == Head::B) return -(users_.row(user) - items_.row(item)).norm();
  const double d = users_.row(user).dot(items_.row(item));
  return head_ == Head::C ? logistic(d) : d;
}

void EncodedHead::score_row(int user, std::span<double> out) const {
  const auto n = items_.rows();
  if (static_cast<Eigen::Index>(out.size()) != n) throw std::invalid_argument("score_row: bad output size");
  Eigen::Map<Vector> dst(out.data(), n);
  if (head_ == Head::B) {
    const RowVector u = users_.row(user);
    for (Eigen::Index i = 0; i < n; ++i) dst(i) = -(u - items_.row(i)).norm();
    return;
  }
  dst.noalias() = items_ * users_.row(user).transpose();
  if (head_ == Head::C)
    for (Eigen::Index i = 0; i < n; ++i) dst(i) = logistic(dst(i));
}

double score(const ModelParams& params, Head head, int user, int item) {
  const int u[1] = {user};
  const int i[1] = {item};
  const HeadForward f = forward(params, head, u, i);
  return f.score(0, 0);
}

Matrix score_batch(const ModelParams& params, Head head, std::span<const int> users,
                   std::optional<std::span<const int>> items) {
  std::vector<int> all;
  if (!items) {
    all.resize(static_cast<std::size_t>(params.shape().num_items));
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  }
  const std::span<const int> cols = items ? *items : std::span<const int>(all);
  Matrix out(static_cast<Eigen::Index>(users.size()), static_cast<Eigen::Index>(cols.size()));
  if (users.empty() || cols.empty()) return out;
  const HeadForward f = forward(params, head, users, cols);
  for (std::size_t r = 0; r < users.size(); ++r) {
    const int ur = f.user_row(users[r]);
    for (std::size_t c = 0; c < cols.size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f.score(ur, f.item_row(cols[c]));
  }
  return out;
}

AdamState make_adam_state(const ModelParams& params) {
  AdamState s;
  for (const auto& t : params.tensors()) {
    s.m.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    s.v.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  }
  return s;
}

void apply_adam(ModelParams& params, const Gradients& grads, AdamState& state,
                const AdamConfig& config, std::string_view context) {
  if (state.m.size() != params.tensors().size()) state = make_adam_state(params);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads.touched(k) && !grads.value(k).allFinite()) {
      throw std::runtime_error("non-finite gradient for tensor '" + params.tensors()[k].name +
                               "'" + (context.empty() ? "" : " (" + std::string(context) + ")"));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  auto& tensors = params.mutable_tensors();
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!grads.touched(k)) continue;
    Matrix& w = tensors[k].value;
    auto g = grads.value(k).array();
    auto m = state.m[k].array();
    auto v = state.v[k].array();
    if (config.weight_decay != 0.0) {
      const Matrix decayed = grads.value(k) + config.weight_decay * w;
      m = config.beta1 * m + (1.0 - config.beta1) * decayed.array();
      v = config.beta2 * v + (1.0 - config.beta2) * decayed.array().square();
    } else {
      m = config.beta1 * m + (1.0 - config.beta1) * g;
      v = config.beta2 * v + (1.0 - config.beta2) * g.square();
    }
    w.array() -= config.learning_rate * (m / c1) / ((v / c2).sqrt() + config.epsilon);
  }
}

}  // namespace concf
