#include "concf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace concf {

InteractionSet::InteractionSet(int num_users, int num_items, std::vector<Interaction> pairs)
    : num_users_(num_users), num_items_(num_items), pairs_(std::move(pairs)) {
  if (num_users < 0 || num_items < 0) throw std::invalid_argument("negative matrix shape");
  for (const auto& p : pairs_) {
    if (p.user < 0 || p.user >= num_users || p.item < 0 || p.item >= num_items) {
      throw std::out_of_range("interaction (" + std::to_string(p.user) + "," +
                              std::to_string(p.item) + ") outside " +
                              std::to_string(num_users) + "x" + std::to_string(num_items));
    }
  }
  std::sort(pairs_.begin(), pairs_.end());
  pairs_.erase(std::unique(pairs_.begin(), pairs_.end()), pairs_.end());

  row_offsets_.assign(static_cast<std::size_t>(num_users) + 1, 0);
  col_offsets_.assign(static_cast<std::size_t>(num_items) + 1, 0);
  for (const auto& p : pairs_) {
    ++row_offsets_[static_cast<std::size_t>(p.user) + 1];
    ++col_offsets_[static_cast<std::size_t>(p.item) + 1];
  }
  std::partial_sum(row_offsets_.begin(), row_offsets_.end(), row_offsets_.begin());
  std::partial_sum(col_offsets_.begin(), col_offsets_.end(), col_offsets_.begin());

  row_items_.resize(pairs_.size());
  col_users_.resize(pairs_.size());
  std::vector<std::size_t> fill(col_offsets_.begin(), col_offsets_.end() - 1);
  for (std::size_t k = 0; k < pairs_.size(); ++k) {
    row_items_[k] = pairs_[k].item;
    // pairs are user-major, so each column receives users in ascending order
    col_users_[fill[static_cast<std::size_t>(pairs_[k].item)]++] = pairs_[k].user;
  }
}

std::span<const int> InteractionSet::items_of(int user) const {
  if (user < 0 || user >= num_users_) throw std::out_of_range("user index out of range");
  const auto u = static_cast<std::size_t>(user);
  return {row_items_.data() + row_offsets_[u], row_offsets_[u + 1] - row_offsets_[u]};
}

std::span<const int> InteractionSet::users_of(int item) const {
  if (item < 0 || item >= num_items_) throw std::out_of_range("item index out of range");
  const auto i = static_cast<std::size_t>(item);
  return {col_users_.data() + col_offsets_[i], col_offsets_[i + 1] - col_offsets_[i]};
}

bool InteractionSet::contains(int user, int item) const {
  const auto items = items_of(user);
  return std::binary_search(items.begin(), items.end(), item);
}

double InteractionSet::density() const {
  if (num_users_ == 0 || num_items_ == 0) return 0.0;
  return static_cast<double>(pairs_.size()) /
         (static_cast<double>(num_users_) * static_cast<double>(num_items_));
}

int IdMap::intern(const std::string& raw) {
  auto [it, inserted] = index_.try_emplace(raw, static_cast<int>(raw_.size()));
  if (inserted) raw_.push_back(raw);
  return it->second;
}

int IdMap::find(const std::string& raw) const {
  auto it = index_.find(raw);
  return it == index_.end() ? -1 : it->second;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line, Delimiter delim) {
  if (delim == Delimiter::Auto) {
    if (line.find('\t') != std::string_view::npos)
      delim = Delimiter::Tab;
    else if (line.find(',') != std::string_view::npos)
      delim = Delimiter::Comma;
    else
      delim = Delimiter::Whitespace;
  }
  std::vector<std::string_view> fields;
  if (delim == Delimiter::Whitespace) {
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
      if (pos >= line.size()) break;
      std::size_t end = pos;
      while (end < line.size() && line[end] != ' ' && line[end] != '\t') ++end;
      fields.push_back(line.substr(pos, end - pos));
      pos = end;
    }
    return fields;
  }
  const char sep = delim == Delimiter::Tab ? '\t' : ',';
  std::size_t pos = 0;
  while (true) {
    const std::size_t end = line.find(sep, pos);
    fields.push_back(trim(line.substr(pos, end == std::string_view::npos ? end : end - pos)));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return fields;
}

}  // namespace

LoadedInteractions load_interactions(const std::filesystem::path& path, Delimiter delimiter) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read interaction file: " + path.string());

  LoadedInteractions out;
  std::vector<Interaction> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_fields(view, delimiter);
    if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": malformed line, expected user and item columns");
    }
    const int u = out.users.intern(std::string(fields[0]));
    const int i = out.items.intern(std::string(fields[1]));
    pairs.push_back({u, i});
  }
  if (pairs.empty()) throw std::runtime_error("empty dataset: " + path.string());
  out.interactions = InteractionSet(out.users.size(), out.items.size(), std::move(pairs));
  return out;
}

SplitDataset split_user_history(const InteractionSet& data, const SplitOptions& options,
                                std::uint64_t seed) {
  const auto& r = options.ratios;
  if (r.train < 0 || r.val < 0 || r.test < 0 ||
      std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }

  std::vector<std::size_t> item_count(static_cast<std::size_t>(data.num_items()), 0);
  for (const auto& p : data.pairs()) ++item_count[static_cast<std::size_t>(p.item)];

  std::mt19937_64 rng(seed);
  std::vector<Interaction> train, val, test;
  std::vector<int> eligible;
  for (int u = 0; u < data.num_users(); ++u) {
    const auto items = data.items_of(u);
    if (items.empty()) continue;
    if (static_cast<int>(items.size()) < options.min_interactions) {
      for (int i : items) train.push_back({u, i});
      continue;
    }
    eligible.clear();
    for (int i : items) {
      if (options.min_item_interactions > 0 &&
          item_count[static_cast<std::size_t>(i)] <
              static_cast<std::size_t>(options.min_item_interactions)) {
        train.push_back({u, i});
      } else {
        eligible.push_back(i);
      }
    }
    std::shuffle(eligible.begin(), eligible.end(), rng);
    const auto n = static_cast<double>(eligible.size());
    // the epsilon keeps products like 0.2 * 15 from flooring one short
    const auto n_val = static_cast<std::size_t>(std::floor(r.val * n + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(r.test * n + 1e-9));
    std::size_t k = 0;
    for (; k < n_val; ++k) val.push_back({u, eligible[k]});
    for (; k < n_val + n_test; ++k) test.push_back({u, eligible[k]});
    for (; k < eligible.size(); ++k) train.push_back({u, eligible[k]});
  }

  std::vector<char> in_train(static_cast<std::size_t>(data.num_items()), 0);
  for (const auto& p : train) in_train[static_cast<std::size_t>(p.item)] = 1;
  auto relocate = [&](std::vector<Interaction>& part) {
    std::erase_if(part, [&](const Interaction& p) {
      if (in_train[static_cast<std::size_t>(p.item)]) return false;
      train.push_back(p);
      return true;
    });
  };
  relocate(val);
  relocate(test);

  SplitDataset out;
  out.train = InteractionSet(data.num_users(), data.num_items(), std::move(train));
  out.val = InteractionSet(data.num_users(), data.num_items(), std::move(val));
  out.test = InteractionSet(data.num_users(), data.num_items(), std::move(test));
  out.split_seed = seed;
  return out;
}

BatchSampler::BatchSampler(const InteractionSet& train, std::size_t batch_size,
                           std::uint64_t seed)
    : train_(&train), batch_size_(batch_size), rng_(seed),
      order_(train.pairs().begin(), train.pairs().end()) {
  if (train.empty()) throw std::invalid_argument("cannot sample batches from an empty train set");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  for (int u = 0; u < train.num_users(); ++u) {
    if (static_cast<int>(train.items_of(u).size()) == train.num_items()) {
      throw std::invalid_argument("user " + std::to_string(u) +
                                  " has interacted with every item; no negative exists");
    }
  }
}

int BatchSampler::draw_negative(int user) {
  const auto items = train_->items_of(user);
  std::uniform_int_distribution<int> pick(0, train_->num_items() - 1);
  for (int attempt = 0; attempt <= 100; ++attempt) {
    const int j = pick(rng_);
    if (!std::binary_search(items.begin(), items.end(), j)) return j;
  }
  // dense user: draw directly from the explicit complement
  const auto free = static_cast<int>(train_->num_items() - static_cast<int>(items.size()));
  int k = std::uniform_int_distribution<int>(0, free - 1)(rng_);
  int candidate = 0;
  for (int i : items) {
    if (candidate + k < i) break;
    k -= i - candidate;
    candidate = i + 1;
  }
  return candidate + k;
}

std::vector<TrainBatch> BatchSampler::next_epoch() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  std::vector<TrainBatch> batches;
  batches.reserve((order_.size() + batch_size_ - 1) / batch_size_);
  for (std::size_t start = 0; start < order_.size(); start += batch_size_) {
    const std::size_t end = std::min(order_.size(), start + batch_size_);
    TrainBatch batch;
    batch.triples.reserve(end - start);
    for (std::size_t k = start; k < end; ++k) {
      const auto& p = order_[k];
      batch.triples.push_back({p.user, p.item, draw_negative(p.user)});
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {

void write_pairs(std::ostream& out, const char* tag, const InteractionSet& set) {
  out << tag << ' ' << set.size() << '\n';
  for (const auto& p : set.pairs()) out << p.user << '\t' << p.item << '\n';
}

void write_ids(std::ostream& out, const char* tag, const IdMap& ids) {
  out << tag << ' ' << ids.size() << '\n';
  for (const auto& raw : ids.raw_ids()) out << raw << '\n';
}

std::size_t expect_section(std::istream& in, const std::string& tag) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("manifest truncated before '" + tag + "'");
  std::istringstream ss(line);
  std::string got;
  std::size_t count = 0;
  if (!(ss >> got >> count) || got != tag)
    throw std::runtime_error("manifest: expected '" + tag + " <count>', got '" + line + "'");
  return count;
}

IdMap read_ids(std::istream& in, const std::string& tag) {
  const std::size_t n = expect_section(in, tag);
  IdMap ids;
  std::string line;
  for (std::size_t k = 0; k < n; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error("manifest truncated in '" + tag + "'");
    if (ids.intern(line) != static_cast<int>(k))
      throw std::runtime_error("manifest: duplicate raw id '" + line + "' in '" + tag + "'");
  }
  return ids;
}

InteractionSet read_pairs(std::istream& in, const std::string& tag, int users, int items) {
  const std::size_t n = expect_section(in, tag);
  std::vector<Interaction> pairs;
  pairs.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Interaction p;
    if (!(in >> p.user >> p.item)) throw std::runtime_error("manifest truncated in '" + tag + "'");
    pairs.push_back(p);
  }
  in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  return InteractionSet(users, items, std::move(pairs));
}

constexpr const char* kManifestHeader = "concf-split v1";

}  // namespace

void write_split_manifest(const std::filesystem::path& path, const SplitManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  out << kManifestHeader << '\n';
  out << "seed " << manifest.split.split_seed << '\n';
  write_ids(out, "users", manifest.users);
  write_ids(out, "items", manifest.items);
  write_pairs(out, "train", manifest.split.train);
  write_pairs(out, "val", manifest.split.val);
  write_pairs(out, "test", manifest.split.test);
  if (!out) throw std::runtime_error("failed writing manifest: " + path.string());
}

SplitManifest read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kManifestHeader) throw std::runtime_error("not a split manifest: " + path.string());
  SplitManifest m;
  m.split.split_seed = expect_section(in, "seed");
  m.users = read_ids(in, "users");
  m.items = read_ids(in, "items");
  m.split.train = read_pairs(in, "train", m.users.size(), m.items.size());
  m.split.val = read_pairs(in, "val", m.users.size(), m.items.size());
  m.split.test = read_pairs(in, "test", m.users.size(), m.items.size());
  return m;
}

std::string describe(const InteractionSet& data) {
  char density[32];
  std::snprintf(density, sizeof density, "%.3f%%", 100.0 * data.density());
  return std::to_string(data.num_users()) + " users, " + std::to_string(data.num_items()) +
         " items, " + std::to_string(data.size()) + " interactions, " + density + " density";
}

}  // namespace concf
