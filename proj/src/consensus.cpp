#include "concf/consensus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "concf/parallel.hpp"

namespace concf {

std::vector<int> rank_items(std::span<const double> scores, std::span<const int> exclude,
                            std::size_t max_len) {
  std::vector<int> candidates;
  candidates.reserve(scores.size());
  std::size_t e = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]))
      throw std::domain_error("non-finite score for item " + std::to_string(i));
    while (e < exclude.size() && static_cast<std::size_t>(exclude[e]) < i) ++e;
    if (e < exclude.size() && static_cast<std::size_t>(exclude[e]) == i) continue;
    candidates.push_back(static_cast<int>(i));
  }
  const auto better = [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  };
  const std::size_t keep = std::min(max_len, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), better);
  candidates.resize(keep);
  return candidates;
}

double decay(double k, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("decay temperature must be positive");
  return std::exp(-k / temperature);
}

std::size_t RankSnapshot::head_position(Head h) const {
  auto it = std::find(heads.begin(), heads.end(), h);
  if (it == heads.end()) throw std::invalid_argument(std::string("snapshot has no head ") + head_tag(h));
  return static_cast<std::size_t>(it - heads.begin());
}

std::size_t RankSnapshot::rank(std::size_t head_pos, int user, int item) const {
  const auto& list = lists.at(head_pos).at(static_cast<std::size_t>(user));
  auto it = std::find(list.begin(), list.end(), item);
  return it == list.end() ? max_len : static_cast<std::size_t>(it - list.begin());
}

RankSnapshot take_snapshot(const ModelParams& params, const InteractionSet& train, int epoch,
                           std::size_t max_len, unsigned threads) {
  RankSnapshot snap;
  snap.epoch = epoch;
  snap.max_len = max_len;
  snap.heads.assign(params.heads().begin(), params.heads().end());
  const auto num_users = static_cast<std::size_t>(params.shape().num_users);
  const auto num_items = static_cast<std::size_t>(params.shape().num_items);
  for (Head h : snap.heads) {
    const EncodedHead enc(params, h);
    std::vector<std::vector<int>> lists(num_users);
    parallel_for(num_users, threads, [&](std::size_t begin, std::size_t end) {
      std::vector<double> row(num_items);
      for (std::size_t u = begin; u < end; ++u) {
        enc.score_row(static_cast<int>(u), row);
        try {
          lists[u] = rank_items(row, train.items_of(static_cast<int>(u)), max_len);
        } catch (const std::domain_error& e) {
          throw std::domain_error(std::string("head ") + head_tag(h) + ", user " +
                                  std::to_string(u) + ": " + e.what());
        }
      }
    });
    snap.lists.push_back(std::move(lists));
  }
  return snap;
}

SnapshotQueue::SnapshotQueue(std::size_t capacity, int period)
    : capacity_(capacity), period_(period) {
  if (capacity == 0) throw std::invalid_argument("queue capacity must be positive");
  if (period <= 0) throw std::invalid_argument("queue period must be positive");
}

const RankSnapshot& SnapshotQueue::latest() const {
  if (snapshots_.empty()) throw std::logic_error("snapshot queue is empty");
  return snapshots_.back();
}

void SnapshotQueue::push(RankSnapshot snapshot) {
  if (snapshot.epoch < 0 || snapshot.epoch % period_ != 0)
    throw std::invalid_argument("snapshot epoch " + std::to_string(snapshot.epoch) +
                                " is not a multiple of the period " + std::to_string(period_));
  if (!snapshots_.empty() && snapshot.epoch != snapshots_.back().epoch + period_)
    throw std::invalid_argument("snapshot epoch " + std::to_string(snapshot.epoch) +
                                " does not follow " + std::to_string(snapshots_.back().epoch));
  push_unchecked(std::move(snapshot));
}

void SnapshotQueue::push_unchecked(RankSnapshot snapshot) {
  if (!snapshots_.empty()) {
    const auto& last = snapshots_.back();
    if (last.heads != snapshot.heads || last.num_users() != snapshot.num_users())
      throw std::invalid_argument("snapshot layout differs from the queued snapshots");
  }
  if (snapshots_.size() == capacity_) snapshots_.pop_front();
  snapshots_.push_back(std::move(snapshot));
}

namespace {

double population_std(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / n);
}

}  // namespace

double rank_importance(const RankSnapshot& snapshot, std::size_t head_pos, int user, int item,
                       double temperature) {
  return decay(static_cast<double>(snapshot.rank(head_pos, user, item)), temperature);
}

double consistency(const SnapshotQueue& queue, std::size_t head_pos, int user, int item,
                   double temperature) {
  if (queue.size() < 2) throw std::logic_error("consistency needs at least two snapshots");
  std::vector<double> ranks;
  for (const auto& s : queue.snapshots())
    ranks.push_back(static_cast<double>(s.rank(head_pos, user, item)));
  return decay(population_std(ranks), temperature);
}

Consensus generate_consensus(const SnapshotQueue& queue, const ConsensusOptions& options,
                             unsigned threads) {
  if (!queue.full() || queue.size() < 2)
    throw std::logic_error("consensus needs a full snapshot queue (" + std::to_string(queue.size()) +
                           "/" + std::to_string(queue.capacity()) + ")");
  if (!(options.temperature > 0.0)) throw std::invalid_argument("decay temperature must be positive");
  const RankSnapshot& latest = queue.latest();
  std::vector<std::size_t> heads = options.head_positions;
  if (heads.empty()) {
    heads.resize(latest.heads.size());
    std::iota(heads.begin(), heads.end(), std::size_t{0});
  }
  const auto& snaps = queue.snapshots();
  const std::size_t num_snaps = snaps.size();
  const auto num_users = latest.num_users();
  int num_items = 0;
  for (const auto& s : snaps)
    for (const auto& per_head : s.lists)
      for (const auto& list : per_head)
        for (int i : list) num_items = std::max(num_items, i + 1);

  Consensus out;
  out.epoch = latest.epoch;
  out.users.resize(num_users);
  parallel_for(num_users, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<int> slot_of(static_cast<std::size_t>(num_items), -1);
    std::vector<int> candidates;
    std::vector<double> ranks, importance, row;
    row.resize(num_snaps);
    for (std::size_t u = begin; u < end; ++u) {
      candidates.clear();
      for (std::size_t p : heads)
        for (int i : latest.lists[p][u])
          if (slot_of[static_cast<std::size_t>(i)] < 0) {
            slot_of[static_cast<std::size_t>(i)] = static_cast<int>(candidates.size());
            candidates.push_back(i);
          }
      const std::size_t nc = candidates.size();
      importance.assign(nc, 0.0);
      ranks.resize(nc * num_snaps);
      for (std::size_t p : heads) {
        for (std::size_t s = 0; s < num_snaps; ++s) {
          const auto clamp = static_cast<double>(snaps[s].max_len);
          for (std::size_t c = 0; c < nc; ++c) ranks[c * num_snaps + s] = clamp;
          const auto& list = snaps[s].lists[p][u];
          for (std::size_t k = 0; k < list.size(); ++k) {
            const int c = slot_of[static_cast<std::size_t>(list[k])];
            if (c >= 0) ranks[static_cast<std::size_t>(c) * num_snaps + s] = static_cast<double>(k);
          }
        }
        for (std::size_t c = 0; c < nc; ++c) {
          const double r = decay(ranks[c * num_snaps + num_snaps - 1], options.temperature);
          if (options.mode == ConsensusMode::RankOnly) {
            importance[c] += r;
          } else {
            std::copy_n(ranks.begin() + static_cast<std::ptrdiff_t>(c * num_snaps), num_snaps, row.begin());
            importance[c] += r + decay(population_std(row), options.temperature);
          }
        }
      }
      const auto nh = static_cast<double>(heads.size());
      for (double& v : importance) v /= nh;

      std::vector<std::size_t> order(nc);
      std::iota(order.begin(), order.end(), std::size_t{0});
      const std::size_t keep = std::min(options.length, nc);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return importance[a] > importance[b] ||
                                 (importance[a] == importance[b] && candidates[a] < candidates[b]);
                        });
      ConsensusList& dst = out.users[u];
      dst.items.resize(keep);
      dst.importance.resize(keep);
      for (std::size_t k = 0; k < keep; ++k) {
        dst.items[k] = candidates[order[k]];
        dst.importance[k] = importance[order[k]];
      }
      for (int i : candidates) slot_of[static_cast<std::size_t>(i)] = -1;
    }
  });
  return out;
}

std::optional<Consensus> push_snapshot(SnapshotQueue& queue, const ModelParams& params,
                                       const InteractionSet& train, int epoch,
                                       std::size_t max_len, const ConsensusOptions& options,
                                       unsigned threads) {
  if (epoch < 0 || epoch % queue.period() != 0)
    throw std::invalid_argument("snapshot requested at epoch " + std::to_string(epoch) +
                                ", not a multiple of the period " + std::to_string(queue.period()));
  queue.push(take_snapshot(params, train, epoch, max_len, threads));
  if (!queue.full() || queue.size() < 2) return std::nullopt;
  return generate_consensus(queue, options, threads);
}

namespace {
constexpr const char* kQueueHeader = "concf-queue v1";
}

void write_queue(const std::filesystem::path& path, const SnapshotQueue& queue) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write queue dump: " + path.string());
  out << kQueueHeader << '\n';
  out << "capacity " << queue.capacity() << " period " << queue.period() << " snapshots "
      << queue.size() << '\n';
  for (const auto& s : queue.snapshots()) {
    out << "snapshot " << s.epoch << ' ' << s.max_len << ' ' << head_list_string(s.heads) << ' '
        << s.num_users() << '\n';
    for (const auto& per_head : s.lists) {
      for (const auto& list : per_head) {
        for (std::size_t k = 0; k < list.size(); ++k) out << (k ? " " : "") << list[k];
        out << '\n';
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing queue dump: " + path.string());
}

SnapshotQueue read_queue(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read queue dump: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kQueueHeader) throw std::runtime_error("not a queue dump: " + path.string());
  std::string k1, k2, k3;
  std::size_t capacity = 0, count = 0;
  int period = 0;
  std::getline(in, line);
  std::istringstream hdr(line);
  if (!(hdr >> k1 >> capacity >> k2 >> period >> k3 >> count) || k1 != "capacity" ||
      k2 != "period" || k3 != "snapshots")
    throw std::runtime_error("queue dump: malformed header line '" + line + "'");
  SnapshotQueue queue(capacity, period);
  for (std::size_t n = 0; n < count; ++n) {
    std::getline(in, line);
    std::istringstream sh(line);
    std::string tag, heads;
    RankSnapshot s;
    std::size_t users = 0;
    if (!(sh >> tag >> s.epoch >> s.max_len >> heads >> users) || tag != "snapshot")
      throw std::runtime_error("queue dump: malformed snapshot line '" + line + "'");
    s.heads = parse_head_list(heads);
    s.lists.assign(s.heads.size(), std::vector<std::vector<int>>(users));
    for (auto& per_head : s.lists) {
      for (auto& list : per_head) {
        if (!std::getline(in, line)) throw std::runtime_error("queue dump truncated");
        std::istringstream ls(line);
        int item = 0;
        while (ls >> item) list.push_back(item);
      }
    }
    queue.push_unchecked(std::move(s));
  }
  return queue;
}

void write_consensus_csv(const std::filesystem::path& path, const Consensus& consensus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write consensus dump: " + path.string());
  out << "epoch,user,position,item,importance\n";
  out.precision(17);
  for (std::size_t u = 0; u < consensus.users.size(); ++u) {
    const auto& c = consensus.users[u];
    for (std::size_t k = 0; k < c.items.size(); ++k)
      out << consensus.epoch << ',' << u << ',' << k << ',' << c.items[k] << ',' << c.importance[k] << '\n';
  }
}

}  // namespace concf
