#include "concf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "concf/eval.hpp"
#include "concf/objectives.hpp"
#include "concf/parallel.hpp"
#include "concf/ranking_loss.hpp"

namespace concf {

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) ids[static_cast<std::size_t>(k)] = k;
  return ids;
}

template <typename T>
std::vector<T> sorted_unique(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

struct BatchContext {
  const InteractionSet& train;
  const TrainConfig& config;
  const TrainBatch& batch;
  const std::vector<int>& batch_users;  // sorted, unique
};

double cf_loss(HeadForward& f, const BatchContext& ctx) {
  const auto& triples = ctx.batch.triples;
  const std::size_t n = triples.size();
  std::vector<int> ur(n), pr(n), nr(n);
  for (std::size_t k = 0; k < n; ++k) {
    ur[k] = f.user_row(triples[k].user);
    pr[k] = f.item_row(triples[k].pos);
    nr[k] = f.item_row(triples[k].neg);
  }

  switch (f.head()) {
    case Head::A:
    case Head::B: {
      std::vector<double> pos(n), neg(n);
      for (std::size_t k = 0; k < n; ++k) {
        pos[k] = f.raw(ur[k], pr[k]);
        neg[k] = f.raw(ur[k], nr[k]);
      }
      const PairwiseLoss l = f.head() == Head::A ? bpr_loss(pos, neg)
                                                 : triplet_hinge_loss(pos, neg, ctx.config.margin);
      for (std::size_t k = 0; k < n; ++k) {
        f.add_raw_grad(ur[k], pr[k], l.grad_pos[k]);
        f.add_raw_grad(ur[k], nr[k], l.grad_neg[k]);
      }
      return l.loss;
    }
    case Head::C:
    case Head::D: {
      // positives first, then their sampled negatives
      std::vector<double> values(2 * n), labels(2 * n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        values[k] = f.raw(ur[k], pr[k]);
        values[n + k] = f.raw(ur[k], nr[k]);
        labels[k] = 1.0;
      }
      const PointwiseLoss l = f.head() == Head::C ? bce_with_logits_loss(values, labels)
                                                  : squared_error_loss(values, labels);
      for (std::size_t k = 0; k < n; ++k) {
        f.add_raw_grad(ur[k], pr[k], l.grad[k]);
        f.add_raw_grad(ur[k], nr[k], l.grad[n + k]);
      }
      return l.loss;
    }
    case Head::E: {
      // Every user and item is encoded in id order, so rows equal ids.
      const auto& users = ctx.batch_users;
      std::vector<std::span<const int>> positives;
      positives.reserve(users.size());
      for (int u : users) positives.push_back(ctx.train.items_of(u));
      const MultinomialLoss rows = multinomial_loss(f.user_logits(users), positives);
      f.add_user_logits_grad(users, rows.grad);
      double loss = rows.loss;
      if (ctx.config.cf_e_columns) {
        std::vector<int> items(n);
        for (std::size_t k = 0; k < n; ++k) items[k] = triples[k].pos;
        items = sorted_unique(std::move(items));
        positives.clear();
        for (int i : items) positives.push_back(ctx.train.users_of(i));
        const MultinomialLoss cols = multinomial_loss(f.item_logits(items), positives);
        f.add_item_logits_grad(items, cols.grad);
        loss += cols.loss;
      }
      return loss;
    }
  }
  throw std::logic_error("unknown head");
}

std::vector<std::vector<int>> truncate_lists(const std::vector<std::vector<int>>& lists,
                                             std::size_t n) {
  std::vector<std::vector<int>> out(lists.size());
  for (std::size_t u = 0; u < lists.size(); ++u)
    out[u].assign(lists[u].begin(), lists[u].begin() + static_cast<std::ptrdiff_t>(
                                                          std::min(n, lists[u].size())));
  return out;
}

std::vector<std::vector<int>> consensus_lists(const Consensus& c) {
  std::vector<std::vector<int>> out(c.users.size());
  for (std::size_t u = 0; u < c.users.size(); ++u) out[u] = c.users[u].items;
  return out;
}

}  // namespace

HeadLoss head_batch_loss(const ModelParams& params, Head head, const TrainBatch& batch,
                         const InteractionSet& train, const TrainConfig& config,
                         const Consensus* consensus, Gradients& grads) {
  std::vector<int> batch_users;
  batch_users.reserve(batch.triples.size());
  for (const auto& t : batch.triples) batch_users.push_back(t.user);
  batch_users = sorted_unique(std::move(batch_users));

  std::vector<int> users, items;
  if (head == Head::E) {
    users = iota_ids(params.shape().num_users);
    items = iota_ids(params.shape().num_items);
  } else {
    users = batch_users;
    for (const auto& t : batch.triples) {
      items.push_back(t.pos);
      items.push_back(t.neg);
    }
    if (consensus)
      for (int u : batch_users) {
        const auto& list = consensus->users.at(static_cast<std::size_t>(u)).items;
        items.insert(items.end(), list.begin(), list.end());
      }
  }
  HeadForward f = forward(params, head, users, items);
  const BatchContext ctx{train, config, batch, batch_users};
  HeadLoss out;
  out.cf = cf_loss(f, ctx);
  if (consensus)
    out.cl = consensus_learning_loss(f, batch_users, *consensus, config.list_n, config.alpha);
  f.backward(params, grads);
  return out;
}

std::vector<Head> TrainConfig::active_heads() const {
  if (mode == TrainMode::Single) return {single_head};
  return heads;
}

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
  const bool concf = c.mode == TrainMode::ConCF;
  if (concf) {
    if (c.heads.empty()) fail("heads must name at least one head");
    if (sorted_unique(c.heads).size() != c.heads.size()) fail("heads must not repeat");
  }
  if (c.dim <= 0 || c.dim % 4 != 0) fail("dim must be a positive multiple of 4");
  if (!(c.alpha >= 0.0)) fail("alpha must be >= 0");
  if (!(c.temperature > 0.0)) fail("temperature must be > 0");
  if (c.list_n == 0) fail("top_n must be >= 1");
  if (c.period < 1) fail("period must be >= 1");
  if (c.eval_n == 0) fail("eval_n must be >= 1");
  if (!(c.learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (c.batch_size == 0) fail("batch_size must be >= 1");
  if (c.max_epochs < 1) fail("max_epochs must be >= 1");
  if (c.patience < 1) fail("patience must be >= 1");
  if (!(c.balance_sum > 0.0)) fail("balance_sum must be > 0");
  if (!(c.balance_lr >= 0.0)) fail("balance_lr must be >= 0");
  if (!(c.margin >= 0.0)) fail("margin must be >= 0");
  if (c.seeds.empty()) fail("seeds must not be empty");
  if (concf) {
    if (c.queue_size < 2) fail("queue_size must be >= 2");
    if (c.max_rank < c.list_n) fail("max_rank must be >= top_n");
    if (c.max_rank < c.eval_n) fail("max_rank must be >= eval_n");
    if (c.effective_length() < c.list_n) fail("consensus_length must be >= top_n");
    if (c.warmup_epochs() > c.max_epochs)
      fail("warm-up of queue_size * period = " + std::to_string(c.warmup_epochs()) +
           " epochs exceeds max_epochs = " + std::to_string(c.max_epochs));
  }
}

TrainResult train(const TrainConfig& config, const SplitDataset& split, std::uint64_t seed,
                  const TrainCallbacks& callbacks, const ResumeState* resume) {
  validate(config);
  const auto t0 = Clock::now();
  const InteractionSet& train_set = split.train;
  const bool concf = config.mode == TrainMode::ConCF;
  const std::vector<Head> heads = config.active_heads();
  const std::size_t nh = heads.size();

  ModelShape shape;
  shape.num_users = train_set.num_users();
  shape.num_items = train_set.num_items();
  shape.dim = config.dim;
  shape.sharing = config.sharing;
  shape.heads = heads;
  ModelParams params = resume ? resume->params : ModelParams::init(shape, seed);
  AdamState adam = resume ? resume->adam : make_adam_state(params);
  if (resume) {
    const ModelShape& got = params.shape();
    if (got.num_users != shape.num_users || got.num_items != shape.num_items ||
        got.dim != shape.dim || got.sharing != shape.sharing || got.heads != shape.heads)
      throw std::invalid_argument("resume checkpoint does not match the config and split");
  }
  AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  adam_config.weight_decay = config.weight_decay;

  BalanceOptions balance_options;
  balance_options.enabled = concf && config.balancing;
  balance_options.learning_rate = config.balance_lr;
  balance_options.target_sum = concf ? config.balance_sum : 1.0;
  balance_options.rule = config.balance_rule;
  BalanceState balance(nh, balance_options);
  if (resume && !resume->lambda.empty()) balance.set_weights(resume->lambda);

  const int first_epoch = resume ? resume->next_epoch : 0;
  BatchSampler sampler(train_set, config.batch_size,
                       splitmix64(seed ^ 0x73616d706c6572ULL) + static_cast<std::uint64_t>(first_epoch));

  ConsensusOptions consensus_options;
  consensus_options.temperature = config.temperature;
  consensus_options.length = config.effective_length();
  const std::size_t snapshot_len = concf ? config.max_rank : config.eval_n;

  TrainResult result;
  result.final_queue = SnapshotQueue(concf ? config.queue_size : 1, config.period);
  SnapshotQueue& queue = result.final_queue;
  std::optional<Consensus> consensus;
  if (resume && concf) {
    if (resume->queue.capacity() != config.queue_size || resume->queue.period() != config.period)
      throw std::invalid_argument("resume queue does not match queue_size/period");
    queue = resume->queue;
    if (queue.full()) consensus = generate_consensus(queue, consensus_options, config.threads);
  }

  TrainHistory& history = result.history;
  history.heads = heads;
  history.head_best_epoch.assign(nh, -1);
  history.head_best_metric.assign(nh, 0.0);
  result.head_best_params.resize(nh);
  int since_best = 0;

  for (int epoch = first_epoch; epoch < config.max_epochs; ++epoch) {
    const auto e0 = Clock::now();
    const bool cl_on = concf && epoch >= config.warmup_epochs() && config.alpha > 0.0;
    if (cl_on && !consensus) throw std::logic_error("consensus learning started before the queue filled");

    EpochRecord rec;
    rec.epoch = epoch;
    rec.consensus_active = cl_on;
    rec.cf_loss.assign(nh, 0.0);
    rec.cl_loss.assign(nh, 0.0);

    const std::vector<TrainBatch> batches = sampler.next_epoch();
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const std::vector<double> lambda(balance.weights().begin(), balance.weights().end());
      std::vector<double> losses(nh), norms(nh);
      Gradients total(params);
      for (std::size_t h = 0; h < nh; ++h) {
        Gradients g(params);
        const HeadLoss step = head_batch_loss(params, heads[h], batches[b], train_set, config,
                                              cl_on ? &*consensus : nullptr, g);
        losses[h] = step.cf + (cl_on ? config.alpha * step.cl : 0.0);
        if (!std::isfinite(losses[h]))
          throw std::runtime_error(std::string("non-finite loss for head ") + head_tag(heads[h]) +
                                   " at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b));
        const HeadSlots& slots = params.slots(heads[h]);
        const std::size_t emb[2] = {slots.user.emb, slots.item.emb};
        norms[h] = std::sqrt(g.squared_norm(emb));
        total.add_scaled(g, lambda[h]);
        rec.cf_loss[h] += step.cf;
        rec.cl_loss[h] += step.cl;
      }

      BatchRecord batch_rec;
      batch_rec.epoch = epoch;
      batch_rec.batch = b;
      batch_rec.loss = losses;
      batch_rec.lambda = lambda;
      for (std::size_t h = 0; h < nh; ++h) batch_rec.total += lambda[h] * losses[h];
      rec.total_loss += batch_rec.total;

      if (balance_options.enabled) balance_step(balance, norms, losses);
      apply_adam(params, total, adam, adam_config,
                 "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      if (callbacks.on_batch) callbacks.on_batch(batch_rec);
    }
    rec.lambda.assign(balance.weights().begin(), balance.weights().end());

    // Validation on a fresh snapshot of every head.
    RankSnapshot snap = take_snapshot(params, train_set, epoch, snapshot_len, config.threads);
    rec.val_recall.resize(nh);
    for (std::size_t h = 0; h < nh; ++h)
      rec.val_recall[h] = evaluate_lists(truncate_lists(snap.lists[h], config.eval_n), split.val,
                                         config.eval_n).recall;

    std::optional<SnapshotQueue> queue_before;
    if (concf) {
      if (epoch % config.period == 0) {
        queue_before = queue;
        queue.push(std::move(snap));
        if (queue.full()) {
          consensus = generate_consensus(queue, consensus_options, config.threads);
          rec.consensus_recall =
              evaluate_lists(consensus_lists(*consensus), split.val, config.eval_n).recall;
        }
      } else if (queue.size() + 1 >= queue.capacity()) {
        SnapshotQueue probe = queue;
        probe.push_unchecked(std::move(snap));
        const Consensus fresh = generate_consensus(probe, consensus_options, config.threads);
        rec.consensus_recall =
            evaluate_lists(consensus_lists(fresh), split.val, config.eval_n).recall;
      }
    }

    for (std::size_t h = 0; h < nh; ++h) {
      if (history.head_best_epoch[h] < 0 || rec.val_recall[h] > history.head_best_metric[h]) {
        history.head_best_epoch[h] = epoch;
        history.head_best_metric[h] = rec.val_recall[h];
        result.head_best_params[h] = params;
      }
    }

    const std::optional<double> metric = concf ? rec.consensus_recall
                                               : std::optional<double>(rec.val_recall[0]);
    if (metric) {
      if (history.best_epoch < 0 || *metric > history.best_metric) {
        history.best_epoch = epoch;
        history.best_metric = *metric;
        result.best_params = params;
        if (concf) result.best_queue = queue_before ? *queue_before : queue;
        since_best = 0;
      } else {
        ++since_best;
      }
    }

    rec.seconds = std::chrono::duration<double>(Clock::now() - e0).count();
    if (callbacks.on_epoch) callbacks.on_epoch(rec, params);
    history.epochs.push_back(std::move(rec));
    if (since_best >= config.patience) break;
  }

  if (history.best_epoch < 0) {
    // The selection metric never became available; keep the final state.
    result.best_params = params;
    result.best_queue = queue;
  }
  result.final_params = std::move(params);
  result.final_adam = std::move(adam);
  result.final_lambda.assign(balance.weights().begin(), balance.weights().end());
  history.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

std::vector<int> infer_target(const ModelParams& params, Head head, const InteractionSet& train,
                              int user, std::size_t n) {
  if (user < 0 || user >= params.shape().num_users)
    throw std::out_of_range("unknown user " + std::to_string(user));
  const EncodedHead enc(params, head);
  std::vector<double> scores(static_cast<std::size_t>(enc.num_items()));
  enc.score_row(user, scores);
  return rank_items(scores, train.items_of(user), n);
}

std::vector<std::vector<int>> infer_target_all(const ModelParams& params, Head head,
                                               const InteractionSet& train, std::size_t n,
                                               unsigned threads) {
  const EncodedHead enc(params, head);
  const auto users = static_cast<std::size_t>(params.shape().num_users);
  std::vector<std::vector<int>> out(users);
  parallel_for(users, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> scores(static_cast<std::size_t>(enc.num_items()));
    for (std::size_t u = begin; u < end; ++u) {
      enc.score_row(static_cast<int>(u), scores);
      out[u] = rank_items(scores, train.items_of(static_cast<int>(u)), n);
    }
  });
  return out;
}

std::vector<std::vector<int>> infer_consensus(const ModelParams& params, const SnapshotQueue& queue,
                                              const InteractionSet& train, std::size_t n,
                                              const InferConsensusOptions& options,
                                              unsigned threads) {
  if (queue.capacity() < 2 || queue.size() + 1 < queue.capacity())
    throw std::logic_error("snapshot queue holds " + std::to_string(queue.size()) + " of " +
                           std::to_string(queue.capacity()) +
                           " snapshots; training was too short to infer a consensus");
  const RankSnapshot& last = queue.latest();
  SnapshotQueue q = queue;
  q.push_unchecked(take_snapshot(params, train, last.epoch + queue.period(), last.max_len, threads));
  ConsensusOptions o;
  o.temperature = options.temperature;
  o.length = std::max(options.length, n);
  o.mode = options.rank_only ? ConsensusMode::RankOnly : ConsensusMode::RankAndConsistency;
  return truncate_lists(consensus_lists(generate_consensus(q, o, threads)), n);
}

std::vector<int> infer_consensus(const ModelParams& params, const SnapshotQueue& queue,
                                 const InteractionSet& train, int user, std::size_t n,
                                 const InferConsensusOptions& options) {
  if (user < 0 || user >= params.shape().num_users)
    throw std::out_of_range("unknown user " + std::to_string(user));
  return infer_consensus(params, queue, train, n, options)[static_cast<std::size_t>(user)];
}

}  // namespace concf
