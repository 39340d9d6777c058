// Acceptance suite: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// any criterion fails.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <string>
#include <thread>

#include "concf/eval.hpp"
#include "concf/ranking_loss.hpp"
#include "concf/synthetic.hpp"
#include "concf/trainer.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"
#include "support.hpp"

using namespace concf;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::Pass : Status::Fail, std::move(detail)}; }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

unsigned g_threads = 1;

// --- gradient correctness -------------------------------------------------

Outcome gradients() {
  std::mt19937_64 rng(2024);
  ModelShape shape;
  shape.num_users = shape.num_items = shape.dim = 8;
  TrainConfig config;
  int failed = 0, checks = 0;
  double worst = 0.0;
  std::string where;
  auto record = [&](const testing::GradCheck& g, const std::string& what) {
    ++checks;
    worst = std::max(worst, g.worst_rel);
    if (!g.ok) {
      ++failed;
      if (where.empty()) where = what + " " + g.where;
    }
  };
  for (int instance = 0; instance < 20; ++instance) {
    const InteractionSet train = testing::random_interactions(8, 8, 0.3, rng);
    BatchSampler sampler(train, 1024, static_cast<std::uint64_t>(instance));
    const TrainBatch batch = sampler.next_epoch().front();
    ModelParams base = ModelParams::init(shape, static_cast<std::uint64_t>(instance));
    testing::randomize(base, rng);
    for (Head h : kAllHeads) {
      auto loss = [&](const ModelParams& q, Gradients* g) {
        Gradients scratch(q);
        return head_batch_loss(q, h, batch, train, config, nullptr, g ? *g : scratch).cf;
      };
      record(testing::check_gradients(base, loss), std::string("CF-") + head_tag(h));
    }

    // listwise loss: random consensus lists, top-N prefix, through a random head
    Consensus target;
    std::vector<int> order(8);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t len = 3 + static_cast<std::size_t>(instance % 6);
    const std::size_t n = 1 + static_cast<std::size_t>(instance) % len;
    for (int u = 0; u < 8; ++u) {
      std::shuffle(order.begin(), order.end(), rng);
      target.users.push_back({{order.begin(), order.begin() + static_cast<long>(len)}, {}});
    }
    const Head h = kAllHeads[static_cast<std::size_t>(instance) % kAllHeads.size()];
    const std::vector<int> users{0, 1, 2, 3, 4, 5, 6, 7};
    auto pl = [&](const ModelParams& q, Gradients* g) {
      HeadForward f = forward(q, h, users, users);
      const double l = consensus_learning_loss(f, users, target, n, 1.0);
      if (g) f.backward(q, *g);
      return l;
    };
    record(testing::check_gradients(base, pl), std::string("PL via ") + head_tag(h));
  }
  return verdict(failed == 0, std::to_string(checks - failed) + "/" + std::to_string(checks) +
                                  " checks, worst rel err where |g| > 1e-3 " + fmt("%.2e", worst) +
                                  (where.empty() ? "" : ", first failure " + where));
}

// --- Plackett-Luce normalization ------------------------------------------

Outcome pl_normalization() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 2.0);
  double worst = 0.0;
  for (std::size_t len = 1; len <= 5; ++len)
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> scores(len);
      for (double& s : scores) s = nd(rng);
      std::vector<int> perm(len);
      std::iota(perm.begin(), perm.end(), 0);
      double total = 0.0;
      do {
        std::vector<double> listed;
        for (int i : perm) listed.push_back(scores[static_cast<std::size_t>(i)]);
        total += std::exp(topn_log_likelihood(listed, len).log_prob);
      } while (std::next_permutation(perm.begin(), perm.end()));
      worst = std::max(worst, std::abs(total - 1.0));
    }
  return verdict(worst <= 1e-9, "max |sum - 1| = " + fmt("%.2e", worst) + " over 100 score vectors");
}

// --- consensus oracle -----------------------------------------------------

Outcome consensus_oracle() {
  std::mt19937_64 rng(99);
  int mismatched = 0, lists = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto c = oracle::random_case(rng);
    for (bool rank_only : {false, true}) {
      const auto want = oracle::expected_importance(c, rank_only);
      const Consensus got = oracle::run_consensus(c, rank_only);
      for (std::size_t u = 0; u < want.size(); ++u) {
        ++lists;
        const auto& g = got.users[u];
        bool same = g.items.size() == want[u].size();
        for (std::size_t k = 0; same && k < g.items.size(); ++k)
          same = g.items[k] == want[u][k].second && g.importance[k] == want[u][k].first;
        mismatched += !same;
      }
    }
  }
  return verdict(mismatched == 0, std::to_string(lists - mismatched) + "/" + std::to_string(lists) +
                                      " RC and R lists identical in order and importance");
}

// --- rank invariance ------------------------------------------------------

Outcome rank_invariance() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::function<double(double)> transforms[2] = {
      [](double v) { return 3.0 * v - 2.0; },
      [](double v) { return std::exp(v); },
  };
  int changed = 0, runs = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto c = oracle::random_case(rng);
    for (auto& s : c.scores)
      for (auto& h : s)
        for (auto& row : h)
          for (double& v : row) v = nd(rng);
    const auto head = static_cast<std::size_t>(trial % c.heads);
    for (bool rank_only : {false, true}) {
      const auto base = oracle::actual_consensus(c, rank_only);
      for (const auto& f : transforms) {
        auto d = c;
        for (auto& s : d.scores)
          for (auto& row : s[head])
            for (double& v : row) v = f(v);
        ++runs;
        changed += oracle::actual_consensus(d, rank_only) != base;
      }
    }
  }
  return verdict(changed == 0, std::to_string(runs - changed) + "/" + std::to_string(runs) + " unchanged");
}

// --- balancing convergence ------------------------------------------------

Outcome balancing() {
  const auto run = scenario::quadratic_balancing(500, {});
  double sum_err = 0.0;
  for (double s : run.weight_sum) sum_err = std::max(sum_err, std::abs(s - 1.0));
  const double err = run.ratio_error.back();
  int first_in = -1;
  for (std::size_t k = 0; k < run.ratio_error.size(); ++k)
    if (run.ratio_error[k] <= 0.10 && first_in < 0) first_in = static_cast<int>(k);
  return verdict(err <= 0.10 && sum_err <= 1e-12,
                 "G-ratio off target by " + fmt("%.1f%%", 100.0 * err) + " at step 500 (first within 10% at step " +
                     std::to_string(first_in + 1) + "), max |sum lambda - 1| = " + fmt("%.1e", sum_err) +
                     ", lambda = (" + fmt("%.3g", run.lambda[0]) + ", " + fmt("%.3g", run.lambda[1]) + ")");
}

// --- SingleCF equivalence -------------------------------------------------

Outcome single_equivalence() {
  PlantedOptions data;
  data.num_users = 80;
  data.num_items = 120;
  data.per_user = 15;
  int differing = 0, compared = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SplitDataset split = split_user_history(planted_factor_data(data, seed), {}, seed);
    TrainConfig joint;
    joint.dim = 16;
    joint.batch_size = 256;
    joint.max_epochs = 5;
    joint.period = 2;
    joint.queue_size = 2;
    joint.max_rank = 100;
    joint.alpha = 0.0;
    joint.balancing = false;
    joint.balance_sum = 5.0;  // one unit of weight per head, as in a lone run
    joint.sharing = SharingLevel::NoSharing;
    joint.threads = g_threads;
    std::vector<ModelParams> joint_epochs;
    TrainCallbacks cb;
    cb.on_epoch = [&](const EpochRecord&, const ModelParams& p) { joint_epochs.push_back(p); };
    train(joint, split, seed, cb);
    for (Head h : kAllHeads) {
      TrainConfig single = joint;
      single.mode = TrainMode::Single;
      single.single_head = h;
      std::vector<ModelParams> lone;
      TrainCallbacks lcb;
      lcb.on_epoch = [&](const EpochRecord&, const ModelParams& p) { lone.push_back(p); };
      train(single, split, seed, lcb);
      for (std::size_t e = 0; e < lone.size() && e < joint_epochs.size(); ++e) {
        for (const auto& t : lone[e].tensors()) {
          ++compared;
          differing += joint_epochs[e].tensors()[joint_epochs[e].find_tensor(t.name)].value != t.value;
        }
      }
      if (lone.size() != joint_epochs.size()) ++differing;
    }
  }
  return verdict(differing == 0, std::to_string(compared - differing) + "/" + std::to_string(compared) +
                                     " per-epoch head tensors bitwise identical (3 seeds, 5 epochs)");
}

// --- directional ConCF benefit --------------------------------------------

struct SeedResult {
  double best_head = 0.0;
  Head head = Head::A;
  double rc = 0.0;
  double r = 0.0;
  int best_epoch = 0;
  double seconds = 0.0;
};

SeedResult synthetic_seed(std::uint64_t seed) {
  PlantedOptions data;
  data.sharpness = 6.0;
  data.popularity = 0.3;
  const SplitDataset split = split_user_history(planted_factor_data(data, 1000 + seed), {}, seed);

  TrainConfig c;
  c.period = 5;
  c.queue_size = 5;
  c.max_rank = static_cast<std::size_t>(data.num_items);
  c.max_epochs = 150;
  c.threads = g_threads;
  const TrainResult r = train(c, split, seed);

  SeedResult out;
  out.seconds = r.history.seconds;
  out.best_epoch = r.history.best_epoch;
  std::size_t best = 0;
  for (std::size_t h = 1; h < r.history.heads.size(); ++h)
    if (r.history.head_best_metric[h] > r.history.head_best_metric[best]) best = h;
  out.head = r.history.heads[best];
  out.best_head = evaluate_lists(infer_target_all(r.head_best_params[best], out.head, split.train, 50, g_threads),
                                 split.test, 50)
                      .recall;
  InferConsensusOptions o;
  o.temperature = c.temperature;
  o.length = c.effective_length();
  out.rc = evaluate_lists(infer_consensus(r.best_params, r.best_queue, split.train, 50, o, g_threads), split.test, 50)
               .recall;
  o.rank_only = true;
  out.r = evaluate_lists(infer_consensus(r.best_params, r.best_queue, split.train, 50, o, g_threads), split.test, 50)
              .recall;
  return out;
}

Outcome directional() {
  int a = 0, b = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SeedResult s = synthetic_seed(seed);
    a += s.rc >= s.best_head;
    b += s.rc >= s.r;
    std::printf("      seed %llu: best head %c %.4f, RC %.4f, R %.4f (best epoch %d, %.0fs)\n",
                static_cast<unsigned long long>(seed), head_tag(s.head), s.best_head, s.rc, s.r, s.best_epoch,
                s.seconds);
    std::fflush(stdout);
  }
  const bool pa = a >= 4, pb = b >= 4;
  return verdict(pa && pb, std::string("(a) RC >= best head in ") + std::to_string(a) + "/5 seeds " +
                               (pa ? "pass" : "FAIL") + "; (b) RC >= R in " + std::to_string(b) + "/5 seeds " +
                               (pb ? "pass" : "FAIL"));
}

// --- metric oracles -------------------------------------------------------

Outcome metric_oracles() {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<int> grid(0, 6);
  int bad = 0, cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int items = std::uniform_int_distribution<int>(2, 40)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 15)(rng);
    std::vector<double> scores(static_cast<std::size_t>(items));
    for (double& s : scores) s = grid(rng);
    std::vector<int> exclude, truth;
    for (int i = 0; i < items; ++i) {
      const int r = grid(rng);
      if (r == 0) exclude.push_back(i);
      else if (r == 1) truth.push_back(i);
    }
    if (truth.empty()) truth.push_back(items - 1), exclude.erase(std::remove(exclude.begin(), exclude.end(), items - 1), exclude.end());
    const auto ranked = rank_items(scores, exclude, n);
    const auto [rec, nd] = oracle::scan_metrics(scores, exclude, truth, n);
    ++cases;
    bad += recall_at_n(ranked, truth, n) != rec || ndcg_at_n(ranked, truth, n) != nd;
  }
  std::bernoulli_distribution coin(0.25);
  for (int trial = 0; trial < 1000; ++trial) {
    const int models = std::uniform_int_distribution<int>(1, 5)(rng);
    std::vector<HitSet> fam(static_cast<std::size_t>(models));
    std::set<Interaction> all;
    for (auto& h : fam) {
      for (int u = 0; u < 5; ++u)
        for (int i = 0; i < 6; ++i)
          if (coin(rng)) h.push_back({u, i});
      all.insert(h.begin(), h.end());
    }
    ++cases;
    bool ok = true;
    for (const auto& hx : fam) {
      const std::set<Interaction> sx(hx.begin(), hx.end());
      const std::vector<HitSet> alone{hx};
      ok = ok && per(hx, hx).value_or(0.0) == 0.0 && chr(hx, alone).value_or(0.0) == 0.0;
      for (const auto& hy : fam) {
        const std::set<Interaction> sy(hy.begin(), hy.end());
        std::size_t miss = 0;
        for (const auto& p : sx) miss += !sy.count(p);
        const auto got = per(hx, hy);
        ok = ok && (sx.empty() ? !got : got && *got == static_cast<double>(miss) / static_cast<double>(sx.size()));
      }
      std::size_t miss = 0;
      for (const auto& p : all) miss += !sx.count(p);
      const auto got = chr(hx, fam);
      ok = ok && (all.empty() ? !got : got && *got == static_cast<double>(miss) / static_cast<double>(all.size()));
    }
    bad += !ok;
  }
  return verdict(bad == 0, std::to_string(cases - bad) + "/" + std::to_string(cases) +
                               " cases exact (recall/NDCG scans, PER/CHR set arithmetic)");
}

// --- optional full-data check ---------------------------------------------

Outcome citeulike(bool full) {
  if (!full) return {Status::Skip, "needs --full"};
  const char* path = std::getenv("CONCF_CITEULIKE");
  if (!path || !*path) return {Status::Skip, "set CONCF_CITEULIKE to the interaction file"};
  const LoadedInteractions data = load_interactions(path);
  const SplitDataset split = split_user_history(data.interactions, {}, 1);
  TrainConfig c;
  c.threads = g_threads;
  const TrainResult r = train(c, split, 1);
  InferConsensusOptions o;
  o.temperature = c.temperature;
  o.length = c.effective_length();
  const double rc = evaluate_lists(infer_consensus(r.best_params, r.best_queue, split.train, 50, o, g_threads),
                                   split.test, 50)
                        .recall;

  auto single_hits = [&](Head h, std::uint64_t seed, int dim) {
    TrainConfig s = c;
    s.mode = TrainMode::Single;
    s.single_head = h;
    s.dim = dim;
    const TrainResult t = train(s, split, seed);
    return hit_set(infer_target_all(t.best_params, h, split.train, 50, g_threads), split.test, 50);
  };
  std::vector<HitSet> objectives, inits, sizes;
  for (Head h : kAllHeads) objectives.push_back(single_hits(h, 1, 64));
  for (std::uint64_t s = 1; s <= 5; ++s) inits.push_back(s == 1 ? objectives[0] : single_hits(Head::A, s, 64));
  for (int d : {64, 32, 48, 80, 96}) sizes.push_back(d == 64 ? objectives[0] : single_hits(Head::A, 1, d));
  const double co = chr(objectives[0], objectives).value_or(0.0);
  const double ci = chr(inits[0], inits).value_or(0.0);
  const double cs = chr(sizes[0], sizes).value_or(0.0);
  const bool ok = rc >= 0.35 && rc <= 0.43 && co > ci && co > cs;
  return verdict(ok, "RC R@50 " + fmt("%.4f", rc) + "; CHR of CF-A: objectives " + fmt("%.3f", co) +
                         ", initializations " + fmt("%.3f", ci) + ", sizes " + fmt("%.3f", cs));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ConCF acceptance checks"};
  bool full = false;
  std::string only;
  g_threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_flag("--full", full, "also run the multi-hour CiteULike reproduction");
  app.add_option("--only", only, "run only criteria whose name contains this text");
  app.add_option("--threads", g_threads, "worker threads for ranking");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient correctness", gradients},
      {"plackett-luce normalization", pl_normalization},
      {"consensus oracle equivalence", consensus_oracle},
      {"rank invariance", rank_invariance},
      {"balancing convergence", balancing},
      {"single-head equivalence", single_equivalence},
      {"directional consensus benefit (synthetic)", directional},
      {"metric oracles", metric_oracles},
      {"citeulike reproduction", [full] { return citeulike(full); }},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && name.find(only) == std::string::npos) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("threw: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    failures += o.status == Status::Fail;
    std::printf("%s  %s: %s [%.1fs]\n", tag, name.c_str(), o.detail.c_str(), s);
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}
