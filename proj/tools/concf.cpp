#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "concf/eval.hpp"
#include "concf/synthetic.hpp"
#include "concf/trainer.hpp"
#include "report.hpp"

namespace fs = std::filesystem;
using namespace concf;
using namespace concf::cli;

namespace {

// CONCF_OUTPUT_DIR replaces the built-in default; an explicit --out wins.
fs::path output_dir(const std::string& flag, const char* fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("CONCF_OUTPUT_DIR"); env && *env) return env;
  return fallback;
}

std::vector<std::size_t> parse_cutoffs(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    const unsigned long v = std::stoul(part, &used);
    if (used != part.size() || v == 0) throw std::invalid_argument("bad cutoff '" + part + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("no cutoffs given");
  return out;
}

const InteractionSet& target_set(const SplitDataset& split, const std::string& on) {
  if (on == "test") return split.test;
  if (on == "val") return split.val;
  throw std::invalid_argument("--on must be val or test, not '" + on + "'");
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// --- prepare ---------------------------------------------------------------

struct PrepareArgs {
  std::string data;
  bool planted = false;
  PlantedOptions planted_options;
  std::string out;
  std::uint64_t seed = 1;
  SplitOptions split;
};

int run_prepare(const PrepareArgs& a) {
  SplitManifest m;
  InteractionSet all;
  if (a.planted) {
    all = planted_factor_data(a.planted_options, a.seed);
    for (int u = 0; u < all.num_users(); ++u) m.users.intern(std::to_string(u));
    for (int i = 0; i < all.num_items(); ++i) m.items.intern(std::to_string(i));
  } else {
    if (a.data.empty()) throw std::invalid_argument("prepare needs --data or --planted");
    LoadedInteractions loaded = load_interactions(a.data);
    all = std::move(loaded.interactions);
    m.users = std::move(loaded.users);
    m.items = std::move(loaded.items);
  }
  m.split = split_user_history(all, a.split, a.seed);
  const fs::path dir = output_dir(a.out, ".");
  fs::create_directories(dir);
  write_split_manifest(dir / "split.txt", m);
  std::ostringstream stats;
  stats << "all:   " << describe(all) << '\n'
        << "train: " << describe(m.split.train) << '\n'
        << "val:   " << describe(m.split.val) << '\n'
        << "test:  " << describe(m.split.test) << '\n';
  write_file(dir / "stats.txt", stats.str());
  std::cout << stats.str() << "manifest: " << (dir / "split.txt").string() << '\n';
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string split;
  std::string config;
  std::vector<std::string> sets;
  std::string mode, head, seeds;
  std::string out;
  std::string format = "csv";
  std::string resume;
  unsigned threads = 0;
};

ResumeState load_resume(const fs::path& dir) {
  std::ifstream in(dir / "state.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "state.json").string());
  const nlohmann::json state = nlohmann::json::parse(in);
  Checkpoint ckpt = load_checkpoint(dir / "final.ckpt");
  if (!ckpt.adam) throw std::runtime_error("final.ckpt carries no optimizer state");
  ResumeState r{std::move(ckpt.params), std::move(*ckpt.adam), {}, state.at("lambda").get<std::vector<double>>(),
                state.at("next_epoch").get<int>()};
  if (fs::exists(dir / "final_queue.txt")) r.queue = read_queue(dir / "final_queue.txt");
  return r;
}

int run_train(const TrainArgs& a) {
  TrainConfig config;
  if (!a.config.empty()) config = load_config(a.config);
  if (!a.mode.empty()) apply_config_setting(config, "mode", a.mode);
  if (!a.head.empty()) apply_config_setting(config, "head", a.head);
  if (!a.seeds.empty()) apply_config_setting(config, "seeds", a.seeds);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    apply_config_setting(config, s.substr(0, eq), s.substr(eq + 1));
  }
  if (a.threads) config.threads = a.threads;
  validate(config);
  const Format format = parse_format(a.format);

  const SplitManifest manifest = read_split_manifest(a.split);
  const fs::path root = output_dir(a.out, "runs");
  fs::create_directories(root);
  write_file(root / "config.txt", config_to_text(config));

  std::optional<ResumeState> resume;
  if (!a.resume.empty()) {
    if (config.seeds.size() != 1) throw std::invalid_argument("--resume needs exactly one seed");
    resume = load_resume(a.resume);
  }

  const std::vector<Head> heads = config.active_heads();
  const bool concf = config.mode == TrainMode::ConCF;
  std::vector<double> best_metrics;
  std::vector<std::vector<double>> head_metrics(heads.size());
  nlohmann::json summary;
  summary["runs"] = nlohmann::json::array();

  for (std::uint64_t seed : config.seeds) {
    const fs::path dir = root / ("seed-" + std::to_string(seed));
    fs::create_directories(dir);
    TrainCallbacks cb;
    cb.on_epoch = [&](const EpochRecord& e, const ModelParams&) {
      std::cerr << "seed " << seed << " epoch " << e.epoch;
      for (std::size_t h = 0; h < heads.size(); ++h) std::cerr << ' ' << head_tag(heads[h]) << '=' << fixed(e.val_recall[h]);
      if (e.consensus_recall) std::cerr << " consensus=" << fixed(*e.consensus_recall);
      std::cerr << " (" << fixed(e.seconds, 1) << "s)\n";
    };
    const TrainResult r = train(config, manifest.split, seed, cb, resume ? &*resume : nullptr);

    write_history(dir / "history", r.history, format);
    save_checkpoint(dir / "best.ckpt", r.best_params);
    save_checkpoint(dir / "final.ckpt", r.final_params, &r.final_adam);
    for (std::size_t h = 0; h < heads.size(); ++h)
      if (r.history.head_best_epoch[h] >= 0)
        save_checkpoint(dir / (std::string("head-") + head_tag(heads[h]) + ".ckpt"), r.head_best_params[h]);
    if (concf) {
      write_queue(dir / "best_queue.txt", r.best_queue);
      write_queue(dir / "final_queue.txt", r.final_queue);
    }
    const int next = r.history.epochs.empty() ? 0 : r.history.epochs.back().epoch + 1;
    write_file(dir / "state.json", nlohmann::json{{"next_epoch", next},
                                                  {"lambda", r.final_lambda},
                                                  {"best_epoch", r.history.best_epoch},
                                                  {"best_metric", r.history.best_metric}}
                                           .dump(2) + "\n");

    best_metrics.push_back(r.history.best_metric);
    for (std::size_t h = 0; h < heads.size(); ++h) head_metrics[h].push_back(r.history.head_best_metric[h]);
    summary["runs"].push_back({{"seed", seed},
                               {"best_epoch", r.history.best_epoch},
                               {"best_metric", r.history.best_metric},
                               {"head_best_metric", r.history.head_best_metric},
                               {"seconds", r.history.seconds}});
  }

  // validation table
  const std::string metric = concf ? "consensus" : std::string("head ") + head_tag(heads.front());
  std::cout << "validation R@" << config.eval_n << " (best epoch per seed)\n";
  std::cout << "seed";
  for (Head h : heads) std::cout << "\t" << head_tag(h);
  std::cout << '\t' << "selected(" << metric << ")\n";
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    std::cout << config.seeds[s];
    for (std::size_t h = 0; h < heads.size(); ++h) std::cout << '\t' << fixed(head_metrics[h][s]);
    std::cout << '\t' << fixed(best_metrics[s]) << '\n';
  }
  std::cout << "mean";
  for (const auto& v : head_metrics) std::cout << '\t' << fixed(mean(v));
  std::cout << '\t' << fixed(mean(best_metrics)) << '\n' << "std";
  for (const auto& v : head_metrics) std::cout << '\t' << fixed(stddev(v));
  std::cout << '\t' << fixed(stddev(best_metrics)) << '\n';

  summary["mean"] = mean(best_metrics);
  summary["std"] = stddev(best_metrics);
  nlohmann::json per_head;
  for (std::size_t h = 0; h < heads.size(); ++h)
    per_head[std::string(1, head_tag(heads[h]))] = {{"mean", mean(head_metrics[h])}, {"std", stddev(head_metrics[h])}};
  summary["heads"] = per_head;
  if (format == Format::Json) {
    write_file(root / "summary.json", summary.dump(2) + "\n");
  } else {
    std::ostringstream csv;
    csv.precision(10);
    csv << "seed,best_epoch,best_metric";
    for (Head h : heads) csv << ",head_" << head_tag(h);
    csv << '\n';
    for (const auto& run : summary["runs"]) {
      csv << run["seed"].get<std::uint64_t>() << ',' << run["best_epoch"].get<int>() << ','
          << run["best_metric"].get<double>();
      for (double v : run["head_best_metric"]) csv << ',' << v;
      csv << '\n';
    }
    csv << "mean,," << mean(best_metrics);
    for (const auto& v : head_metrics) csv << ',' << mean(v);
    csv << "\nstd,," << stddev(best_metrics);
    for (const auto& v : head_metrics) csv << ',' << stddev(v);
    csv << '\n';
    write_file(root / "summary.csv", csv.str());
  }
  return 0;
}

// --- evaluate --------------------------------------------------------------

struct EvaluateArgs {
  std::string split;
  std::string run;
  std::vector<std::string> checkpoints;
  std::string queue;
  std::string consensus = "auto";  // auto, rc, r, both, none
  std::string cutoffs = "20,50";
  std::string on = "test";
  std::string out;
  std::string format = "json";
  double temperature = 10.0;
  std::size_t length = 0;  // 0: twice the largest cutoff, at least 100
  unsigned threads = 1;
};

void add_rows(std::vector<MetricRow>& rows, const std::string& model, const std::string& target,
              const std::vector<std::vector<int>>& lists, const InteractionSet& truth,
              const std::vector<std::size_t>& cutoffs) {
  for (std::size_t n : cutoffs) {
    const RankingMetrics m = evaluate_lists(lists, truth, n);
    rows.push_back({model, target, n, m.recall, m.ndcg, m.users});
  }
}

int run_evaluate(const EvaluateArgs& a) {
  const SplitManifest manifest = read_split_manifest(a.split);
  const SplitDataset& split = manifest.split;
  const InteractionSet& truth = target_set(split, a.on);
  const auto cutoffs = parse_cutoffs(a.cutoffs);
  const std::size_t top = *std::max_element(cutoffs.begin(), cutoffs.end());
  const Format format = parse_format(a.format);

  // (label, checkpoint path, heads to report; empty means all)
  struct Model {
    std::string label;
    fs::path path;
    std::vector<Head> heads;
  };
  std::vector<Model> models;
  fs::path consensus_ckpt, queue_path = a.queue;
  if (!a.run.empty()) {
    const fs::path dir = a.run;
    for (Head h : kAllHeads) {
      const fs::path p = dir / (std::string("head-") + head_tag(h) + ".ckpt");
      if (fs::exists(p)) models.push_back({p.stem().string(), p, {h}});
    }
    if (models.empty()) models.push_back({"best", dir / "best.ckpt", {}});
    consensus_ckpt = dir / "best.ckpt";
    if (queue_path.empty() && fs::exists(dir / "best_queue.txt")) queue_path = dir / "best_queue.txt";
  }
  for (const auto& c : a.checkpoints) {
    models.push_back({fs::path(c).stem().string(), c, {}});
    if (consensus_ckpt.empty()) consensus_ckpt = c;
  }
  if (models.empty()) throw std::invalid_argument("evaluate needs --run or at least one --checkpoint");

  std::vector<MetricRow> rows;
  for (const auto& m : models) {
    const ModelParams p = load_checkpoint(m.path).params;
    for (Head h : m.heads.empty() ? p.shape().heads : m.heads)
      add_rows(rows, m.label, std::string(1, head_tag(h)),
               infer_target_all(p, h, split.train, top, a.threads), truth, cutoffs);
  }

  const bool wants = a.consensus == "rc" || a.consensus == "r" || a.consensus == "both";
  if (!wants && a.consensus != "auto" && a.consensus != "none")
    throw std::invalid_argument("--consensus must be auto, rc, r, both or none");
  if (wants && queue_path.empty()) throw std::invalid_argument("consensus requested but no queue dump given (--queue)");
  if (a.consensus != "none" && !queue_path.empty()) {
    const SnapshotQueue queue = read_queue(queue_path);
    const ModelParams p = load_checkpoint(consensus_ckpt).params;
    InferConsensusOptions o;
    o.temperature = a.temperature;
    o.length = a.length ? a.length : std::max<std::size_t>(100, 2 * top);
    const std::string label = fs::path(consensus_ckpt).stem().string();
    if (a.consensus != "r") add_rows(rows, label, "RC", infer_consensus(p, queue, split.train, top, o, a.threads), truth, cutoffs);
    if (a.consensus == "r" || a.consensus == "both") {
      o.rank_only = true;
      add_rows(rows, label, "R", infer_consensus(p, queue, split.train, top, o, a.threads), truth, cutoffs);
    }
  }

  std::cout << "model\ttarget";
  for (std::size_t n : cutoffs) std::cout << "\tR@" << n << "\tN@" << n;
  std::cout << '\n';
  for (std::size_t r = 0; r < rows.size(); r += cutoffs.size()) {
    std::cout << rows[r].model << '\t' << rows[r].target;
    for (std::size_t k = 0; k < cutoffs.size(); ++k)
      std::cout << '\t' << fixed(rows[r + k].recall) << '\t' << fixed(rows[r + k].ndcg);
    std::cout << '\n';
  }
  const fs::path dir = output_dir(a.out, ".");
  write_metrics(dir / "metrics", rows, format);
  return 0;
}

// --- analyze ---------------------------------------------------------------

struct AnalyzeArgs {
  std::string split;
  std::vector<std::string> models;  // path or path:HEAD
  std::string on = "test";
  std::size_t k = 50;
  std::string out;
  std::string format = "csv";
  unsigned threads = 1;
};

int run_analyze(const AnalyzeArgs& a) {
  const SplitManifest manifest = read_split_manifest(a.split);
  const InteractionSet& truth = target_set(manifest.split, a.on);
  const Format format = parse_format(a.format);
  if (a.models.empty()) throw std::invalid_argument("analyze needs at least one --model");

  std::vector<std::string> labels;
  std::vector<HitSet> family;
  for (const auto& spec : a.models) {
    std::string path = spec;
    std::optional<Head> head;
    if (const auto colon = spec.rfind(':'); colon != std::string::npos && colon + 2 == spec.size()) {
      path = spec.substr(0, colon);
      head = parse_head(spec.substr(colon + 1));
    }
    const ModelParams p = load_checkpoint(path).params;
    if (!head) {
      if (p.shape().heads.size() != 1)
        throw std::invalid_argument("checkpoint " + path + " has several heads; pick one with " + path + ":X");
      head = p.shape().heads.front();
    }
    labels.push_back(fs::path(path).stem().string() + ":" + head_tag(*head));
    family.push_back(hit_set(infer_target_all(p, *head, manifest.split.train, a.k, a.threads), truth, a.k));
  }

  const fs::path dir = output_dir(a.out, ".");
  const std::size_t n = family.size();
  std::vector<std::vector<std::optional<double>>> per_matrix(n, std::vector<std::optional<double>>(n));
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t y = 0; y < n; ++y) per_matrix[x][y] = per(family[x], family[y]);
  std::vector<std::optional<double>> chrs(n);
  for (std::size_t y = 0; y < n; ++y) chrs[y] = chr(family[y], family);

  auto cell = [](const std::optional<double>& v) { return v ? fixed(*v, 6) : std::string(); };
  std::ostringstream per_csv;
  per_csv << "x\\y";
  for (const auto& l : labels) per_csv << ',' << l;
  per_csv << '\n';
  for (std::size_t x = 0; x < n; ++x) {
    per_csv << labels[x];
    for (std::size_t y = 0; y < n; ++y) per_csv << ',' << cell(per_matrix[x][y]);
    per_csv << '\n';
  }
  write_file(dir / "per.csv", per_csv.str());

  for (std::size_t y = 0; y < n; ++y) {
    std::ostringstream cdf;
    cdf.precision(10);
    for (const auto& [v, frac] : user_chr_cdf(family, y)) cdf << v << ',' << frac << '\n';
    write_file(dir / ("cdf-" + std::to_string(y) + ".csv"), cdf.str());
  }

  if (format == Format::Json) {
    nlohmann::json j;
    j["models"] = labels;
    j["hits"] = nlohmann::json::array();
    for (const auto& h : family) j["hits"].push_back(h.size());
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    j["per"] = nlohmann::json::array();
    for (const auto& row : per_matrix) {
      nlohmann::json r = nlohmann::json::array();
      for (const auto& v : row) r.push_back(opt(v));
      j["per"].push_back(r);
    }
    j["chr"] = nlohmann::json::array();
    for (const auto& v : chrs) j["chr"].push_back(opt(v));
    write_file(dir / "analysis.json", j.dump(2) + "\n");
  } else {
    std::ostringstream csv;
    csv << "model,hits,chr\n";
    for (std::size_t y = 0; y < n; ++y) csv << labels[y] << ',' << family[y].size() << ',' << cell(chrs[y]) << '\n';
    write_file(dir / "chr.csv", csv.str());
  }

  std::cout << "model\thits\tCHR\n";
  for (std::size_t y = 0; y < n; ++y)
    std::cout << y << ' ' << labels[y] << '\t' << family[y].size() << '\t' << cell(chrs[y]) << '\n';
  std::cout << "PER matrix: " << (dir / "per.csv").string() << ", user CHR CDFs: cdf-<index>.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consensus learning for one-class collaborative filtering"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "load interactions, split them per user and write a manifest");
  p->add_option("--data", prep.data, "interaction file: user<tab or comma>item[...] per line");
  p->add_flag("--planted", prep.planted, "generate planted-factor data instead of reading a file");
  p->add_option("--users", prep.planted_options.num_users, "planted: users")->capture_default_str();
  p->add_option("--items", prep.planted_options.num_items, "planted: items")->capture_default_str();
  p->add_option("--rank", prep.planted_options.rank, "planted: latent rank")->capture_default_str();
  p->add_option("--per-user", prep.planted_options.per_user, "planted: interactions per user")->capture_default_str();
  p->add_option("--sharpness", prep.planted_options.sharpness, "planted: preference sharpness")->capture_default_str();
  p->add_option("--popularity", prep.planted_options.popularity, "planted: item popularity spread")->capture_default_str();
  p->add_option("--seed", prep.seed, "split seed (also the planted data seed)")->capture_default_str();
  p->add_option("--min-interactions", prep.split.min_interactions, "users below this keep everything in train")
      ->capture_default_str();
  p->add_option("--min-item-interactions", prep.split.min_item_interactions,
                "items below this keep their pairs in train (0 = off)")
      ->capture_default_str();
  p->add_option("--out", prep.out, "output directory (default $CONCF_OUTPUT_DIR or .)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train ConCF or a single-objective baseline, one run per seed");
  t->add_option("--split", tr.split, "split manifest from prepare")->required();
  t->add_option("--config", tr.config, "key = value config file");
  t->add_option("--set", tr.sets, "override one config key: key=value (repeatable)");
  t->add_option("--mode", tr.mode, "concf or single");
  t->add_option("--head", tr.head, "head for single mode: A..E");
  t->add_option("--seeds", tr.seeds, "seed list, e.g. 1,2,3 or 1..5");
  t->add_option("--resume", tr.resume, "continue from a seed directory of an earlier run");
  t->add_option("--out", tr.out, "output directory (default $CONCF_OUTPUT_DIR or runs)");
  t->add_option("--format", tr.format, "json or csv")->capture_default_str();
  t->add_option("--threads", tr.threads, "worker threads (overrides the config)");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Recall@N and NDCG@N of heads and consensus");
  e->add_option("--split", ev.split, "split manifest")->required();
  e->add_option("--run", ev.run, "seed directory written by train");
  e->add_option("--checkpoint", ev.checkpoints, "checkpoint to evaluate (repeatable)");
  e->add_option("--queue", ev.queue, "queue dump for consensus inference");
  e->add_option("--consensus", ev.consensus, "auto, rc, r, both or none")->capture_default_str();
  e->add_option("--n", ev.cutoffs, "cutoffs, comma separated")->capture_default_str();
  e->add_option("--on", ev.on, "val or test")->capture_default_str();
  e->add_option("--temperature", ev.temperature, "consensus temperature")->capture_default_str();
  e->add_option("--length", ev.length, "consensus length before truncation (0 = auto)");
  e->add_option("--out", ev.out, "output directory (default $CONCF_OUTPUT_DIR or .)");
  e->add_option("--format", ev.format, "json or csv")->capture_default_str();
  e->add_option("--threads", ev.threads, "worker threads")->capture_default_str();

  AnalyzeArgs an;
  auto* z = app.add_subcommand("analyze", "PER matrix, CHR and per-user CHR distributions of a model family");
  z->add_option("--split", an.split, "split manifest")->required();
  z->add_option("--model", an.models, "checkpoint, or checkpoint:HEAD for multi-head models (repeatable)");
  z->add_option("--on", an.on, "val or test")->capture_default_str();
  z->add_option("--k", an.k, "top-k cutoff for hits")->capture_default_str();
  z->add_option("--out", an.out, "output directory (default $CONCF_OUTPUT_DIR or .)");
  z->add_option("--format", an.format, "json or csv for the CHR table")->capture_default_str();
  z->add_option("--threads", an.threads, "worker threads")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (p->parsed()) return run_prepare(prep);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_evaluate(ev);
    if (z->parsed()) return run_analyze(an);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
