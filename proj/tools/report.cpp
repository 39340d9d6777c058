#include "report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace concf::cli {

Format parse_format(const std::string& text) {
  if (text == "json") return Format::Json;
  if (text == "csv") return Format::Csv;
  throw std::invalid_argument("unknown format '" + text + "' (expected json or csv)");
}

const char* extension(Format f) { return f == Format::Json ? ".json" : ".csv"; }

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json history_json(const TrainHistory& h) {
  nlohmann::json j;
  std::string heads;
  for (Head x : h.heads) heads += head_tag(x);
  j["heads"] = heads;
  j["best_epoch"] = h.best_epoch;
  j["best_metric"] = h.best_metric;
  j["head_best_epoch"] = h.head_best_epoch;
  j["head_best_metric"] = h.head_best_metric;
  j["seconds"] = h.seconds;
  auto& epochs = j["epochs"] = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    nlohmann::json r;
    r["epoch"] = e.epoch;
    r["cf_loss"] = e.cf_loss;
    r["cl_loss"] = e.cl_loss;
    r["lambda"] = e.lambda;
    r["total_loss"] = e.total_loss;
    r["val_recall"] = e.val_recall;
    r["consensus_recall"] = e.consensus_recall ? nlohmann::json(*e.consensus_recall) : nlohmann::json();
    r["consensus_active"] = e.consensus_active;
    r["seconds"] = e.seconds;
    epochs.push_back(std::move(r));
  }
  return j;
}

void write_history(const std::filesystem::path& stem, const TrainHistory& h, Format f) {
  const auto path = std::filesystem::path(stem.string() + extension(f));
  if (f == Format::Json) {
    write_file(path, history_json(h).dump(2) + "\n");
    return;
  }
  std::ostringstream out;
  out.precision(10);
  out << "epoch";
  for (const char* col : {"cf_loss", "cl_loss", "lambda", "val_recall"})
    for (Head x : h.heads) out << ',' << col << '_' << head_tag(x);
  out << ",total_loss,consensus_recall,consensus_active,seconds\n";
  for (const auto& e : h.epochs) {
    out << e.epoch;
    for (const auto* v : {&e.cf_loss, &e.cl_loss, &e.lambda, &e.val_recall})
      for (double x : *v) out << ',' << x;
    out << ',' << e.total_loss << ',';
    if (e.consensus_recall) out << *e.consensus_recall;
    out << ',' << (e.consensus_active ? 1 : 0) << ',' << e.seconds << '\n';
  }
  write_file(path, out.str());
}

void write_metrics(const std::filesystem::path& stem, const std::vector<MetricRow>& rows, Format f) {
  const auto path = std::filesystem::path(stem.string() + extension(f));
  if (f == Format::Json) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
      j.push_back({{"model", r.model}, {"target", r.target}, {"n", r.n},
                   {"recall", r.recall}, {"ndcg", r.ndcg}, {"users", r.users}});
    write_file(path, j.dump(2) + "\n");
    return;
  }
  std::ostringstream out;
  out.precision(10);
  out << "model,target,n,recall,ndcg,users\n";
  for (const auto& r : rows)
    out << r.model << ',' << r.target << ',' << r.n << ',' << r.recall << ',' << r.ndcg << ',' << r.users << '\n';
  write_file(path, out.str());
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace concf::cli
