#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "concf/trainer.hpp"

namespace concf::cli {

enum class Format { Json, Csv };

Format parse_format(const std::string& text);
const char* extension(Format f);

// One row of an evaluation table.
struct MetricRow {
  std::string model;
  std::string target;  // head tag, "RC" or "R"
  std::size_t n = 0;
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;
};

nlohmann::json history_json(const TrainHistory& h);
void write_history(const std::filesystem::path& stem, const TrainHistory& h, Format f);
void write_metrics(const std::filesystem::path& stem, const std::vector<MetricRow>& rows, Format f);

// Writes text to path through a temporary sibling, so a crash never leaves a
// half-written file under the final name.
void write_file(const std::filesystem::path& path, const std::string& text);

double mean(const std::vector<double>& v);
double stddev(const std::vector<double>& v);  // sample std, 0 for fewer than two values

}  // namespace concf::cli
