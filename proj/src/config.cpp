#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "concf/trainer.hpp"

namespace concf {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': cannot use '" + value + "' (" + why + ")");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad(key, value, "expected a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  bad(key, value, "expected on/off");
}

// "1,2,3" or "1..5"
std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& value) {
  std::vector<std::uint64_t> seeds;
  if (const auto dots = value.find(".."); dots != std::string::npos) {
    const auto lo = parse_number<std::uint64_t>(key, trim(value.substr(0, dots)));
    const auto hi = parse_number<std::uint64_t>(key, trim(value.substr(dots + 2)));
    if (hi < lo) bad(key, value, "empty range");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) seeds.push_back(parse_number<std::uint64_t>(key, trim(part)));
  if (seeds.empty()) bad(key, value, "no seeds");
  return seeds;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"mode",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "concf") c.mode = TrainMode::ConCF;
         else if (v == "single") c.mode = TrainMode::Single;
         else bad(k, v, "expected concf or single");
       }},
      {"head",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         try {
           c.single_head = parse_head(v);
         } catch (const std::exception& e) {
           bad(k, v, e.what());
         }
       }},
      {"heads",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         try {
           c.heads = parse_head_list(v);
         } catch (const std::exception& e) {
           bad(k, v, e.what());
         }
       }},
      {"alpha", [](TrainConfig& c, const std::string& k, const std::string& v) { c.alpha = parse_number<double>(k, v); }},
      {"temperature", [](TrainConfig& c, const std::string& k, const std::string& v) { c.temperature = parse_number<double>(k, v); }},
      {"top_n", [](TrainConfig& c, const std::string& k, const std::string& v) { c.list_n = parse_number<std::size_t>(k, v); }},
      {"period", [](TrainConfig& c, const std::string& k, const std::string& v) { c.period = parse_number<int>(k, v); }},
      {"queue_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.queue_size = parse_number<std::size_t>(k, v); }},
      {"max_rank", [](TrainConfig& c, const std::string& k, const std::string& v) { c.max_rank = parse_number<std::size_t>(k, v); }},
      {"consensus_length", [](TrainConfig& c, const std::string& k, const std::string& v) { c.consensus_length = parse_number<std::size_t>(k, v); }},
      {"learning_rate", [](TrainConfig& c, const std::string& k, const std::string& v) { c.learning_rate = parse_number<double>(k, v); }},
      {"weight_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_number<double>(k, v); }},
      {"batch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_number<std::size_t>(k, v); }},
      {"dim", [](TrainConfig& c, const std::string& k, const std::string& v) { c.dim = parse_number<int>(k, v); }},
      {"max_epochs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.max_epochs = parse_number<int>(k, v); }},
      {"patience", [](TrainConfig& c, const std::string& k, const std::string& v) { c.patience = parse_number<int>(k, v); }},
      {"sharing",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         try {
           c.sharing = parse_sharing_level(v);
         } catch (const std::exception& e) {
           bad(k, v, e.what());
         }
       }},
      {"balancing", [](TrainConfig& c, const std::string& k, const std::string& v) { c.balancing = parse_bool(k, v); }},
      {"balance_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.balance_lr = parse_number<double>(k, v); }},
      {"balance_sum", [](TrainConfig& c, const std::string& k, const std::string& v) { c.balance_sum = parse_number<double>(k, v); }},
      {"balance_rule",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "logsign") c.balance_rule = BalanceRule::LogSign;
         else if (v == "additive") c.balance_rule = BalanceRule::Additive;
         else bad(k, v, "expected logsign or additive");
       }},
      {"margin", [](TrainConfig& c, const std::string& k, const std::string& v) { c.margin = parse_number<double>(k, v); }},
      {"cf_e_columns", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cf_e_columns = parse_bool(k, v); }},
      {"eval_n", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eval_n = parse_number<std::size_t>(k, v); }},
      {"seeds", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seeds = parse_seeds(k, v); }},
      {"threads", [](TrainConfig& c, const std::string& k, const std::string& v) { c.threads = parse_number<unsigned>(k, v); }},
  };
  return table;
}

}  // namespace

void apply_config_setting(TrainConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  it->second(config, key, value);
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    apply_config_setting(base, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), std::move(base));
}

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "mode = " << (c.mode == TrainMode::ConCF ? "concf" : "single") << '\n'
      << "head = " << head_tag(c.single_head) << '\n'
      << "heads = " << head_list_string(c.heads) << '\n'
      << "alpha = " << c.alpha << '\n'
      << "temperature = " << c.temperature << '\n'
      << "top_n = " << c.list_n << '\n'
      << "period = " << c.period << '\n'
      << "queue_size = " << c.queue_size << '\n'
      << "max_rank = " << c.max_rank << '\n'
      << "consensus_length = " << c.consensus_length << '\n'
      << "learning_rate = " << c.learning_rate << '\n'
      << "weight_decay = " << c.weight_decay << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "dim = " << c.dim << '\n'
      << "max_epochs = " << c.max_epochs << '\n'
      << "patience = " << c.patience << '\n'
      << "sharing = " << sharing_level_name(c.sharing) << '\n'
      << "balancing = " << (c.balancing ? "on" : "off") << '\n'
      << "balance_lr = " << c.balance_lr << '\n'
      << "balance_sum = " << c.balance_sum << '\n'
      << "balance_rule = " << (c.balance_rule == BalanceRule::LogSign ? "logsign" : "additive") << '\n'
      << "margin = " << c.margin << '\n'
      << "cf_e_columns = " << (c.cf_e_columns ? "on" : "off") << '\n'
      << "eval_n = " << c.eval_n << '\n'
      << "seeds = ";
  for (std::size_t k = 0; k < c.seeds.size(); ++k) out << (k ? "," : "") << c.seeds[k];
  out << '\n' << "threads = " << c.threads << '\n';
  return out.str();
}

}  // namespace concf
