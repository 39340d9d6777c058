#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "concf/trainer.hpp"

using namespace concf;

TEST_CASE("defaults round-trip through text") {
  const TrainConfig d;
  CHECK(config_to_text(parse_config(config_to_text(d))) == config_to_text(d));
  CHECK(d.effective_length() == 100);
  CHECK(d.warmup_epochs() == 100);
}

TEST_CASE("non-default values round-trip through text") {
  TrainConfig c;
  c.mode = TrainMode::Single;
  c.single_head = Head::E;
  c.heads = {Head::B, Head::D};
  c.alpha = 0.1 / 3.0;
  c.sharing = SharingLevel::Full;
  c.balancing = false;
  c.balance_rule = BalanceRule::Additive;
  c.cf_e_columns = false;
  c.seeds = {4, 9, 2};
  const TrainConfig back = parse_config(config_to_text(c));
  CHECK(back.mode == TrainMode::Single);
  CHECK(back.single_head == Head::E);
  CHECK(back.heads == c.heads);
  CHECK(back.alpha == c.alpha);
  CHECK(back.sharing == SharingLevel::Full);
  CHECK_FALSE(back.balancing);
  CHECK(back.balance_rule == BalanceRule::Additive);
  CHECK_FALSE(back.cf_e_columns);
  CHECK(back.seeds == c.seeds);
}

TEST_CASE("comments, blanks, overrides and seed ranges") {
  const TrainConfig c = parse_config("# defaults below\n\nalpha = 0.5  # heavier\nseeds = 3..6\n");
  CHECK(c.alpha == 0.5);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4, 5, 6});
  TrainConfig over = c;
  apply_config_setting(over, "dim", "32");
  CHECK(over.dim == 32);
}

TEST_CASE("errors name the key or line") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("alpah = 1\n").find("'alpah'") != std::string::npos);
  CHECK(message("dim = lots\n").find("'dim'") != std::string::npos);
  CHECK(message("sharing = some\n").find("'sharing'") != std::string::npos);
  CHECK(message("alpha = 1\njust words\n").find("line 2") != std::string::npos);
  CHECK_THROWS(load_config(std::filesystem::temp_directory_path() / "concf_missing.cfg"));

  const auto path = std::filesystem::temp_directory_path() / "concf_test.cfg";
  std::ofstream(path) << "period = 4\n";
  CHECK(load_config(path).period == 4);
}
