#include <catch_amalgamated.hpp>

#include <filesystem>
#include <string>

#include "chebqr/config.hpp"
#include "chebqr/run.hpp"

using namespace chebqr;
using nlohmann::json;

namespace {

std::string config_error(const json& file, const json& overrides) {
  try {
    (void)resolve_config(file, overrides);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    return e.what();
  }
  FAIL("expected a config error");
  return {};
}

}  // namespace

TEST_CASE("defaults resolve", "[config]") {
  const auto c = resolve_config(nullptr, nullptr);
  CHECK(model_name(c.model) == "ours-q0");
  CHECK(c.model.degree == 64);
  CHECK(c.train.max_epochs == 2000);
  CHECK(c.train.patience == 200);
  CHECK(c.train.adam.learning_rate == 1e-3);
  CHECK(resolved_split(c.data) == "glasses");
  CHECK(c.model.hidden == std::vector<std::size_t>{120, 60, 10});
}

TEST_CASE("flags override the file, which overrides defaults", "[config]") {
  const json file{{"seed", 9}, {"model", {{"degree", 32}, {"model", "iqn"}}}, {"train", {{"patience", 7}}}};
  const json flags{{"model", {{"degree", 16}}}};
  const auto c = resolve_config(file, flags);
  CHECK(c.seed == 9);
  CHECK(c.model.degree == 16);
  CHECK(c.model.family == Family::IQN);
  CHECK(c.train.patience == 7);
  CHECK(c.train.batch_size == 128);
}

TEST_CASE("architecture presets", "[config]") {
  const json csv{{"data", {{"source", "data/engel.csv"}}}};
  CHECK(resolve_config(csv, {{"model", {{"model", "iqn"}}}}).model.hidden == std::vector<std::size_t>{200});
  CHECK(resolve_config(csv, {{"model", {{"model", "ours-mean"}}}}).model.hidden == std::vector<std::size_t>{100});
  CHECK(resolve_config(csv, {{"preset", "glasses"}}).model.hidden == std::vector<std::size_t>{120, 60, 10});
  CHECK(resolve_config(csv, {{"model", {{"hidden", {7, 3}}}}}).model.hidden == std::vector<std::size_t>{7, 3});
  CHECK(config_error(csv, {{"preset", "huge"}}).find("'preset'") != std::string::npos);
}

TEST_CASE("invalid fields are named", "[config]") {
  CHECK(config_error({{"train", {{"batch_size", "x"}}}}, nullptr).find("'train.batch_size'") != std::string::npos);
  CHECK(config_error({{"model", {{"model", "nope"}}}}, nullptr).find("'model.model'") != std::string::npos);
  CHECK(config_error(nullptr, {{"model", {{"model", "nam"}, {"degree", 7}}}}).find("'model.degree'") !=
        std::string::npos);
  CHECK(config_error(nullptr, {{"data", {{"split", "other"}}}}).find("'data.split'") != std::string::npos);
  CHECK(config_error(nullptr, {{"fold", 3}}).find("'fold'") != std::string::npos);
  CHECK(config_error(nullptr, {{"model", {{"monotone_fraction", 1.5}}}}).find("monotone_fraction") !=
        std::string::npos);
  CHECK(config_error(nullptr, {{"eval", {{"grid", "100"}}}}).find("'eval.grid'") != std::string::npos);
  CHECK(config_error(json::array(), nullptr).find("JSON object") != std::string::npos);
}

TEST_CASE("echoed config resolves to itself", "[config][property]") {
  for (const std::string name : {"ours-q0", "ours-mean", "nam", "iqn", "iqn-p", "iqn-d", "pcdn", "normal"}) {
    const auto c = resolve_config(nullptr, {{"model", {{"model", name}}}, {"seed", 17}});
    const json echo = config_to_json(c);
    CHECK(config_to_json(resolve_config(echo, nullptr)) == echo);
  }
}

TEST_CASE("load_run rejects a checkpoint from another config", "[config]") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "chebqr_test_config_run";
  fs::remove_all(dir);
  const auto c = resolve_config(nullptr, {{"model", {{"degree", 8}, {"hidden", {4}}}}, {"train", {{"max_epochs", 1}}}});
  (void)train_to_dir(c, dir);
  CHECK_NOTHROW(load_run(dir));
  auto other = config_to_json(c);
  other["model"]["degree"] = 16;
  write_file_atomic(dir / "other.json", other.dump());
  try {
    (void)load_run(dir, dir / "other.json");
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
    CHECK(std::string(e.what()).find("/model/degree") != std::string::npos);
  }
  // Eval settings do not affect the trained weights.
  other = config_to_json(c);
  other["eval"]["loglik_n_bins"] = 10;
  write_file_atomic(dir / "eval.json", other.dump());
  CHECK(load_run(dir, dir / "eval.json").config.eval.loglik.n_bins == 10);
  fs::remove_all(dir);
}
