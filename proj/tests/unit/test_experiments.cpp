#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <msmv/errors.hpp>
#include <msmv/experiments.hpp>

using namespace msmv;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "msmv");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::current_path() / "experiments_scratch" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_json(const fs::path& dir, const json& j) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t data_rows(const fs::path& csv) {
  std::ifstream is(csv);
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);) ++n;
  return n - 1;
}

json small_config() {
  return json{{"model", "linear"},
              {"linear", {{"x0", 0.5}, {"z0", 2.0}}},
              {"eps", {0.5, 0.1}},
              {"T", 0.2},
              {"dt", 0.02},
              {"particles", 100},
              {"filter_particles", 100},
              {"seeds", {1, 2, 3}}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST_CASE("empty document gives the defaults") {
  const auto c = ExperimentConfig::from_json(json::object());
  CHECK(c.model == "linear");
  CHECK(c.eps == std::vector<double>{0.5, 0.1, 0.02});
  CHECK(c.seeds == std::vector<std::uint64_t>{1});
  CHECK(c.resample == ResamplePolicy::EssThreshold);
}

TEST_CASE("materialized config round-trips") {
  auto j = small_config();
  j["filter"] = {{"resample", "never"}};
  const auto c = ExperimentConfig::from_json(j);
  CHECK(c.resample == ResamplePolicy::Never);
  CHECK(c.linear.z0 == 2.0);
  const auto full = c.to_json();
  CHECK(ExperimentConfig::from_json(full).to_json() == full);
}

TEST_CASE("unknown keys are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"epsilon", {0.1}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"linear", {{"alpha", 1.0}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"T", "long"}}), ConfigError);
}

TEST_CASE("config invariants") {
  auto bad = [](json patch) {
    auto j = small_config();
    j.merge_patch(patch);
    return ExperimentConfig::from_json(j);
  };
  CHECK_THROWS_AS(bad({{"eps", json::array()}}).validate(), ConfigError);
  CHECK_THROWS_AS(bad({{"eps", {1.5}}}).validate(), ConfigError);
  CHECK_THROWS_AS(bad({{"seeds", json::array()}}).validate(), ConfigError);
  CHECK_THROWS_AS(bad({{"T", 0.0}}).validate(), ConfigError);
  CHECK_THROWS_AS(bad({{"model", "cubic"}}).validate(), ConfigError);
  CHECK_THROWS_AS(bad({{"test_functions", {"cosh"}}}).validate(), ConfigError);
  CHECK_NOTHROW(bad(json::object()).validate());
}

TEST_CASE("missing config file names the path") {
  try {
    load_config("/nonexistent/run.json");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/run.json") != std::string::npos);
  }
}

TEST_CASE("median ignores non-finite entries") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(median({1.0, std::nan(""), 5.0}) == 3.0);
  CHECK(std::isnan(median({})));
}

// ---------------------------------------------------------------------------
// Sweeps

TEST_CASE("averaging sweep row count") {
  const auto cfg = ExperimentConfig::from_json(small_config());
  const auto rep = run_averaging_sweep(cfg);
  CHECK(rep.rows.size() == cfg.eps.size() * cfg.seeds.size() * cfg.grid().size());
  CHECK(rep.per_eps.size() == cfg.eps.size());
  CHECK(rep.noise_floor.size() == 1);
}

TEST_CASE("self-comparison stays below the noise floor") {
  auto j = small_config();
  j["eps"] = {0.1};
  j["averaging"] = {{"self_comparison", true}};
  const auto rep = run_averaging_sweep(ExperimentConfig::from_json(j));
  REQUIRE(rep.per_eps.size() == 1);
  CHECK(rep.noise_floor[0] > 0.0);
  CHECK(rep.per_eps[0].median_terminal_gap[0] < rep.noise_floor[0]);
}

TEST_CASE("filter sweep with a silent observation leaves both filters unweighted") {
  auto j = small_config();
  j["linear"]["gamma1"] = 0.0;
  j["filter_particles"] = 100;
  j["seeds"] = {4};
  j["eps"] = {0.5};
  const auto cfg = ExperimentConfig::from_json(j);
  const auto rep = run_filter_sweep(cfg);
  REQUIRE(rep.cells.size() == 1);
  CHECK(rep.cells[0].status == "ok");
  CHECK(rep.cells[0].rho_one_multiscale == 1.0);
  CHECK(rep.cells[0].rho_one_averaged == 1.0);
  CHECK(rep.cells[0].min_ess_multiscale == doctest::Approx(100.0));
}

// ---------------------------------------------------------------------------
// Command line

TEST_CASE("usage errors exit with 2") {
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"validate", "--no-such-flag"}) == 2);
  CHECK(run_cli({"frobnicate"}) == 2);
  CHECK(run_cli({"validate", "--config", "/nonexistent/run.json"}) == 2);
  const auto dir = scratch("bad");
  CHECK(run_cli({"validate", "--config", write_json(dir, json{{"typo", 1}}).string()}) == 2);
}

TEST_CASE("validate writes a report") {
  const auto dir = scratch("validate");
  CHECK(run_cli({"validate", "--model", "linear", "--config", write_json(dir, small_config()).string(), "--out",
                 dir.string()}) == 0);
  const auto report = json::parse(slurp(dir / "validation.json"));
  CHECK(report["model"] == "linear");
}

TEST_CASE("numeric blow-up exits with 3") {
  auto j = small_config();
  j["linear"]["a"] = -400.0;
  j["T"] = 1.0;
  const auto dir = scratch("blowup");
  CHECK(run_cli({"simulate", "--config", write_json(dir, j).string(), "--out", dir.string()}) == 3);
}

TEST_CASE("shipped linear demo sweep emits one gap row per cell") {
  const fs::path demo = fs::path(MSMV_SOURCE_DIR) / "configs" / "linear_demo.json";
  const auto dir = scratch("demo");
  REQUIRE(run_cli({"sweep-filter", "--config", demo.string(), "--out", dir.string()}) == 0);
  const auto cfg = load_config(demo);
  CHECK(data_rows(dir / "filter_gaps.csv") == cfg.eps.size() * cfg.seeds.size());
  CHECK(fs::exists(dir / "filter_gaps.csv.meta.json"));
  const auto meta = json::parse(slurp(dir / "filter_gaps.csv.meta.json"));
  CHECK(meta["rows"] == cfg.eps.size() * cfg.seeds.size());
}

TEST_CASE("outputs do not depend on the thread count") {
  const auto one = scratch("threads1"), many = scratch("threads4");
  const auto cfg = write_json(one, small_config()).string();
  REQUIRE(run_cli({"sweep-averaging", "--config", cfg, "--out", one.string(), "--threads", "1"}) == 0);
  REQUIRE(run_cli({"sweep-averaging", "--config", cfg, "--out", many.string(), "--threads", "4"}) == 0);
  CHECK(slurp(one / "averaging_sweep.csv") == slurp(many / "averaging_sweep.csv"));
}

TEST_CASE("json format replaces the csv tables") {
  const auto dir = scratch("format");
  REQUIRE(run_cli({"filter", "--config", write_json(dir, small_config()).string(), "--out", dir.string(), "--format",
                   "json"}) == 0);
  CHECK(fs::exists(dir / "filter_multiscale.json"));
  CHECK_FALSE(fs::exists(dir / "filter_multiscale.csv"));
  CHECK(fs::exists(dir / "kalman_bucy.json"));
}
