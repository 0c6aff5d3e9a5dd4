#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "glad/cli.hpp"
#include "glad/synthdata.hpp"
#include "glad/trainer.hpp"
#include "json.hpp"

using namespace glad;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("glad_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the tool with stdout and stderr captured.
struct Captured {
  int code = 0;
  std::string out, err;
};

Captured run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  Captured c;
  c.code = cli::run(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  c.out = out.str();
  c.err = err.str();
  return c;
}

// 20 + 20 training videos, 12 test videos per domain, small network.
fs::path small_config(const fs::path& dir) {
  const json cfg = {{"source", {{"n_videos", 20}}},
                    {"target", {{"n_videos", 20}}},
                    {"test_videos", 12},
                    {"train",
                     {{"warmup_epochs", 2},
                      {"main_epochs", 2},
                      {"batch_size", 4},
                      {"model", {{"frame_hidden", 16}, {"frame_out", 8}, {"feature_dim", 8}}}}}};
  const auto path = dir / "config.json";
  std::ofstream(path) << cfg.dump(2);
  return path;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == 1);
  CHECK(run({"bogus"}).code == 1);
  CHECK(run({"synth", "--no-such-flag"}).code == 1);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("synth --dry-run prints the spec and writes nothing") {
  const auto dir = scratch("dry");
  const auto c = run({"--out", (dir / "data").string(), "synth", "--dry-run"});
  CHECK(c.code == 0);
  CHECK(c.out.find("\"n_videos\": 600") != std::string::npos);
  CHECK(c.out.find("\"n_videos\": 300") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "data"));
}

TEST_CASE("synth is deterministic and writes the resolved config") {
  const auto dir = scratch("synth");
  const auto cfg = small_config(dir);
  REQUIRE(run({"--config", cfg.string(), "--out", (dir / "a").string(), "synth"}).code == 0);
  const auto c = run({"--config", cfg.string(), "--out", (dir / "b").string(), "synth"});
  REQUIRE(c.code == 0);
  CHECK(c.out.find("planted shifts") != std::string::npos);
  for (const char* sub : {"source", "target", "source/test", "target/test"}) {
    CHECK(slurp(dir / "a" / sub / "frames.bin") == slurp(dir / "b" / sub / "frames.bin"));
    CHECK(slurp(dir / "a" / sub / "manifest.json") == slurp(dir / "b" / sub / "manifest.json"));
  }
  CHECK(synth::read_dataset(dir / "a" / "source").size() == 20);
  CHECK(synth::read_dataset(dir / "a" / "target" / "test").size() == 12);
  const auto saved = cli::load_experiment_config(dir / "a" / "config.json");
  CHECK(saved.paths.source_dir == (dir / "a" / "source").string());
  CHECK(saved.source.n_videos == 20);

  // A different seed changes the data.
  REQUIRE(run({"--config", cfg.string(), "--seed", "9", "--out", (dir / "c").string(), "synth"}).code == 0);
  CHECK(slurp(dir / "a" / "source" / "frames.bin") != slurp(dir / "c" / "source" / "frames.bin"));
}

TEST_CASE("default synth writes 600 and 300 videos") {
  const auto dir = scratch("default");
  REQUIRE(run({"--out", dir.string(), "synth"}).code == 0);
  CHECK(synth::read_dataset(dir / "source").size() == 600);
  CHECK(synth::read_dataset(dir / "target").size() == 300);

  const auto c = run({"--out", (dir / "gap").string(), "gap", "--source", (dir / "source").string(), "--target",
                      (dir / "target").string(), "--mca-sup", "76.7", "--mca-src", "11.7"});
  REQUIRE(c.code == 0);
  const auto report = json::parse(slurp(dir / "gap" / "gap.json"));
  CHECK(report.at("delta_temp").get<double>() >= 24.0);
  CHECK(report.at("delta_acc").get<double>() == doctest::Approx(65.0).epsilon(1e-12));
  CHECK(c.out.find("65.0") != std::string::npos);

  const auto self = run({"--out", (dir / "self").string(), "gap", "--source", (dir / "source").string(), "--target",
                         (dir / "source").string()});
  REQUIRE(self.code == 0);
  const auto zero = json::parse(slurp(dir / "self" / "gap.json"));
  CHECK(std::abs(zero.at("delta_bg").get<double>()) < 1e-12);
  CHECK(zero.at("delta_temp").get<double>() == 0.0);
  CHECK(zero.at("delta_acc").is_null());
}

TEST_CASE("missing or damaged datasets exit 2") {
  const auto dir = scratch("missing");
  const auto c = run({"gap", "--source", (dir / "nope").string(), "--target", (dir / "nope2").string()});
  CHECK(c.code == 2);
  CHECK(c.err.find("i/o error") != std::string::npos);
  CHECK(run({"eval", "--checkpoint", (dir / "none").string(), "--dataset", (dir / "none").string()}).code == 2);

  REQUIRE(run({"--config", small_config(dir).string(), "--out", (dir / "d").string(), "synth"}).code == 0);
  fs::resize_file(dir / "d" / "source" / "frames.bin", 100);
  CHECK(run({"gap", "--source", (dir / "d" / "source").string(), "--target", (dir / "d" / "target").string()}).code ==
        2);
}

TEST_CASE("config schema violations are listed by field path") {
  const auto dir = scratch("schema");
  const json bad = {{"train", {{"batch_size", -1}, {"lr", 0.1}}},
                    {"source", {{"bias", "high"}}},
                    {"extra", true}};
  std::ofstream(dir / "bad.json") << bad.dump();
  const auto c = run({"--config", (dir / "bad.json").string(), "synth", "--dry-run"});
  CHECK(c.code == 1);
  for (const char* path : {"train.batch_size", "train.lr", "source.bias", "extra"})
    CHECK(c.err.find(path) != std::string::npos);

  std::ofstream(dir / "broken.json") << "{";
  CHECK(run({"--config", (dir / "broken.json").string(), "synth", "--dry-run"}).code == 1);
  try {
    cli::experiment_config_from_json(json{{"seeds", "1,2"}});
    FAIL("bad seeds accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::config_error);
    CHECK(std::string(e.what()).find("seeds") != std::string::npos);
  }
}

TEST_CASE("experiment config round trip") {
  cli::ExperimentConfig cfg;
  cfg.seeds = {4, 5, 6};
  cfg.train.main_epochs = 7;
  cfg.target.n_videos = 33;
  const auto back = cli::experiment_config_from_json(cli::to_json(cfg));
  CHECK(cli::to_json(back) == cli::to_json(cfg));
  CHECK(cli::test_split(cfg.source, 12).split == "test");
  CHECK(cli::test_split(cfg.source, 12).n_videos == 12);
}

TEST_CASE("shipped benchmark config matches the benchmark preset") {
  const auto cfg = cli::load_experiment_config(fs::path(GLAD_TOOLS_DIR) / "benchmark.json");
  CHECK(trainer::to_json(cfg.train) == trainer::to_json(trainer::benchmark_train_config()));
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
}

TEST_CASE("smoke run: synth, train and eval in under a minute") {
  const auto dir = scratch("smoke");
  const auto cfg = small_config(dir).string();
  const auto start = std::chrono::steady_clock::now();
  REQUIRE(run({"--config", cfg, "--out", (dir / "data").string(), "synth"}).code == 0);
  const std::string data_cfg = (dir / "data" / "config.json").string();
  const auto t = run({"--config", data_cfg, "--out", (dir / "run").string(), "train"});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("final target-test MCA") != std::string::npos);
  const auto csv = slurp(dir / "run" / "report.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(fs::exists(dir / "run" / "config.json"));
  CHECK(fs::exists(dir / "run" / "final.bin"));
  CHECK(fs::exists(dir / "run" / "backgrounds" / "backgrounds.bin"));

  const auto e = run({"--config", data_cfg, "--out", (dir / "eval").string(), "eval", "--checkpoint",
                      (dir / "run").string()});
  REQUIRE(e.code == 0);
  const auto result = json::parse(slurp(dir / "eval" / "eval.json"));
  CHECK(result.at("confusion").size() == 12);
  CHECK(result.at("mca").get<double>() >= 0.0);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 60.0);

  // Same config and seed: identical per-epoch report.
  REQUIRE(run({"--config", data_cfg, "--out", (dir / "run2").string(), "train"}).code == 0);
  CHECK(slurp(dir / "run2" / "report.csv") == csv);
}

TEST_CASE("diverging training exits 3") {
  const auto dir = scratch("diverge");
  REQUIRE(run({"--config", small_config(dir).string(), "--out", (dir / "data").string(), "synth"}).code == 0);
  auto cfg = json::parse(slurp(dir / "data" / "config.json"));
  cfg["train"]["learning_rate"] = 1e12;
  cfg["train"]["warmup_epochs"] = 0;
  std::ofstream(dir / "diverge.json") << cfg.dump();
  CHECK(run({"--config", (dir / "diverge.json").string(), "--out", (dir / "run").string(), "train"}).code == 3);
}

TEST_CASE("ablate writes a mean +- std table") {
  const auto dir = scratch("ablate");
  REQUIRE(run({"--config", small_config(dir).string(), "--out", (dir / "data").string(), "synth"}).code == 0);
  auto cfg = json::parse(slurp(dir / "data" / "config.json"));
  cfg["train"]["warmup_epochs"] = 1;
  cfg["train"]["main_epochs"] = 1;
  std::ofstream(dir / "ablate.json") << cfg.dump();
  const auto c = run({"--config", (dir / "ablate.json").string(), "--out", (dir / "out").string(), "ablate"});
  REQUIRE(c.code == 0);
  const auto table = slurp(dir / "out" / "ablation.txt");
  CHECK(table.rfind("target-test MCA (%), mean +- population std over seeds", 0) == 0);
  for (const char* name : {"source-only", "dann", "gla-only", "debias-only", "full-glad", "supervised-target"})
    CHECK(table.find(name) != std::string::npos);
  CHECK(table.find(" +- ") != std::string::npos);
  const auto rows = json::parse(slurp(dir / "out" / "ablation.json"));
  CHECK(rows.at("rows").size() == 6);
  CHECK(rows.at("rows")[0].at("mca").size() == 3);
}

TEST_CASE("the installed binary reports exit codes") {
  const char* bin = std::getenv("GLAD_BIN");
  if (bin == nullptr) return;
  const auto dir = scratch("bin");
  const std::string cmd = std::string(bin) + " gap --source " + (dir / "x").string() + " --target " +
                          (dir / "y").string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 2);
}
