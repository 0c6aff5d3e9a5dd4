#pragma once

// Command-line driver: synth, gap, train, eval, ablate.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "glad/config.hpp"
#include "glad/synthdata.hpp"
#include "glad/trainer.hpp"

namespace glad::cli {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_io = 2, exit_numeric = 3 };

int exit_code_for(ErrorCode code);

struct Paths {
  std::string source_dir = "data/source";
  std::string target_dir = "data/target";
  std::string out_dir = "runs/default";
};

struct ExperimentConfig {
  Paths paths;
  trainer::TrainConfig train;
  synth::DomainSpec source = synth::DomainSpec::default_source();
  synth::DomainSpec target = synth::DomainSpec::default_target();
  std::size_t test_videos = 120;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

config::Json to_json(const ExperimentConfig& cfg);
// Throws Error(config_error) listing every schema violation by field path.
ExperimentConfig experiment_config_from_json(const config::Json& doc);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Test split of a training spec: same generator settings, its own videos.
synth::DomainSpec test_split(const synth::DomainSpec& train, std::size_t n_videos);
// Test sets live in <dataset>/test.
std::filesystem::path test_dir(const std::filesystem::path& dataset_dir);

// Runs the tool; `args` excludes the program name. Returns the exit code.
int run(const std::vector<std::string>& args);

}  // namespace glad::cli
