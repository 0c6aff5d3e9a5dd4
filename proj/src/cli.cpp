#include "glad/cli.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "binary_io.hpp"
#include "glad/debias.hpp"
#include "glad/error.hpp"
#include "glad/gapmetrics.hpp"
#include "glad/model.hpp"

namespace glad::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::io_error:
    case ErrorCode::corrupted_header:
    case ErrorCode::truncated_frame_data:
    case ErrorCode::manifest_mismatch:
      return exit_io;
    case ErrorCode::numeric_failure:
      return exit_numeric;
    case ErrorCode::invalid_argument:
    case ErrorCode::shape_mismatch:
    case ErrorCode::config_error:
      return exit_usage;
  }
  return exit_usage;
}

config::Json to_json(const ExperimentConfig& cfg) {
  return config::Json{{"paths",
                       {{"source_dir", cfg.paths.source_dir},
                        {"target_dir", cfg.paths.target_dir},
                        {"out_dir", cfg.paths.out_dir}}},
                      {"train", trainer::to_json(cfg.train)},
                      {"source", synth::to_json(cfg.source)},
                      {"target", synth::to_json(cfg.target)},
                      {"test_videos", cfg.test_videos},
                      {"seeds", cfg.seeds}};
}

ExperimentConfig experiment_config_from_json(const config::Json& doc) {
  ExperimentConfig cfg;
  config::FieldErrors errors;
  if (!doc.is_object()) {
    errors.add("config", "expected a JSON object");
    errors.throw_if_any();
  }
  config::reject_unknown(doc, {"paths", "train", "source", "target", "test_videos", "seeds"}, "", errors);
  if (doc.contains("paths")) {
    const auto& p = doc.at("paths");
    if (!p.is_object()) {
      errors.add("paths", "expected an object");
    } else {
      config::reject_unknown(p, {"source_dir", "target_dir", "out_dir"}, "paths", errors);
      config::read(p, "source_dir", "paths", cfg.paths.source_dir, errors);
      config::read(p, "target_dir", "paths", cfg.paths.target_dir, errors);
      config::read(p, "out_dir", "paths", cfg.paths.out_dir, errors);
    }
  }
  if (doc.contains("train")) cfg.train = trainer::train_config_from_json(doc.at("train"), "train", errors);
  if (doc.contains("source")) cfg.source = synth::domain_spec_from_json(doc.at("source"), "source", cfg.source, errors);
  if (doc.contains("target")) cfg.target = synth::domain_spec_from_json(doc.at("target"), "target", cfg.target, errors);
  config::read(doc, "test_videos", "", cfg.test_videos, errors);
  config::read(doc, "seeds", "", cfg.seeds, errors);
  if (cfg.test_videos == 0) errors.add("test_videos", "must be >= 1");
  if (cfg.source.domain != synth::Domain::source) errors.add("source.domain", "must be \"source\"");
  if (cfg.target.domain != synth::Domain::target) errors.add("target.domain", "must be \"target\"");
  errors.throw_if_any();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  config::Json doc;
  try {
    doc = config::Json::parse(detail::read_text(path));
  } catch (const config::Json::exception& e) {
    throw Error(ErrorCode::config_error, path.string() + ": " + e.what());
  }
  return experiment_config_from_json(doc);
}

synth::DomainSpec test_split(const synth::DomainSpec& train, std::size_t n_videos) {
  synth::DomainSpec spec = train;
  spec.split = "test";
  spec.n_videos = n_videos;
  return spec;
}

fs::path test_dir(const fs::path& dataset_dir) { return dataset_dir / "test"; }

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> config;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg = g.config ? load_experiment_config(*g.config) : ExperimentConfig{};
  if (g.out) cfg.paths.out_dir = *g.out;
  if (g.seed) {
    cfg.source.seed = *g.seed;
    cfg.target.seed = *g.seed + 1;
    cfg.train.seed = *g.seed;
  }
  return cfg;
}

void save_resolved(const ExperimentConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  detail::write_text(out_dir / "config.json", to_json(cfg).dump(2) + "\n");
}

std::string shift_summary(const synth::Dataset& source, const synth::Dataset& target) {
  const auto report = metrics::gap_report(source.videos, target.videos);
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "planted shifts: background bias rho=%.2f (source) vs checkerboard (target); "
                "lengths [%zu,%zu] vs [%zu,%zu]\n"
                "delta_bg=%.4f delta_temp=%.2f frames (mean length %.1f vs %.1f)\n",
                source.manifest.spec.bias, source.manifest.spec.length_min, source.manifest.spec.length_max,
                target.manifest.spec.length_min, target.manifest.spec.length_max, report.delta_bg,
                report.delta_temp, report.mean_length_source, report.mean_length_target);
  return buf;
}

int cmd_synth(const Globals& g, bool dry_run) {
  const ExperimentConfig cfg = resolve(g);
  cfg.source.validate();
  cfg.target.validate();
  const fs::path out = cfg.paths.out_dir;
  if (dry_run) {
    std::cout << to_json(cfg).dump(2) << "\n";
    std::cout << "dry run: would write " << (out / "source").string() << " (" << cfg.source.n_videos << " + "
              << cfg.test_videos << " test) and " << (out / "target").string() << " (" << cfg.target.n_videos
              << " + " << cfg.test_videos << " test)\n";
    return exit_ok;
  }
  const auto source = synth::generate_domain(cfg.source);
  const auto target = synth::generate_domain(cfg.target);
  synth::write_dataset(source, out / "source");
  synth::write_dataset(target, out / "target");
  synth::write_dataset(synth::generate_domain(test_split(cfg.source, cfg.test_videos)), test_dir(out / "source"));
  synth::write_dataset(synth::generate_domain(test_split(cfg.target, cfg.test_videos)), test_dir(out / "target"));
  ExperimentConfig saved = cfg;
  saved.paths.source_dir = (out / "source").string();
  saved.paths.target_dir = (out / "target").string();
  save_resolved(saved, out);
  std::cout << "source: " << source.videos.size() << " videos -> " << (out / "source").string() << "\n";
  std::cout << "target: " << target.videos.size() << " videos -> " << (out / "target").string() << "\n";
  std::cout << shift_summary(source, target);
  return exit_ok;
}

int cmd_gap(const Globals& g, std::string source_dir, std::string target_dir, std::optional<double> mca_sup,
            std::optional<double> mca_src) {
  const ExperimentConfig cfg = resolve(g);
  if (source_dir.empty()) source_dir = cfg.paths.source_dir;
  if (target_dir.empty()) target_dir = cfg.paths.target_dir;
  const auto source = synth::read_dataset(source_dir);
  const auto target = synth::read_dataset(target_dir);
  const auto report = metrics::gap_report(source.videos, target.videos, mca_sup, mca_src);
  std::cout << metrics::format_table(report, fs::path(source_dir).filename().string() + "->" +
                                                 fs::path(target_dir).filename().string());
  const auto json = metrics::to_json(report);
  std::cout << json.dump(2) << "\n";
  if (g.out) {
    fs::create_directories(*g.out);
    detail::write_text(fs::path(*g.out) / "gap.json", json.dump(2) + "\n");
  }
  return exit_ok;
}

std::vector<synth::VideoSample> concat(const std::vector<synth::VideoSample>& a,
                                       const std::vector<synth::VideoSample>& b) {
  std::vector<synth::VideoSample> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

int cmd_train(const Globals& g, std::string source_dir, std::string target_dir, bool supervised_target) {
  ExperimentConfig cfg = resolve(g);
  if (!source_dir.empty()) cfg.paths.source_dir = source_dir;
  if (!target_dir.empty()) cfg.paths.target_dir = target_dir;
  const auto source = synth::read_dataset(cfg.paths.source_dir);
  const auto target = synth::read_dataset(cfg.paths.target_dir);
  std::optional<synth::Dataset> target_test;
  if (fs::exists(test_dir(cfg.paths.target_dir) / "manifest.json"))
    target_test = synth::read_dataset(test_dir(cfg.paths.target_dir));
  const auto bank = debias::build_background_bank(concat(source.videos, target.videos));

  const fs::path out = cfg.paths.out_dir;
  save_resolved(cfg, out);
  debias::write_bank(bank, out / "backgrounds");

  trainer::TrainData data;
  data.source = supervised_target ? std::span<const synth::VideoSample>(target.videos)
                                  : std::span<const synth::VideoSample>(source.videos);
  data.target = target.videos;
  if (target_test) data.target_eval = target_test->videos;
  data.bank = &bank;
  trainer::Trainer t(cfg.train, data);
  t.set_workers(trainer::workers_from_env());
  const auto report = trainer::train(t, out);
  const auto& last = report.epochs.empty() ? trainer::EpochStats{} : report.epochs.back();
  std::cout << "trained " << report.epochs.size() << " epochs; checkpoint " << report.checkpoint << "\n";
  if (last.target_mca) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "final target-test MCA %.2f\n", *last.target_mca);
    std::cout << buf;
  }
  std::cout << "report: " << (out / "report.csv").string() << "\n";
  return exit_ok;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& stem, std::string dataset) {
  const ExperimentConfig cfg = resolve(g);
  const fs::path ckpt = checkpoint.empty() ? fs::path(cfg.paths.out_dir) : fs::path(checkpoint);
  if (dataset.empty()) dataset = test_dir(cfg.paths.target_dir).string();
  const auto model = model::GladModel::load(ckpt, stem);
  const auto data = synth::read_dataset(dataset);
  const auto result = trainer::evaluate(model, data.videos, trainer::workers_from_env());
  char buf[64];
  std::snprintf(buf, sizeof(buf), "MCA %.2f on %zu videos", result.mca, data.videos.size());
  std::cout << buf << " (" << dataset << ")\n";
  config::Json rows = config::Json::array();
  for (std::size_t r = 0; r < result.confusion.n_classes(); ++r) {
    std::vector<std::size_t> row;
    for (std::size_t c = 0; c < result.confusion.n_classes(); ++c) row.push_back(result.confusion.at(r, c));
    rows.push_back(row);
  }
  const config::Json json{{"mca", result.mca}, {"dataset", dataset}, {"checkpoint", ckpt.string()}, {"confusion", rows}};
  if (g.out) {
    fs::create_directories(*g.out);
    detail::write_text(fs::path(*g.out) / "eval.json", json.dump(2) + "\n");
  }
  return exit_ok;
}

int cmd_ablate(const Globals& g, bool with_views, bool with_grid) {
  const ExperimentConfig cfg = resolve(g);
  const auto source = synth::read_dataset(cfg.paths.source_dir);
  const auto target = synth::read_dataset(cfg.paths.target_dir);
  const auto target_test = synth::read_dataset(test_dir(cfg.paths.target_dir));
  const auto bank = debias::build_background_bank(concat(source.videos, target.videos));

  auto settings = trainer::default_ablation_settings();
  if (with_views) {
    const auto v = trainer::view_ablation_settings();
    settings.insert(settings.end(), v.begin(), v.end());
  }
  if (with_grid) {
    const std::vector<std::size_t> counts{0, 1, 2};
    const auto grid = trainer::clip_count_settings(counts, counts);
    settings.insert(settings.end(), grid.begin(), grid.end());
  }
  trainer::AblationData data{source.videos, target.videos, target_test.videos, &bank};
  const auto rows = trainer::run_ablation_matrix(cfg.train, data, settings, cfg.seeds, trainer::workers_from_env());
  const std::string table = trainer::format_ablation_table(rows);
  std::cout << table;
  const fs::path out = cfg.paths.out_dir;
  save_resolved(cfg, out);
  detail::write_text(out / "ablation.txt", table);
  detail::write_text(out / "ablation.json", trainer::to_json(rows).dump(2) + "\n");
  return exit_ok;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"GLAD video domain adaptation lab"};
  app.fallthrough();
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  std::string out, config_path;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for data generation and training");
  auto* out_opt = app.add_option("--out", out, "Output directory");
  auto* config_opt = app.add_option("--config", config_path, "Experiment config (JSON)");

  auto* synth = app.add_subcommand("synth", "Generate source and target datasets");
  bool dry_run = false;
  synth->add_flag("--dry-run", dry_run, "Print the resolved spec, write nothing");

  auto* gap = app.add_subcommand("gap", "Measure domain gaps between two datasets");
  std::string gap_source, gap_target;
  std::optional<double> mca_sup, mca_src;
  gap->add_option("--source", gap_source, "Source dataset directory");
  gap->add_option("--target", gap_target, "Target dataset directory");
  gap->add_option("--mca-sup", mca_sup, "Supervised-target MCA, for delta_acc");
  gap->add_option("--mca-src", mca_src, "Source-only MCA, for delta_acc");

  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_source, train_target;
  bool supervised = false;
  train->add_option("--source", train_source, "Source dataset directory");
  train->add_option("--target", train_target, "Target dataset directory");
  train->add_flag("--supervised-target", supervised, "Train on the labeled target split (upper bound)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, stem = "final", dataset;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory (holds model.json)");
  eval->add_option("--stem", stem, "Checkpoint file stem");
  eval->add_option("--dataset", dataset, "Labeled dataset directory");

  auto* ablate = app.add_subcommand("ablate", "Run the ablation matrix over seeds");
  bool views = false, grid = false;
  ablate->add_flag("--views", views, "Add alignment view subsets");
  ablate->add_flag("--grid", grid, "Add the global/local clip-count grid");

  std::vector<std::string> argv_storage{"glad"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }
  if (*seed_opt) g.seed = seed;
  if (*out_opt) g.out = out;
  if (*config_opt) g.config = config_path;

  try {
    if (*synth) return cmd_synth(g, dry_run);
    if (*gap) return cmd_gap(g, gap_source, gap_target, mca_sup, mca_src);
    if (*train) return cmd_train(g, train_source, train_target, supervised);
    if (*eval) return cmd_eval(g, checkpoint, stem, dataset);
    if (*ablate) return cmd_ablate(g, views, grid);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_io;
  }
  return exit_usage;
}

}  // namespace glad::cli
