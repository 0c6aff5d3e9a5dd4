#pragma once

// Training loop: clip-order warm-up, then CE + TOL with adversarial view
// alignment through the gradient reversal layer.
//
// Every random draw for a step is made up front into a BatchPlan from fixed
// per-purpose streams; gradient computation is then a pure function of the
// plan and the parameters, split per sample and reduced in a fixed order.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "glad/config.hpp"
#include "glad/debias.hpp"
#include "glad/diffnet.hpp"
#include "glad/gapmetrics.hpp"
#include "glad/model.hpp"
#include "glad/sampling.hpp"
#include "glad/synthdata.hpp"

namespace glad::trainer {

struct TrainConfig {
  std::size_t warmup_epochs = 20;
  // Warm-up length used at full scale; kept for reference, not used.
  std::size_t warmup_epochs_reference = 500;
  std::size_t main_epochs = 15;
  std::size_t batch_size = 16;
  double learning_rate = 2e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::size_t> lr_drop_epochs{5, 10};
  double lr_drop_factor = 10.0;
  double grl_coeff = 1.0;
  // Scale the reversal coefficient by 2 / (1 + exp(-10 p)) - 1, p the
  // fraction of main-phase steps done.
  bool grl_ramp = false;
  std::size_t global_views = 1;
  std::size_t local_views = 2;
  debias::AugmentationPolicy augmentation;
  bool use_bg_aug = true;
  bool use_tol = true;
  bool use_gla = true;
  model::GlaViews gla_views;
  std::uint64_t seed = 0;
  model::ModelConfig model;

  void validate() const;
};

// Settings for the end-to-end synthetic benchmark. The field defaults above
// follow the reference schedule, which underfits this network from scratch;
// the preset trains longer at a higher rate on smaller batches.
TrainConfig benchmark_train_config();

config::Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const config::Json& object, const std::string& path,
                                   config::FieldErrors& errors);

// Piecewise constant: lr / factor^k after the k-th drop epoch.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Reversal coefficient after `progress` (in [0, 1]) of the main phase.
double grl_coefficient_at(double progress, const TrainConfig& cfg);

struct TrainData {
  std::span<const synth::VideoSample> source;  // labeled
  std::span<const synth::VideoSample> target;  // labels never read
  // Labeled target split used only for per-epoch MCA reporting.
  std::span<const synth::VideoSample> target_eval;
  const debias::BackgroundBank* bank = nullptr;
};

// Everything random about one sample in one step.
struct SamplePlan {
  synth::VideoSample video;  // after background mixing, if drawn
  bool augmented = false;
  std::vector<sampling::ClipIndices> global_clips;
  std::vector<sampling::ClipIndices> local_clips;
  std::vector<sampling::ClipIndices> order_clips;  // temporal order
  sampling::PermutationLabel permutation;
};

struct BatchPlan {
  std::vector<SamplePlan> source;
  std::vector<SamplePlan> target;
};

enum class Phase { warmup, main };

// Which losses a step optimises.
struct Objective {
  bool ce = true;
  bool tol = true;
  bool gla = true;
  model::GlaViews views;
  double grl_coeff = 1.0;

  static Objective warmup();
  static Objective main(const TrainConfig& cfg);
};

struct StepStats {
  double l_ce = 0.0;
  double l_tol = 0.0;
  double l_gla = 0.0;
  // The alignment terms making up l_gla.
  double gla_global = 0.0, gla_local = 0.0, gla_cross = 0.0;
  double acc_global = 0.0;
  double acc_local = 0.0;
  double acc_cross = 0.0;
  double tol_accuracy = 0.0;
};

struct StepResult {
  diffnet::ParamList grads;
  StepStats stats;
};

// Gradient of CE + TOL + sum of alignment terms, with the reversal layer
// between extractor and domain classifiers. Deterministic for any worker count.
StepResult compute_step(const model::GladModel& model, const BatchPlan& plan, const Objective& objective,
                        std::size_t workers = 1);

// Logged value of the saddle objective, L_CE + L_TOL - L_GLA.
double total_loss(const StepStats& s);

// Loops over a shuffled index order, reshuffling each time it wraps.
class Cycler {
 public:
  Cycler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t count);

 private:
  void reshuffle();

  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::mt19937_64 rng_;
};

struct EpochStats {
  std::size_t epoch = 0;  // consecutive over both phases
  Phase phase = Phase::main;
  double lr = 0.0;
  std::size_t steps = 0;
  StepStats mean;
  double l_total = 0.0;
  std::optional<double> target_mca;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::string checkpoint;
};

std::string report_csv(const TrainReport& report);
config::Json to_json(const TrainReport& report);

struct EvalResult {
  metrics::ConfusionMatrix confusion;
  double mca = 0.0;
};

EvalResult evaluate(const model::GladModel& model, std::span<const synth::VideoSample> dataset,
                    std::size_t workers = 1);

// Worker count from GLAD_WORKERS, default 1.
std::size_t workers_from_env();

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const TrainData& data);

  const model::GladModel& model() const { return model_; }
  model::GladModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t steps_per_epoch() const;

  BatchPlan draw_batch(Phase phase);
  // One optimiser step; returns the stats of the step.
  StepStats step(Phase phase, double lr);

  EpochStats warmup_epoch();
  EpochStats train_epoch(std::size_t main_epoch);

  void set_workers(std::size_t n) { workers_ = n; }

 private:
  SamplePlan plan_sample(const synth::VideoSample& video, bool with_views, bool with_order,
                         std::mt19937_64& clip_rng);

  TrainConfig cfg_;
  TrainData data_;
  model::GladModel model_;
  diffnet::SgdState sgd_;
  Cycler source_order_, target_order_;
  std::mt19937_64 source_clips_, target_clips_, aug_rng_, tol_rng_;
  std::size_t workers_ = 1;
  std::size_t epochs_done_ = 0;
  std::size_t main_steps_done_ = 0;
};

// Warm-up (when TOL is on) then the main phase. With `out_dir`, writes
// epoch_<k>.json/.bin, the final model, report.csv and report.json.
TrainReport train(Trainer& trainer, const std::optional<std::filesystem::path>& out_dir);

// Convenience: warm-up only, returning the model.
model::GladModel warmup_tol(const TrainConfig& cfg, const TrainData& data);

struct AblationSetting {
  std::string name;
  bool use_bg_aug = false;
  bool use_tol = false;
  bool use_gla = false;
  model::GlaViews views;
  std::size_t global_views = 1;
  std::size_t local_views = 2;
  // Train on the labeled target split instead of the source.
  bool supervised_target = false;
};

std::vector<AblationSetting> default_ablation_settings();
// View subsets of the alignment module, debias on.
std::vector<AblationSetting> view_ablation_settings();
// Global/local clip-count grid.
std::vector<AblationSetting> clip_count_settings(std::span<const std::size_t> m_values,
                                                 std::span<const std::size_t> n_values);

struct AblationRow {
  AblationSetting setting;
  std::vector<double> mca;  // one per seed
  double mean = 0.0;
  double std = 0.0;  // population formula
  double seconds = 0.0;
};

struct AblationData {
  std::span<const synth::VideoSample> source;
  std::span<const synth::VideoSample> target;
  std::span<const synth::VideoSample> target_test;
  const debias::BackgroundBank* bank = nullptr;
};

TrainConfig apply_setting(TrainConfig base, const AblationSetting& setting);

std::vector<AblationRow> run_ablation_matrix(const TrainConfig& base, const AblationData& data,
                                             std::span<const AblationSetting> settings,
                                             std::span<const std::uint64_t> seeds, std::size_t workers = 1);

std::string format_ablation_table(std::span<const AblationRow> rows);
config::Json to_json(std::span<const AblationRow> rows);

}  // namespace glad::trainer
