#pragma once

// Domain-gap measurements: scene distance between feature sets, earth mover's
// distance between video-length distributions, accuracy gap, and mean class
// accuracy.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "glad/config.hpp"
#include "glad/synthdata.hpp"

namespace glad::metrics {

struct SceneFeatureSet {
  std::vector<std::vector<double>> vectors;
  bool normalized = false;
};

// Scales every vector to unit L2 norm. A zero vector is rejected.
SceneFeatureSet normalize(SceneFeatureSet set);

// 1/2 [ mean_i min_j d(u_i, v_j) + mean_j min_i d(u_i, v_j) ], d(u, v) = 1 - u.v,
// on unit-normalised vectors.
double scene_distance(const SceneFeatureSet& source, const SceneFeatureSet& target);

// Integral of |CDF_p(x) - CDF_q(x)| for the two empirical distributions.
double temporal_distance(std::span<const double> lengths_p, std::span<const double> lengths_q);

// Scene feature of a video: its temporal-median background, L2-normalised.
SceneFeatureSet scene_features(std::span<const synth::VideoSample> videos);
std::vector<double> video_lengths(std::span<const synth::VideoSample> videos);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes);

  void add(std::size_t truth, std::size_t predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const;
  std::size_t row_sum(std::size_t truth) const;
  std::size_t n_classes() const { return n_; }
  std::size_t total() const;

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows);

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

// Percent. Rejects a class with no samples, naming it.
double mean_class_accuracy(const ConfusionMatrix& cm);

// Supervised-target minus source-only, in percentage points.
double accuracy_gap(double mca_supervised_target, double mca_source_only);

struct GapReport {
  double delta_bg = 0.0;
  double delta_temp = 0.0;
  std::optional<double> delta_acc;
  std::optional<double> mca_source_only;
  std::optional<double> mca_supervised_target;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  double mean_length_source = 0.0;
  double mean_length_target = 0.0;
  std::string scene_feature = "tmf-background-l2";
};

GapReport gap_report(std::span<const synth::VideoSample> source,
                     std::span<const synth::VideoSample> target,
                     std::optional<double> mca_supervised_target = std::nullopt,
                     std::optional<double> mca_source_only = std::nullopt);

config::Json to_json(const GapReport& report);
// Aligned text table: Dataset | # videos | delta_bg | delta_temp | delta_acc.
std::string format_table(const GapReport& report, const std::string& label);

}  // namespace glad::metrics
