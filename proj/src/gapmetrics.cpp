#include "glad/gapmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "glad/debias.hpp"
#include "glad/error.hpp"

namespace glad::metrics {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::shape_mismatch, "scene features differ in dimension");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

SceneFeatureSet normalize(SceneFeatureSet set) {
  for (auto& v : set.vectors) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw Error(ErrorCode::invalid_argument, "scene feature cannot be normalised (zero vector)");
    for (double& x : v) x /= norm;
  }
  set.normalized = true;
  return set;
}

double scene_distance(const SceneFeatureSet& source, const SceneFeatureSet& target) {
  if (source.vectors.empty() || target.vectors.empty())
    throw Error(ErrorCode::invalid_argument, "scene_distance needs two non-empty sets");
  const SceneFeatureSet u = source.normalized ? source : normalize(source);
  const SceneFeatureSet v = target.normalized ? target : normalize(target);
  const std::size_t ls = u.vectors.size();
  const std::size_t lt = v.vectors.size();
  std::vector<double> row_min(ls, std::numeric_limits<double>::infinity());
  std::vector<double> col_min(lt, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < ls; ++i) {
    for (std::size_t j = 0; j < lt; ++j) {
      const double d = 1.0 - dot(u.vectors[i], v.vectors[j]);
      row_min[i] = std::min(row_min[i], d);
      col_min[j] = std::min(col_min[j], d);
    }
  }
  const double forward = std::accumulate(row_min.begin(), row_min.end(), 0.0) / static_cast<double>(ls);
  const double backward = std::accumulate(col_min.begin(), col_min.end(), 0.0) / static_cast<double>(lt);
  return 0.5 * (forward + backward);
}

double temporal_distance(std::span<const double> lengths_p, std::span<const double> lengths_q) {
  if (lengths_p.empty() || lengths_q.empty())
    throw Error(ErrorCode::invalid_argument, "temporal_distance needs two non-empty samples");
  std::vector<double> p(lengths_p.begin(), lengths_p.end());
  std::vector<double> q(lengths_q.begin(), lengths_q.end());
  for (double x : p)
    if (!(x >= 0.0)) throw Error(ErrorCode::invalid_argument, "lengths must be >= 0");
  for (double x : q)
    if (!(x >= 0.0)) throw Error(ErrorCode::invalid_argument, "lengths must be >= 0");
  std::sort(p.begin(), p.end());
  std::sort(q.begin(), q.end());

  // Walk the merged breakpoints; both CDFs are constant between them.
  const double np = static_cast<double>(p.size());
  const double nq = static_cast<double>(q.size());
  std::size_t i = 0, j = 0;
  double total = 0.0;
  double x_prev = std::min(p.front(), q.front());
  while (i < p.size() || j < q.size()) {
    double x_next;
    if (j >= q.size() || (i < p.size() && p[i] <= q[j]))
      x_next = p[i];
    else
      x_next = q[j];
    const double cdf_gap = std::abs(static_cast<double>(i) / np - static_cast<double>(j) / nq);
    total += cdf_gap * (x_next - x_prev);
    while (i < p.size() && p[i] == x_next) ++i;
    while (j < q.size() && q[j] == x_next) ++j;
    x_prev = x_next;
  }
  return total;
}

SceneFeatureSet scene_features(std::span<const synth::VideoSample> videos) {
  SceneFeatureSet set;
  set.vectors.reserve(videos.size());
  for (const auto& v : videos) {
    const auto bg = debias::extract_background_tmf(v);
    set.vectors.emplace_back(bg.begin(), bg.end());
  }
  return normalize(std::move(set));
}

std::vector<double> video_lengths(std::span<const synth::VideoSample> videos) {
  std::vector<double> out;
  out.reserve(videos.size());
  for (const auto& v : videos) out.push_back(static_cast<double>(v.length));
  return out;
}

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes == 0) throw Error(ErrorCode::invalid_argument, "confusion matrix needs >= 1 class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= n_ || predicted >= n_)
    throw Error(ErrorCode::invalid_argument, "class index out of range for the confusion matrix");
  ++counts_[truth * n_ + predicted];
}

std::size_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  return counts_.at(truth * n_ + predicted);
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t c = 0; c < n_; ++c) s += at(truth, c);
  return s;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::size_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.size())
      throw Error(ErrorCode::shape_mismatch, "confusion matrix must be square");
    for (std::size_t c = 0; c < rows.size(); ++c) cm.counts_[r * cm.n_ + c] = rows[r][c];
  }
  return cm;
}

double mean_class_accuracy(const ConfusionMatrix& cm) {
  double acc = 0.0;
  for (std::size_t k = 0; k < cm.n_classes(); ++k) {
    const std::size_t n = cm.row_sum(k);
    if (n == 0) throw Error(ErrorCode::invalid_argument, "class " + std::to_string(k) + " has no samples");
    acc += static_cast<double>(cm.at(k, k)) / static_cast<double>(n);
  }
  return 100.0 * acc / static_cast<double>(cm.n_classes());
}

double accuracy_gap(double mca_supervised_target, double mca_source_only) {
  for (double v : {mca_supervised_target, mca_source_only})
    if (!(v >= 0.0 && v <= 100.0)) throw Error(ErrorCode::invalid_argument, "accuracies must lie in [0, 100]");
  return mca_supervised_target - mca_source_only;
}

GapReport gap_report(std::span<const synth::VideoSample> source,
                     std::span<const synth::VideoSample> target,
                     std::optional<double> mca_supervised_target, std::optional<double> mca_source_only) {
  GapReport report;
  report.delta_bg = scene_distance(scene_features(source), scene_features(target));
  const auto lp = video_lengths(source);
  const auto lq = video_lengths(target);
  report.delta_temp = temporal_distance(lp, lq);
  report.n_source = source.size();
  report.n_target = target.size();
  report.mean_length_source = std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size());
  report.mean_length_target = std::accumulate(lq.begin(), lq.end(), 0.0) / static_cast<double>(lq.size());
  report.mca_supervised_target = mca_supervised_target;
  report.mca_source_only = mca_source_only;
  if (mca_supervised_target && mca_source_only)
    report.delta_acc = accuracy_gap(*mca_supervised_target, *mca_source_only);
  return report;
}

config::Json to_json(const GapReport& report) {
  auto opt = [](const std::optional<double>& v) { return v ? config::Json(*v) : config::Json(nullptr); };
  return config::Json{{"delta_bg", report.delta_bg},
                      {"delta_temp", report.delta_temp},
                      {"delta_acc", opt(report.delta_acc)},
                      {"mca_source_only", opt(report.mca_source_only)},
                      {"mca_supervised_target", opt(report.mca_supervised_target)},
                      {"n_source", report.n_source},
                      {"n_target", report.n_target},
                      {"mean_length_source", report.mean_length_source},
                      {"mean_length_target", report.mean_length_target},
                      {"scene_feature", report.scene_feature}};
}

std::string format_table(const GapReport& report, const std::string& label) {
  char acc[32] = "-";
  if (report.delta_acc) std::snprintf(acc, sizeof(acc), "%.1f", *report.delta_acc);
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-24s %10s %10s %12s %10s\n", "Dataset", "# videos", "delta_bg",
                "delta_temp", "delta_acc");
  out += line;
  std::snprintf(line, sizeof(line), "%-24s %10zu %10.2f %12.1f %10s\n", label.c_str(),
                report.n_source + report.n_target, report.delta_bg, report.delta_temp, acc);
  out += line;
  return out;
}

}  // namespace glad::metrics
