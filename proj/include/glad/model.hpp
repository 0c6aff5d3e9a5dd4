#pragma once

// GLAD network: a per-frame encoder mean-pooled over each clip and
// projected to the clip feature, a linear action head, the clip-order head,
// and three domain classifiers (global-global, local-local, cross-view).
//
// Losses are exposed both batch-wise and per item. Per-item functions take
// the batch normalisation as `scale`, so summing items over a batch gives
// exactly the batch loss; the trainer uses them to split work by sample.

#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "glad/config.hpp"
#include "glad/diffnet.hpp"
#include "glad/sampling.hpp"
#include "glad/synthdata.hpp"

namespace glad::model {

using diffnet::MlpSpec;
using diffnet::MlpTrace;
using diffnet::ParamList;
using diffnet::ParamTensor;

struct ModelConfig {
  std::size_t frame_dim = 64;
  std::size_t frame_hidden = 64;
  std::size_t frame_out = 32;
  std::size_t feature_dim = 32;
  std::size_t n_classes = 12;
  std::size_t tol_clips = 3;
  std::size_t tol_hidden = 64;
  std::vector<std::size_t> domain_hidden{64, 64, 32};
  diffnet::Activation hidden_activation = diffnet::Activation::relu;
  // Clip geometry, shared by training and inference.
  std::size_t clip_frames = 8;
  std::size_t local_stride = 2;
  // Inference consensus: one global and two local clips.
  std::size_t inference_global = 1;
  std::size_t inference_local = 2;

  void validate() const;
};

config::Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const config::Json& object, const std::string& path,
                                   config::FieldErrors& errors);

enum class DomainHead { global, local, cross };

// A sub-network: its MLP shape and where its tensors start in the flat list.
struct Block {
  MlpSpec spec;
  std::size_t offset = 0;

  std::size_t end() const { return offset + spec.num_tensors(); }
};

class GladModel {
 public:
  GladModel(const ModelConfig& cfg, std::mt19937_64& rng);
  // Adopts `params`; names and shapes must match the architecture.
  GladModel(const ModelConfig& cfg, ParamList params);

  const ModelConfig& config() const { return cfg_; }
  ParamList& params() { return params_; }
  const ParamList& params() const { return params_; }

  const Block& frame_encoder() const { return frame_; }
  const Block& projection() const { return proj_; }
  const Block& action_head() const { return action_; }
  const Block& tol_head() const { return tol_; }
  const Block& domain_head(DomainHead head) const;

  std::span<const ParamTensor> block_params(const Block& b) const;
  static std::span<ParamTensor> block_grads(const Block& b, ParamList& grads);

  // Tensor index ranges of the parameter groups theta_f, theta_c,
  // theta_sigma and theta_d.
  struct Range {
    std::size_t begin = 0, end = 0;
  };
  Range extractor_range() const { return {frame_.offset, proj_.end()}; }
  Range action_range() const { return {action_.offset, action_.end()}; }
  Range tol_range() const { return {tol_.offset, tol_.end()}; }
  Range domain_range() const { return {dom_g_.offset, dom_x_.end()}; }

  void save(const std::filesystem::path& directory, const std::string& stem) const;
  static GladModel load(const std::filesystem::path& directory, const std::string& stem);

 private:
  void build_layout();

  ModelConfig cfg_;
  ParamList params_;
  Block frame_, proj_, action_, tol_, dom_g_, dom_l_, dom_x_;
};

struct ClipFeature {
  std::vector<double> vector;
  sampling::View view = sampling::View::global;
  synth::Domain domain = synth::Domain::source;
};

struct ViewFeature {
  std::vector<double> psi_global;
  std::vector<double> psi_local;
  std::size_t m_global = 0;
  std::size_t n_local = 0;
};

// Forward state of one clip for back-propagation.
struct ClipTrace {
  std::vector<MlpTrace> frames;
  std::vector<double> pooled;
  MlpTrace projection;

  const std::vector<double>& feature() const { return projection.output(); }
};

ClipTrace forward_clip(const GladModel& model, const synth::VideoSample& video,
                       const sampling::ClipIndices& clip);
// Adds extractor gradients for d(loss)/d(feature) into `grads`.
void backward_clip(const GladModel& model, const ClipTrace& trace, std::span<const double> dfeature,
                   ParamList& grads);

ClipFeature extract_clip_feature(const GladModel& model, const synth::VideoSample& video,
                                 const sampling::ClipIndices& clip);

// Arithmetic means per view; an empty view yields an empty vector.
ViewFeature aggregate_views(std::span<const ClipFeature> global_feats,
                            std::span<const ClipFeature> local_feats);

// -1/(2B) [ sum_{i<=B} log p_i + sum_{i>B} log(1 - p_i) ] from classifier
// outputs. Used where probabilities are given directly.
double adversarial_loss_from_probs(std::span<const double> source_probs,
                                   std::span<const double> target_probs);

struct AdvItem {
  double loss = 0.0;
  double prob = 0.0;                   // classifier output F(psi)
  std::vector<double> feature_grad;    // after the gradient reversal layer
};

// One term  -scale * log F(psi)  (source) or  -scale * log(1 - F(psi))
// (target), computed from the logit for stability.
AdvItem adversarial_item(const GladModel& model, DomainHead head, std::span<const double> psi,
                         bool is_source, double scale, double grl_coeff, ParamList& grads);

struct AdvResult {
  double loss = 0.0;
  double accuracy = 0.0;  // fraction of the 2B items classified to the right domain
  std::vector<std::vector<double>> feature_grads;
};

// psi_batch holds B source entries followed by B target entries.
AdvResult domain_adv_loss(const GladModel& model, DomainHead head,
                          std::span<const std::vector<double>> psi_batch, double grl_coeff,
                          ParamList& grads);

struct GlaViews {
  bool global = true;
  bool local = true;
  bool cross = true;

  std::size_t count() const { return std::size_t(global) + std::size_t(local) + std::size_t(cross); }
};

struct GlaResult {
  double loss = 0.0;
  double term_global = 0.0, term_local = 0.0, term_cross = 0.0;
  double acc_global = 0.0, acc_local = 0.0, acc_cross = 0.0;
  // d(L_GLA)/d(psi) after the reversal layer, per sample.
  std::vector<std::vector<double>> dglobal_source, dlocal_source, dglobal_target, dlocal_target;
};

// Sum of the enabled terms. The cross term averages two sub-batches through
// the cross classifier: {source global vs target local} and {source local vs
// target global}.
GlaResult gla_loss(const GladModel& model, std::span<const ViewFeature> source,
                   std::span<const ViewFeature> target, const GlaViews& views, double grl_coeff,
                   ParamList& grads);

struct TolItem {
  double loss = 0.0;
  std::size_t predicted = 0;
  // Gradients w.r.t. the shuffled clip features, in shuffled order.
  std::vector<std::vector<double>> feature_grads;
};

// -scale * log softmax(F_omega(concat(shuffled)))[label].
TolItem tol_item(const GladModel& model, std::span<const std::vector<double>> shuffled,
                 std::size_t perm_index, double scale, ParamList& grads);

// -1/(2B * N!) sum_i log p_i[label_i] from predicted order distributions;
// `probs.size()` is 2B.
double tol_loss_from_probs(std::span<const std::vector<double>> probs,
                           std::span<const std::size_t> labels, std::size_t n_clips);

struct TolResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::vector<std::vector<double>>> feature_grads;  // [sample][shuffled slot]
};

// `shuffled[i]` holds the N shuffled clip features of sample i; 2B samples.
TolResult tol_loss(const GladModel& model, std::span<const std::vector<std::vector<double>>> shuffled,
                   std::span<const std::size_t> perm_indices, ParamList& grads);

std::vector<double> classify_action(const GladModel& model, std::span<const double> feature);

// Deterministic inference clips: global centres plus evenly spaced locals.
std::vector<sampling::ClipIndices> inference_clips(const ModelConfig& cfg, std::size_t length);
std::vector<double> consensus_feature(const GladModel& model, const synth::VideoSample& video);
std::size_t consensus_inference(const GladModel& model, const synth::VideoSample& video);

std::size_t argmax(std::span<const double> values);

}  // namespace glad::model
