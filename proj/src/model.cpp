#include "glad/model.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "glad/error.hpp"

namespace glad::model {

using diffnet::Activation;

void ModelConfig::validate() const {
  auto reject = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::invalid_argument, "model config " + field + ": " + why);
  };
  if (frame_dim == 0 || frame_hidden == 0 || frame_out == 0 || feature_dim == 0)
    reject("widths", "must be positive");
  if (n_classes < 2) reject("n_classes", "must be >= 2");
  if (tol_clips < 2 || tol_clips > 4) reject("tol_clips", "must be in [2, 4]");
  if (tol_hidden == 0) reject("tol_hidden", "must be positive");
  for (auto w : domain_hidden)
    if (w == 0) reject("domain_hidden", "widths must be positive");
  if (hidden_activation != Activation::relu && hidden_activation != Activation::tanh)
    reject("hidden_activation", "must be relu or tanh");
  if (clip_frames == 0) reject("clip_frames", "must be >= 1");
  if (local_stride == 0) reject("local_stride", "must be >= 1");
  if (inference_global + inference_local == 0) reject("inference views", "need at least one clip");
}

config::Json to_json(const ModelConfig& cfg) {
  return config::Json{{"frame_dim", cfg.frame_dim},
                      {"frame_hidden", cfg.frame_hidden},
                      {"frame_out", cfg.frame_out},
                      {"feature_dim", cfg.feature_dim},
                      {"n_classes", cfg.n_classes},
                      {"tol_clips", cfg.tol_clips},
                      {"tol_hidden", cfg.tol_hidden},
                      {"domain_hidden", cfg.domain_hidden},
                      {"hidden_activation", diffnet::to_string(cfg.hidden_activation)},
                      {"clip_frames", cfg.clip_frames},
                      {"local_stride", cfg.local_stride},
                      {"inference_global", cfg.inference_global},
                      {"inference_local", cfg.inference_local}};
}

ModelConfig model_config_from_json(const config::Json& object, const std::string& path,
                                   config::FieldErrors& errors) {
  ModelConfig cfg;
  config::reject_unknown(object,
                         {"frame_dim", "frame_hidden", "frame_out", "feature_dim", "n_classes",
                          "tol_clips", "tol_hidden", "domain_hidden", "hidden_activation",
                          "clip_frames", "local_stride", "inference_global", "inference_local"},
                         path, errors);
  config::read(object, "frame_dim", path, cfg.frame_dim, errors);
  config::read(object, "frame_hidden", path, cfg.frame_hidden, errors);
  config::read(object, "frame_out", path, cfg.frame_out, errors);
  config::read(object, "feature_dim", path, cfg.feature_dim, errors);
  config::read(object, "n_classes", path, cfg.n_classes, errors);
  config::read(object, "tol_clips", path, cfg.tol_clips, errors);
  config::read(object, "tol_hidden", path, cfg.tol_hidden, errors);
  config::read(object, "domain_hidden", path, cfg.domain_hidden, errors);
  std::string act = diffnet::to_string(cfg.hidden_activation);
  config::read(object, "hidden_activation", path, act, errors);
  if (act == "relu" || act == "tanh")
    cfg.hidden_activation = diffnet::activation_from_string(act);
  else
    errors.add(config::join_path(path, "hidden_activation"), "must be \"relu\" or \"tanh\"");
  config::read(object, "clip_frames", path, cfg.clip_frames, errors);
  config::read(object, "local_stride", path, cfg.local_stride, errors);
  config::read(object, "inference_global", path, cfg.inference_global, errors);
  config::read(object, "inference_local", path, cfg.inference_local, errors);
  if (errors.empty()) {
    try {
      cfg.validate();
    } catch (const Error& e) {
      errors.add(path, e.what());
    }
  }
  return cfg;
}

namespace {

std::vector<MlpSpec> architecture(const ModelConfig& cfg) {
  const Activation h = cfg.hidden_activation;
  std::vector<std::size_t> domain_widths{cfg.feature_dim};
  domain_widths.insert(domain_widths.end(), cfg.domain_hidden.begin(), cfg.domain_hidden.end());
  domain_widths.push_back(1);
  const auto domain = MlpSpec::uniform(domain_widths, h, Activation::sigmoid);
  return {
      MlpSpec::uniform({cfg.frame_dim, cfg.frame_hidden, cfg.frame_out}, h, h),
      MlpSpec::uniform({cfg.frame_out, cfg.feature_dim}, h, Activation::identity),
      MlpSpec::uniform({cfg.feature_dim, cfg.n_classes}, h, Activation::identity),
      MlpSpec::uniform({cfg.tol_clips * cfg.feature_dim, cfg.tol_hidden, sampling::factorial(cfg.tol_clips)},
                       h, Activation::identity),
      domain,
      domain,
      domain,
  };
}

const char* kBlockNames[] = {"frame", "proj", "action", "tol", "domain_global", "domain_local",
                             "domain_cross"};

std::vector<double> to_double(std::span<const float> frame) {
  return std::vector<double>(frame.begin(), frame.end());
}

}  // namespace

GladModel::GladModel(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto specs = architecture(cfg_);
  for (std::size_t b = 0; b < specs.size(); ++b) {
    auto part = diffnet::init_mlp(specs[b], kBlockNames[b], rng);
    params_.insert(params_.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  build_layout();
}

GladModel::GladModel(const ModelConfig& cfg, ParamList params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  build_layout();
}

void GladModel::build_layout() {
  const auto specs = architecture(cfg_);
  Block* blocks[] = {&frame_, &proj_, &action_, &tol_, &dom_g_, &dom_l_, &dom_x_};
  std::size_t offset = 0;
  for (std::size_t b = 0; b < specs.size(); ++b) {
    blocks[b]->spec = specs[b];
    blocks[b]->offset = offset;
    offset += specs[b].num_tensors();
  }
  if (params_.size() != offset)
    throw Error(ErrorCode::shape_mismatch, "model expects " + std::to_string(offset) + " tensors, got " +
                                               std::to_string(params_.size()));
  for (std::size_t b = 0; b < specs.size(); ++b) diffnet::check_params(blocks[b]->spec, block_params(*blocks[b]));
}

const Block& GladModel::domain_head(DomainHead head) const {
  switch (head) {
    case DomainHead::global: return dom_g_;
    case DomainHead::local: return dom_l_;
    case DomainHead::cross: return dom_x_;
  }
  return dom_g_;
}

std::span<const ParamTensor> GladModel::block_params(const Block& b) const {
  return std::span<const ParamTensor>(params_).subspan(b.offset, b.spec.num_tensors());
}

std::span<ParamTensor> GladModel::block_grads(const Block& b, ParamList& grads) {
  return std::span<ParamTensor>(grads).subspan(b.offset, b.spec.num_tensors());
}

void GladModel::save(const std::filesystem::path& directory, const std::string& stem) const {
  std::filesystem::create_directories(directory);
  diffnet::write_checkpoint(params_, directory / (stem + ".json"), directory / (stem + ".bin"));
  detail::write_text(directory / "model.json", to_json(cfg_).dump(2) + "\n");
}

GladModel GladModel::load(const std::filesystem::path& directory, const std::string& stem) {
  config::Json doc;
  try {
    doc = config::Json::parse(detail::read_text(directory / "model.json"));
  } catch (const config::Json::exception& e) {
    throw Error(ErrorCode::corrupted_header, "model.json: " + std::string(e.what()));
  }
  config::FieldErrors errors;
  const ModelConfig cfg = model_config_from_json(doc, "model", errors);
  errors.throw_if_any();
  return GladModel(cfg, diffnet::read_checkpoint(directory / (stem + ".json"), directory / (stem + ".bin")));
}

ClipTrace forward_clip(const GladModel& model, const synth::VideoSample& video,
                       const sampling::ClipIndices& clip) {
  const auto& frame = model.frame_encoder();
  if (video.dim != frame.spec.input_width())
    throw Error(ErrorCode::shape_mismatch, "video frames have " + std::to_string(video.dim) +
                                               " pixels, the encoder expects " +
                                               std::to_string(frame.spec.input_width()));
  if (clip.indices.empty()) throw Error(ErrorCode::invalid_argument, "empty clip");
  const auto frame_params = model.block_params(frame);
  ClipTrace trace;
  trace.frames.reserve(clip.indices.size());
  trace.pooled.assign(frame.spec.output_width(), 0.0);
  for (auto t : clip.indices) {
    if (t >= video.length) throw Error(ErrorCode::invalid_argument, "clip index beyond the video");
    const auto x = to_double(video.frame(t));
    trace.frames.push_back(diffnet::mlp_forward(frame.spec, frame_params, x));
    const auto& y = trace.frames.back().output();
    for (std::size_t i = 0; i < y.size(); ++i) trace.pooled[i] += y[i];
  }
  const double inv = 1.0 / static_cast<double>(clip.indices.size());
  for (double& v : trace.pooled) v *= inv;
  trace.projection = diffnet::mlp_forward(model.projection().spec, model.block_params(model.projection()),
                                          trace.pooled);
  return trace;
}

void backward_clip(const GladModel& model, const ClipTrace& trace, std::span<const double> dfeature,
                   ParamList& grads) {
  const auto& proj = model.projection();
  const auto dpooled = diffnet::mlp_backward(proj.spec, model.block_params(proj), trace.projection, dfeature,
                                             GladModel::block_grads(proj, grads));
  const double inv = 1.0 / static_cast<double>(trace.frames.size());
  std::vector<double> dframe(dpooled.size());
  for (std::size_t i = 0; i < dpooled.size(); ++i) dframe[i] = dpooled[i] * inv;
  const auto& frame = model.frame_encoder();
  const auto frame_params = model.block_params(frame);
  const auto frame_grads = GladModel::block_grads(frame, grads);
  for (const auto& ft : trace.frames)
    diffnet::mlp_backward(frame.spec, frame_params, ft, dframe, frame_grads, /*want_input_grad=*/false);
}

ClipFeature extract_clip_feature(const GladModel& model, const synth::VideoSample& video,
                                 const sampling::ClipIndices& clip) {
  ClipFeature out;
  out.vector = forward_clip(model, video, clip).feature();
  out.view = clip.view;
  out.domain = video.domain;
  return out;
}

ViewFeature aggregate_views(std::span<const ClipFeature> global_feats,
                            std::span<const ClipFeature> local_feats) {
  if (global_feats.empty() && local_feats.empty())
    throw Error(ErrorCode::invalid_argument, "aggregate_views needs at least one clip feature");
  auto mean = [](std::span<const ClipFeature> feats) {
    std::vector<double> acc;
    if (feats.empty()) return acc;
    acc.assign(feats.front().vector.size(), 0.0);
    for (const auto& f : feats) {
      if (f.vector.size() != acc.size()) throw Error(ErrorCode::shape_mismatch, "clip features differ in size");
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.vector[i];
    }
    for (double& v : acc) v /= static_cast<double>(feats.size());
    return acc;
  };
  ViewFeature out;
  out.psi_global = mean(global_feats);
  out.psi_local = mean(local_feats);
  out.m_global = global_feats.size();
  out.n_local = local_feats.size();
  return out;
}

double adversarial_loss_from_probs(std::span<const double> source_probs,
                                   std::span<const double> target_probs) {
  if (source_probs.empty() || source_probs.size() != target_probs.size())
    throw Error(ErrorCode::invalid_argument, "adversarial loss needs B >= 1 source and B target outputs");
  double acc = 0.0;
  for (double p : source_probs) acc += std::log(p);
  for (double p : target_probs) acc += std::log1p(-p);
  return -acc / (2.0 * static_cast<double>(source_probs.size()));
}

AdvItem adversarial_item(const GladModel& model, DomainHead head, std::span<const double> psi,
                         bool is_source, double scale, double grl_coeff, ParamList& grads) {
  const auto& block = model.domain_head(head);
  const auto params = model.block_params(block);
  // GRL forward is the identity.
  const auto trace = diffnet::mlp_forward(block.spec, params, diffnet::grl_forward(psi));
  const double z = trace.output_preactivation()[0];
  AdvItem item;
  item.prob = trace.output()[0];
  // -log sigmoid(z) = softplus(-z), -log(1 - sigmoid(z)) = softplus(z).
  item.loss = scale * (is_source ? diffnet::softplus(-z) : diffnet::softplus(z));
  const double dz = scale * (diffnet::sigmoid(z) - (is_source ? 1.0 : 0.0));
  const std::vector<double> upstream{dz};
  const auto dpsi = diffnet::mlp_backward_from_logits(block.spec, params, trace, upstream,
                                                      GladModel::block_grads(block, grads));
  item.feature_grad = diffnet::grl_backward(dpsi, grl_coeff);
  return item;
}

AdvResult domain_adv_loss(const GladModel& model, DomainHead head,
                          std::span<const std::vector<double>> psi_batch, double grl_coeff,
                          ParamList& grads) {
  if (psi_batch.empty() || psi_batch.size() % 2 != 0)
    throw Error(ErrorCode::invalid_argument, "adversarial batch must hold B >= 1 source and B target entries");
  const std::size_t b = psi_batch.size() / 2;
  const double scale = 1.0 / static_cast<double>(2 * b);
  AdvResult out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < psi_batch.size(); ++i) {
    const bool is_source = i < b;
    auto item = adversarial_item(model, head, psi_batch[i], is_source, scale, grl_coeff, grads);
    out.loss += item.loss;
    if ((item.prob > 0.5) == is_source) ++correct;
    out.feature_grads.push_back(std::move(item.feature_grad));
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(psi_batch.size());
  return out;
}

GlaResult gla_loss(const GladModel& model, std::span<const ViewFeature> source,
                   std::span<const ViewFeature> target, const GlaViews& views, double grl_coeff,
                   ParamList& grads) {
  if (source.empty() || source.size() != target.size())
    throw Error(ErrorCode::invalid_argument, "GLA needs B >= 1 source and B target videos");
  const std::size_t b = source.size();
  const std::size_t f = model.config().feature_dim;
  GlaResult out;
  auto zeros = [&] { return std::vector<std::vector<double>>(b, std::vector<double>(f, 0.0)); };
  out.dglobal_source = zeros();
  out.dlocal_source = zeros();
  out.dglobal_target = zeros();
  out.dlocal_target = zeros();

  auto run = [&](DomainHead head, auto src_member, auto tgt_member, double weight,
                 std::vector<std::vector<double>>& dsrc, std::vector<std::vector<double>>& dtgt, double& acc) {
    std::vector<std::vector<double>> batch;
    for (const auto& v : source) batch.push_back(v.*src_member);
    for (const auto& v : target) batch.push_back(v.*tgt_member);
    for (const auto& psi : batch)
      if (psi.size() != f) throw Error(ErrorCode::invalid_argument, "view feature missing for an enabled GLA term");
    auto res = domain_adv_loss(model, head, batch, grl_coeff, grads);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t k = 0; k < f; ++k) {
        dsrc[i][k] += weight * res.feature_grads[i][k];
        dtgt[i][k] += weight * res.feature_grads[b + i][k];
      }
    acc += weight * res.accuracy;
    return res.loss;
  };

  // Cross sub-terms are each scaled by 1/2; the classifier gradients are
  // accumulated unscaled by domain_adv_loss, so scale them through a scratch list.
  if (views.global) {
    out.term_global = run(DomainHead::global, &ViewFeature::psi_global, &ViewFeature::psi_global, 1.0,
                          out.dglobal_source, out.dglobal_target, out.acc_global);
  }
  if (views.local) {
    out.term_local = run(DomainHead::local, &ViewFeature::psi_local, &ViewFeature::psi_local, 1.0,
                         out.dlocal_source, out.dlocal_target, out.acc_local);
  }
  if (views.cross) {
    auto scratch = diffnet::zeros_like(grads);
    std::swap(scratch, grads);
    const double a = run(DomainHead::cross, &ViewFeature::psi_global, &ViewFeature::psi_local, 0.5,
                         out.dglobal_source, out.dlocal_target, out.acc_cross);
    const double c = run(DomainHead::cross, &ViewFeature::psi_local, &ViewFeature::psi_global, 0.5,
                         out.dlocal_source, out.dglobal_target, out.acc_cross);
    std::swap(scratch, grads);
    const auto& block = model.domain_head(DomainHead::cross);
    for (std::size_t t = block.offset; t < block.end(); ++t)
      for (std::size_t i = 0; i < grads[t].size(); ++i) grads[t].values[i] += 0.5 * scratch[t].values[i];
    out.term_cross = 0.5 * (a + c);
  }
  out.loss = out.term_global + out.term_local + out.term_cross;
  return out;
}

TolItem tol_item(const GladModel& model, std::span<const std::vector<double>> shuffled,
                 std::size_t perm_index, double scale, ParamList& grads) {
  const auto& block = model.tol_head();
  const std::size_t n = model.config().tol_clips;
  const std::size_t f = model.config().feature_dim;
  if (n > 4) throw Error(ErrorCode::invalid_argument, "clip-order prediction supports N <= 4");
  if (shuffled.size() != n) throw Error(ErrorCode::invalid_argument, "TOL needs exactly N clip features");
  std::vector<double> input;
  input.reserve(n * f);
  for (const auto& v : shuffled) {
    if (v.size() != f) throw Error(ErrorCode::shape_mismatch, "TOL clip feature has the wrong size");
    input.insert(input.end(), v.begin(), v.end());
  }
  const auto params = model.block_params(block);
  const auto trace = diffnet::mlp_forward(block.spec, params, input);
  auto ce = diffnet::softmax_cross_entropy(trace.output(), perm_index);
  TolItem item;
  item.loss = scale * ce.loss;
  item.predicted = argmax(trace.output());
  for (double& g : ce.grad) g *= scale;
  const auto dinput = diffnet::mlp_backward(block.spec, params, trace, ce.grad, GladModel::block_grads(block, grads));
  for (std::size_t j = 0; j < n; ++j)
    item.feature_grads.emplace_back(dinput.begin() + static_cast<std::ptrdiff_t>(j * f),
                                    dinput.begin() + static_cast<std::ptrdiff_t>((j + 1) * f));
  return item;
}

double tol_loss_from_probs(std::span<const std::vector<double>> probs, std::span<const std::size_t> labels,
                           std::size_t n_clips) {
  if (n_clips > 4) throw Error(ErrorCode::invalid_argument, "clip-order prediction supports N <= 4");
  if (probs.empty() || probs.size() != labels.size())
    throw Error(ErrorCode::invalid_argument, "one label per prediction row required");
  const double classes = static_cast<double>(sampling::factorial(n_clips));
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] >= probs[i].size()) throw Error(ErrorCode::invalid_argument, "label out of range");
    acc += std::log(probs[i][labels[i]]);
  }
  return -acc / (static_cast<double>(probs.size()) * classes);
}

TolResult tol_loss(const GladModel& model, std::span<const std::vector<std::vector<double>>> shuffled,
                   std::span<const std::size_t> perm_indices, ParamList& grads) {
  if (shuffled.empty() || shuffled.size() != perm_indices.size())
    throw Error(ErrorCode::invalid_argument, "one permutation label per sample required");
  const double classes = static_cast<double>(sampling::factorial(model.config().tol_clips));
  const double scale = 1.0 / (static_cast<double>(shuffled.size()) * classes);
  TolResult out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < shuffled.size(); ++i) {
    auto item = tol_item(model, shuffled[i], perm_indices[i], scale, grads);
    out.loss += item.loss;
    if (item.predicted == perm_indices[i]) ++correct;
    out.feature_grads.push_back(std::move(item.feature_grads));
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(shuffled.size());
  return out;
}

std::vector<double> classify_action(const GladModel& model, std::span<const double> feature) {
  const auto& block = model.action_head();
  return diffnet::mlp_forward(block.spec, model.block_params(block), feature).output();
}

std::vector<sampling::ClipIndices> inference_clips(const ModelConfig& cfg, std::size_t length) {
  std::vector<sampling::ClipIndices> clips;
  for (std::size_t m = 0; m < cfg.inference_global; ++m)
    clips.push_back(sampling::sample_global_clip(length, cfg.clip_frames, nullptr));
  auto locals = sampling::eval_local_clips(length, cfg.clip_frames, cfg.local_stride, cfg.inference_local);
  clips.insert(clips.end(), locals.begin(), locals.end());
  return clips;
}

std::vector<double> consensus_feature(const GladModel& model, const synth::VideoSample& video) {
  const auto clips = inference_clips(model.config(), video.length);
  std::vector<double> mean(model.config().feature_dim, 0.0);
  for (const auto& clip : clips) {
    const auto f = forward_clip(model, video, clip).feature();
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += f[i];
  }
  for (double& v : mean) v /= static_cast<double>(clips.size());
  return mean;
}

std::size_t consensus_inference(const GladModel& model, const synth::VideoSample& video) {
  return argmax(classify_action(model, consensus_feature(model, video)));
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::invalid_argument, "argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace glad::model
