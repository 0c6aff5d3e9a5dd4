#include "glad/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <thread>

#include "binary_io.hpp"
#include "glad/error.hpp"

namespace glad::trainer {

namespace {

// Fixed offsets naming the independent random streams of a run.
enum Stream : std::uint32_t {
  stream_init = 1,
  stream_source_order = 2,
  stream_target_order = 3,
  stream_source_clips = 4,
  stream_target_clips = 5,
  stream_augment = 6,
  stream_order_task = 7,
};

std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) { return make_rng(seed, stream)(); }

std::vector<std::string> view_names(const model::GlaViews& v) {
  std::vector<std::string> out;
  if (v.global) out.push_back("gg");
  if (v.local) out.push_back("ll");
  if (v.cross) out.push_back("cross");
  return out;
}

const char* phase_name(Phase p) { return p == Phase::warmup ? "warmup" : "main"; }

}  // namespace

void TrainConfig::validate() const {
  auto reject = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::invalid_argument, "train config " + field + ": " + why);
  };
  if (batch_size == 0) reject("batch_size", "must be >= 1");
  if (!(learning_rate > 0.0)) reject("learning_rate", "must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) reject("momentum", "must be in [0, 1)");
  if (!(weight_decay >= 0.0)) reject("weight_decay", "must be >= 0");
  if (!(lr_drop_factor >= 1.0)) reject("lr_drop_factor", "must be >= 1");
  if (!(grl_coeff >= 0.0)) reject("grl_coeff", "must be >= 0");
  if (global_views + local_views == 0) reject("views", "need at least one global or local clip");
  if (use_gla) {
    if ((gla_views.global || gla_views.cross) && global_views == 0)
      reject("gla_views", "gg and cross alignment need global_views >= 1");
    if ((gla_views.local || gla_views.cross) && local_views == 0)
      reject("gla_views", "ll and cross alignment need local_views >= 1");
  }
  if (!(augmentation.probability >= 0.0 && augmentation.probability <= 1.0))
    reject("augmentation.probability", "must be in [0, 1]");
  if (!(augmentation.lambda >= 0.0 && augmentation.lambda <= 1.0))
    reject("augmentation.lambda", "must be in [0, 1]");
  model.validate();
}

config::Json to_json(const TrainConfig& cfg) {
  const auto& a = cfg.augmentation;
  return config::Json{
      {"warmup_epochs", cfg.warmup_epochs},
      {"warmup_epochs_reference", cfg.warmup_epochs_reference},
      {"main_epochs", cfg.main_epochs},
      {"batch_size", cfg.batch_size},
      {"learning_rate", cfg.learning_rate},
      {"momentum", cfg.momentum},
      {"weight_decay", cfg.weight_decay},
      {"lr_drop_epochs", cfg.lr_drop_epochs},
      {"lr_drop_factor", cfg.lr_drop_factor},
      {"grl_coeff", cfg.grl_coeff},
      {"grl_ramp", cfg.grl_ramp},
      {"global_views", cfg.global_views},
      {"local_views", cfg.local_views},
      {"augmentation",
       {{"probability", a.probability},
        {"lambda_mode", a.lambda_mode == debias::LambdaMode::fixed ? "fixed" : "uniform"},
        {"lambda", a.lambda},
        {"augment_source", a.augment_source},
        {"augment_target", a.augment_target}}},
      {"use_bg_aug", cfg.use_bg_aug},
      {"use_tol", cfg.use_tol},
      {"use_gla", cfg.use_gla},
      {"gla_views", view_names(cfg.gla_views)},
      {"seed", cfg.seed},
      {"model", model::to_json(cfg.model)},
  };
}

TrainConfig train_config_from_json(const config::Json& object, const std::string& path,
                                   config::FieldErrors& errors) {
  TrainConfig cfg;
  if (!object.is_object()) {
    errors.add(path.empty() ? "train" : path, "expected an object");
    return cfg;
  }
  config::reject_unknown(object,
                         {"warmup_epochs", "warmup_epochs_reference", "main_epochs", "batch_size",
                          "learning_rate", "momentum", "weight_decay", "lr_drop_epochs", "lr_drop_factor",
                          "grl_coeff", "grl_ramp", "global_views", "local_views", "augmentation", "use_bg_aug", "use_tol",
                          "use_gla", "gla_views", "seed", "model"},
                         path, errors);
  config::read(object, "warmup_epochs", path, cfg.warmup_epochs, errors);
  config::read(object, "warmup_epochs_reference", path, cfg.warmup_epochs_reference, errors);
  config::read(object, "main_epochs", path, cfg.main_epochs, errors);
  config::read(object, "batch_size", path, cfg.batch_size, errors);
  config::read(object, "learning_rate", path, cfg.learning_rate, errors);
  config::read(object, "momentum", path, cfg.momentum, errors);
  config::read(object, "weight_decay", path, cfg.weight_decay, errors);
  config::read(object, "lr_drop_epochs", path, cfg.lr_drop_epochs, errors);
  config::read(object, "lr_drop_factor", path, cfg.lr_drop_factor, errors);
  config::read(object, "grl_coeff", path, cfg.grl_coeff, errors);
  config::read(object, "grl_ramp", path, cfg.grl_ramp, errors);
  config::read(object, "global_views", path, cfg.global_views, errors);
  config::read(object, "local_views", path, cfg.local_views, errors);
  config::read(object, "use_bg_aug", path, cfg.use_bg_aug, errors);
  config::read(object, "use_tol", path, cfg.use_tol, errors);
  config::read(object, "use_gla", path, cfg.use_gla, errors);
  config::read(object, "seed", path, cfg.seed, errors);

  if (object.contains("augmentation")) {
    const auto& a = object.at("augmentation");
    const std::string ap = config::join_path(path, "augmentation");
    if (!a.is_object()) {
      errors.add(ap, "expected an object");
    } else {
      config::reject_unknown(a, {"probability", "lambda_mode", "lambda", "augment_source", "augment_target"}, ap,
                             errors);
      config::read(a, "probability", ap, cfg.augmentation.probability, errors);
      config::read(a, "lambda", ap, cfg.augmentation.lambda, errors);
      config::read(a, "augment_source", ap, cfg.augmentation.augment_source, errors);
      config::read(a, "augment_target", ap, cfg.augmentation.augment_target, errors);
      std::string mode = cfg.augmentation.lambda_mode == debias::LambdaMode::fixed ? "fixed" : "uniform";
      config::read(a, "lambda_mode", ap, mode, errors);
      if (mode == "fixed")
        cfg.augmentation.lambda_mode = debias::LambdaMode::fixed;
      else if (mode == "uniform")
        cfg.augmentation.lambda_mode = debias::LambdaMode::uniform;
      else
        errors.add(config::join_path(ap, "lambda_mode"), "must be \"fixed\" or \"uniform\"");
    }
  }

  if (object.contains("gla_views")) {
    std::vector<std::string> names;
    config::read(object, "gla_views", path, names, errors);
    model::GlaViews views{false, false, false};
    for (const auto& n : names) {
      if (n == "gg")
        views.global = true;
      else if (n == "ll")
        views.local = true;
      else if (n == "cross")
        views.cross = true;
      else
        errors.add(config::join_path(path, "gla_views"), "unknown view \"" + n + "\" (expected gg, ll, cross)");
    }
    cfg.gla_views = views;
  }

  if (object.contains("model")) cfg.model = model::model_config_from_json(object.at("model"), config::join_path(path, "model"), errors);

  if (errors.empty()) {
    try {
      cfg.validate();
    } catch (const Error& e) {
      errors.add(path.empty() ? "train" : path, e.what());
    }
  }
  return cfg;
}

TrainConfig benchmark_train_config() {
  TrainConfig cfg;
  cfg.main_epochs = 120;
  cfg.learning_rate = 5e-3;
  cfg.lr_drop_epochs = {40, 80};
  cfg.batch_size = 8;
  return cfg;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.learning_rate;
  for (auto drop : cfg.lr_drop_epochs)
    if (epoch >= drop) lr /= cfg.lr_drop_factor;
  return lr;
}

double grl_coefficient_at(double progress, const TrainConfig& cfg) {
  if (!cfg.grl_ramp) return cfg.grl_coeff;
  const double p = std::clamp(progress, 0.0, 1.0);
  return cfg.grl_coeff * (2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0);
}

Objective Objective::warmup() {
  Objective o;
  o.ce = false;
  o.tol = true;
  o.gla = false;
  return o;
}

Objective Objective::main(const TrainConfig& cfg) {
  Objective o;
  o.ce = true;
  o.tol = cfg.use_tol;
  o.gla = cfg.use_gla && cfg.gla_views.count() > 0;
  o.views = cfg.gla_views;
  o.grl_coeff = cfg.grl_coeff;
  return o;
}

double total_loss(const StepStats& s) { return s.l_ce + s.l_tol - s.l_gla; }

namespace {

struct SampleTally {
  double ce = 0.0, tol = 0.0, gla_global = 0.0, gla_local = 0.0, gla_cross = 0.0;
  std::size_t correct_global = 0, correct_local = 0, correct_cross = 0, correct_order = 0;

  void add(const SampleTally& o) {
    ce += o.ce;
    tol += o.tol;
    gla_global += o.gla_global;
    gla_local += o.gla_local;
    gla_cross += o.gla_cross;
    correct_global += o.correct_global;
    correct_local += o.correct_local;
    correct_cross += o.correct_cross;
    correct_order += o.correct_order;
  }
};

std::vector<double> mean_feature(const std::vector<model::ClipTrace>& traces, std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  if (traces.empty()) return m;
  for (const auto& t : traces)
    for (std::size_t i = 0; i < dim; ++i) m[i] += t.feature()[i];
  for (double& v : m) v /= static_cast<double>(traces.size());
  return m;
}

void add_scaled(std::vector<double>& dst, const std::vector<double>& src, double s) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

void sample_gradient(const model::GladModel& m, const SamplePlan& sp, bool is_source, std::size_t batch,
                     const Objective& obj, diffnet::ParamList& grads, SampleTally& tally) {
  const auto& mc = m.config();
  const std::size_t f = mc.feature_dim;
  const double b2 = 2.0 * static_cast<double>(batch);
  const bool need_ce = obj.ce && is_source;

  if (need_ce || obj.gla) {
    std::vector<model::ClipTrace> gt, lt;
    for (const auto& c : sp.global_clips) gt.push_back(model::forward_clip(m, sp.video, c));
    for (const auto& c : sp.local_clips) lt.push_back(model::forward_clip(m, sp.video, c));
    const auto psi_g = mean_feature(gt, f);
    const auto psi_l = mean_feature(lt, f);
    // Gradients w.r.t. every single global / local clip feature.
    std::vector<double> dg(f, 0.0), dl(f, 0.0);

    if (need_ce) {
      const double n_clips = static_cast<double>(gt.size() + lt.size());
      std::vector<double> consensus(f, 0.0);
      add_scaled(consensus, psi_g, static_cast<double>(gt.size()) / n_clips);
      add_scaled(consensus, psi_l, static_cast<double>(lt.size()) / n_clips);
      const auto& head = m.action_head();
      const auto params = m.block_params(head);
      const auto trace = diffnet::mlp_forward(head.spec, params, consensus);
      auto ce = diffnet::softmax_cross_entropy(trace.output(), sp.video.label);
      const double scale = 1.0 / static_cast<double>(batch);
      tally.ce += scale * ce.loss;
      for (double& g : ce.grad) g *= scale;
      const auto dcons = diffnet::mlp_backward(head.spec, params, trace, ce.grad,
                                               model::GladModel::block_grads(head, grads));
      add_scaled(dg, dcons, 1.0 / n_clips);
      add_scaled(dl, dcons, 1.0 / n_clips);
    }

    if (obj.gla) {
      const double scale = 1.0 / b2;
      auto term = [&](model::DomainHead head, const std::vector<double>& psi, double s, std::vector<double>& dclip,
                      std::size_t n_clips, std::size_t& correct, double& loss) {
        auto item = model::adversarial_item(m, head, psi, is_source, s, obj.grl_coeff, grads);
        loss += item.loss;
        if ((item.prob > 0.5) == is_source) ++correct;
        add_scaled(dclip, item.feature_grad, 1.0 / static_cast<double>(n_clips));
      };
      if (obj.views.global)
        term(model::DomainHead::global, psi_g, scale, dg, gt.size(), tally.correct_global, tally.gla_global);
      if (obj.views.local)
        term(model::DomainHead::local, psi_l, scale, dl, lt.size(), tally.correct_local, tally.gla_local);
      if (obj.views.cross) {
        // Appears once in each cross sub-batch, each weighted 1/2.
        term(model::DomainHead::cross, psi_g, 0.5 * scale, dg, gt.size(), tally.correct_cross, tally.gla_cross);
        term(model::DomainHead::cross, psi_l, 0.5 * scale, dl, lt.size(), tally.correct_cross, tally.gla_cross);
      }
    }

    for (const auto& t : gt) model::backward_clip(m, t, dg, grads);
    for (const auto& t : lt) model::backward_clip(m, t, dl, grads);
  }

  if (obj.tol) {
    const std::size_t n = mc.tol_clips;
    std::vector<model::ClipTrace> ot;
    std::vector<std::vector<double>> feats;
    for (const auto& c : sp.order_clips) {
      ot.push_back(model::forward_clip(m, sp.video, c));
      feats.push_back(ot.back().feature());
    }
    const auto& perm = sp.permutation.perm;
    const auto shuffled = sampling::apply_permutation(std::span<const std::vector<double>>(feats),
                                                      std::span<const std::size_t>(perm));
    const double scale = 1.0 / (b2 * static_cast<double>(sampling::factorial(n)));
    auto item = model::tol_item(m, shuffled, sp.permutation.index, scale, grads);
    tally.tol += item.loss;
    if (item.predicted == sp.permutation.index) ++tally.correct_order;
    for (std::size_t j = 0; j < n; ++j) model::backward_clip(m, ot[perm[j]], item.feature_grads[j], grads);
  }
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> failures(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : failures)
    if (e) std::rethrow_exception(e);
}

constexpr std::size_t kChunk = 4;

}  // namespace

StepResult compute_step(const model::GladModel& m, const BatchPlan& plan, const Objective& objective,
                        std::size_t workers) {
  const std::size_t b = plan.source.size();
  if (b == 0 || plan.target.size() != b)
    throw Error(ErrorCode::invalid_argument, "a step needs B >= 1 source and exactly B target samples");
  const std::size_t total = 2 * b;
  const std::size_t n_chunks = (total + kChunk - 1) / kChunk;
  std::vector<diffnet::ParamList> chunk_grads(n_chunks);
  std::vector<SampleTally> chunk_tally(n_chunks);
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    chunk_grads[c] = diffnet::zeros_like(m.params());
    for (std::size_t i = c * kChunk; i < std::min(total, (c + 1) * kChunk); ++i) {
      const bool is_source = i < b;
      const SamplePlan& sp = is_source ? plan.source[i] : plan.target[i - b];
      sample_gradient(m, sp, is_source, b, objective, chunk_grads[c], chunk_tally[c]);
    }
  });
  StepResult out;
  out.grads = std::move(chunk_grads[0]);
  SampleTally tally = chunk_tally[0];
  for (std::size_t c = 1; c < n_chunks; ++c) {
    diffnet::accumulate(out.grads, chunk_grads[c]);
    tally.add(chunk_tally[c]);
  }
  const double b2 = static_cast<double>(total);
  out.stats.l_ce = tally.ce;
  out.stats.l_tol = tally.tol;
  out.stats.gla_global = tally.gla_global;
  out.stats.gla_local = tally.gla_local;
  out.stats.gla_cross = tally.gla_cross;
  out.stats.l_gla = tally.gla_global + tally.gla_local + tally.gla_cross;
  out.stats.acc_global = static_cast<double>(tally.correct_global) / b2;
  out.stats.acc_local = static_cast<double>(tally.correct_local) / b2;
  out.stats.acc_cross = static_cast<double>(tally.correct_cross) / (2.0 * b2);
  out.stats.tol_accuracy = static_cast<double>(tally.correct_order) / b2;
  return out;
}

Cycler::Cycler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
  if (n == 0) throw Error(ErrorCode::invalid_argument, "cannot cycle over an empty dataset");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void Cycler::reshuffle() {
  // Fisher-Yates with an explicit uniform draw keeps the order portable.
  for (std::size_t i = order_.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order_[i - 1], order_[pick(rng_)]);
  }
  pos_ = 0;
}

std::vector<std::size_t> Cycler::next(std::size_t count) {
  std::vector<std::size_t> out;
  out.reserve(count);
  while (out.size() < count) {
    if (pos_ == order_.size()) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

std::string report_csv(const TrainReport& report) {
  std::string out = "epoch,phase,lr,steps,l_ce,l_tol,l_gla,l_total,acc_global,acc_local,acc_cross,tol_accuracy,target_mca\n";
  char line[512];
  for (const auto& e : report.epochs) {
    char mca[32] = "";
    if (e.target_mca) std::snprintf(mca, sizeof(mca), "%.17g", *e.target_mca);
    std::snprintf(line, sizeof(line), "%zu,%s,%.17g,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                  e.epoch, phase_name(e.phase), e.lr, e.steps, e.mean.l_ce, e.mean.l_tol, e.mean.l_gla, e.l_total,
                  e.mean.acc_global, e.mean.acc_local, e.mean.acc_cross, e.mean.tol_accuracy, mca);
    out += line;
  }
  return out;
}

config::Json to_json(const TrainReport& report) {
  config::Json epochs = config::Json::array();
  for (const auto& e : report.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"phase", phase_name(e.phase)},
                      {"lr", e.lr},
                      {"steps", e.steps},
                      {"l_ce", e.mean.l_ce},
                      {"l_tol", e.mean.l_tol},
                      {"l_gla", e.mean.l_gla},
                      {"l_total", e.l_total},
                      {"acc_global", e.mean.acc_global},
                      {"acc_local", e.mean.acc_local},
                      {"acc_cross", e.mean.acc_cross},
                      {"tol_accuracy", e.mean.tol_accuracy},
                      {"target_mca", e.target_mca ? config::Json(*e.target_mca) : config::Json(nullptr)}});
  }
  return config::Json{{"epochs", epochs}, {"checkpoint", report.checkpoint}};
}

EvalResult evaluate(const model::GladModel& m, std::span<const synth::VideoSample> dataset, std::size_t workers) {
  if (dataset.empty()) throw Error(ErrorCode::invalid_argument, "evaluation set is empty");
  std::vector<std::size_t> predicted(dataset.size());
  parallel_for(dataset.size(), workers, [&](std::size_t i) { predicted[i] = model::consensus_inference(m, dataset[i]); });
  EvalResult out{metrics::ConfusionMatrix(m.config().n_classes), 0.0};
  for (std::size_t i = 0; i < dataset.size(); ++i) out.confusion.add(dataset[i].label, predicted[i]);
  out.mca = metrics::mean_class_accuracy(out.confusion);
  return out;
}

std::size_t workers_from_env() {
  const char* v = std::getenv("GLAD_WORKERS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw Error(ErrorCode::invalid_argument, "GLAD_WORKERS must be a positive integer");
  return static_cast<std::size_t>(n);
}

namespace {

model::GladModel init_model(const TrainConfig& cfg) {
  cfg.validate();
  auto rng = make_rng(cfg.seed, stream_init);
  return model::GladModel(cfg.model, rng);
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, const TrainData& data)
    : cfg_(cfg),
      data_(data),
      model_(init_model(cfg)),
      sgd_(diffnet::SgdState::for_params(model_.params(), cfg.momentum, cfg.weight_decay, cfg.learning_rate)),
      source_order_(data.source.size(), derive_seed(cfg.seed, stream_source_order)),
      target_order_(data.target.size(), derive_seed(cfg.seed, stream_target_order)),
      source_clips_(make_rng(cfg.seed, stream_source_clips)),
      target_clips_(make_rng(cfg.seed, stream_target_clips)),
      aug_rng_(make_rng(cfg.seed, stream_augment)),
      tol_rng_(make_rng(cfg.seed, stream_order_task)) {
  for (auto* set : {&data_.source, &data_.target, &data_.target_eval})
    for (const auto& v : *set)
      if (v.dim != cfg_.model.frame_dim)
        throw Error(ErrorCode::shape_mismatch, "video " + v.video_id + " has " + std::to_string(v.dim) +
                                                   " pixels per frame, the model expects " +
                                                   std::to_string(cfg_.model.frame_dim));
  if (cfg_.use_bg_aug && (data_.bank == nullptr || data_.bank->empty()))
    throw Error(ErrorCode::invalid_argument, "background augmentation needs a non-empty background bank");
}

std::size_t Trainer::steps_per_epoch() const {
  const std::size_t n = std::min(data_.source.size(), data_.target.size());
  return (n + cfg_.batch_size - 1) / cfg_.batch_size;
}

SamplePlan Trainer::plan_sample(const synth::VideoSample& video, bool with_views, bool with_order,
                                std::mt19937_64& clip_rng) {
  SamplePlan sp;
  const auto& mc = cfg_.model;
  if (cfg_.use_bg_aug) {
    const auto draw = debias::draw_augmentation(video.domain, cfg_.augmentation, data_.bank->size(), aug_rng_);
    if (draw.apply) {
      sp.video = debias::mix_background(video, data_.bank->backgrounds[draw.background], draw.lambda);
      sp.augmented = true;
    }
  }
  if (!sp.augmented) sp.video = video;
  if (with_views) {
    for (std::size_t k = 0; k < cfg_.global_views; ++k)
      sp.global_clips.push_back(sampling::sample_global_clip(video.length, mc.clip_frames, &clip_rng));
    for (std::size_t k = 0; k < cfg_.local_views; ++k)
      sp.local_clips.push_back(sampling::sample_local_clip(video.length, mc.clip_frames, mc.local_stride, &clip_rng));
  }
  if (with_order) {
    sp.order_clips =
        sampling::sample_ordered_local_clips(video.length, mc.clip_frames, mc.local_stride, mc.tol_clips, &tol_rng_);
    sp.permutation = sampling::random_permutation(mc.tol_clips, tol_rng_);
  }
  return sp;
}

BatchPlan Trainer::draw_batch(Phase phase) {
  const Objective obj = phase == Phase::warmup ? Objective::warmup() : Objective::main(cfg_);
  const bool views = obj.ce || obj.gla;
  BatchPlan plan;
  for (auto i : source_order_.next(cfg_.batch_size))
    plan.source.push_back(plan_sample(data_.source[i], views, obj.tol, source_clips_));
  for (auto i : target_order_.next(cfg_.batch_size))
    plan.target.push_back(plan_sample(data_.target[i], obj.gla, obj.tol, target_clips_));
  return plan;
}

StepStats Trainer::step(Phase phase, double lr) {
  Objective obj = phase == Phase::warmup ? Objective::warmup() : Objective::main(cfg_);
  if (phase == Phase::main) {
    const double total = static_cast<double>(std::max<std::size_t>(1, cfg_.main_epochs * steps_per_epoch()));
    obj.grl_coeff = grl_coefficient_at(static_cast<double>(main_steps_done_) / total, cfg_);
    ++main_steps_done_;
  }
  const BatchPlan plan = draw_batch(phase);
  auto result = compute_step(model_, plan, obj, workers_);
  const double loss = total_loss(result.stats);
  if (!std::isfinite(loss)) throw Error(ErrorCode::numeric_failure, "non-finite training loss");
  sgd_.learning_rate = lr;
  diffnet::sgd_step(model_.params(), result.grads, sgd_);
  return result.stats;
}

namespace {

EpochStats run_epoch(Trainer& t, Phase phase, double lr, std::size_t index,
                     std::span<const synth::VideoSample> eval_set, std::size_t workers) {
  EpochStats e;
  e.epoch = index;
  e.phase = phase;
  e.lr = lr;
  e.steps = t.steps_per_epoch();
  for (std::size_t s = 0; s < e.steps; ++s) {
    const auto st = t.step(phase, lr);
    e.mean.l_ce += st.l_ce;
    e.mean.l_tol += st.l_tol;
    e.mean.l_gla += st.l_gla;
    e.mean.gla_global += st.gla_global;
    e.mean.gla_local += st.gla_local;
    e.mean.gla_cross += st.gla_cross;
    e.mean.acc_global += st.acc_global;
    e.mean.acc_local += st.acc_local;
    e.mean.acc_cross += st.acc_cross;
    e.mean.tol_accuracy += st.tol_accuracy;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, e.steps));
  for (double* v : {&e.mean.l_ce, &e.mean.l_tol, &e.mean.l_gla, &e.mean.gla_global, &e.mean.gla_local,
                    &e.mean.gla_cross, &e.mean.acc_global, &e.mean.acc_local,
                    &e.mean.acc_cross, &e.mean.tol_accuracy})
    *v /= n;
  e.l_total = total_loss(e.mean);
  if (!eval_set.empty()) e.target_mca = evaluate(t.model(), eval_set, workers).mca;
  return e;
}

}  // namespace

EpochStats Trainer::warmup_epoch() {
  auto e = run_epoch(*this, Phase::warmup, cfg_.learning_rate, epochs_done_, data_.target_eval, workers_);
  ++epochs_done_;
  return e;
}

EpochStats Trainer::train_epoch(std::size_t main_epoch) {
  auto e = run_epoch(*this, Phase::main, lr_at(main_epoch, cfg_), epochs_done_, data_.target_eval, workers_);
  ++epochs_done_;
  return e;
}

TrainReport train(Trainer& trainer, const std::optional<std::filesystem::path>& out_dir) {
  const auto& cfg = trainer.config();
  TrainReport report;
  auto checkpoint = [&](const EpochStats& e) {
    if (!out_dir) return;
    diffnet::write_checkpoint(trainer.model().params(), *out_dir / ("epoch_" + std::to_string(e.epoch) + ".json"),
                              *out_dir / ("epoch_" + std::to_string(e.epoch) + ".bin"));
  };
  if (out_dir) std::filesystem::create_directories(*out_dir);
  if (cfg.use_tol) {
    for (std::size_t k = 0; k < cfg.warmup_epochs; ++k) {
      report.epochs.push_back(trainer.warmup_epoch());
      checkpoint(report.epochs.back());
    }
  }
  for (std::size_t k = 0; k < cfg.main_epochs; ++k) {
    report.epochs.push_back(trainer.train_epoch(k));
    checkpoint(report.epochs.back());
  }
  if (out_dir) {
    trainer.model().save(*out_dir, "final");
    report.checkpoint = (*out_dir / "final").string();
    detail::write_text(*out_dir / "report.csv", report_csv(report));
    detail::write_text(*out_dir / "report.json", to_json(report).dump(2) + "\n");
  }
  return report;
}

model::GladModel warmup_tol(const TrainConfig& cfg, const TrainData& data) {
  Trainer t(cfg, data);
  for (std::size_t k = 0; k < cfg.warmup_epochs; ++k) t.warmup_epoch();
  return t.model();
}

std::vector<AblationSetting> default_ablation_settings() {
  const model::GlaViews all{true, true, true};
  const model::GlaViews none{false, false, false};
  const model::GlaViews gg{true, false, false};
  return {
      {"source-only", false, false, false, none, 1, 2, false},
      {"dann", false, false, true, gg, 1, 2, false},
      {"gla-only", false, false, true, all, 1, 2, false},
      {"debias-only", true, true, false, none, 1, 2, false},
      {"full-glad", true, true, true, all, 1, 2, false},
      {"supervised-target", false, false, false, none, 1, 2, true},
  };
}

std::vector<AblationSetting> view_ablation_settings() {
  std::vector<AblationSetting> out;
  for (int mask = 1; mask < 8; ++mask) {
    model::GlaViews v{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
    std::string name = "views";
    for (const auto& n : view_names(v)) name += "-" + n;
    out.push_back({name, true, true, true, v, 1, 2, false});
  }
  return out;
}

std::vector<AblationSetting> clip_count_settings(std::span<const std::size_t> m_values,
                                                 std::span<const std::size_t> n_values) {
  std::vector<AblationSetting> out;
  for (auto mg : m_values)
    for (auto nl : n_values) {
      if (mg + nl == 0) continue;
      model::GlaViews v{mg > 0, nl > 0, mg > 0 && nl > 0};
      out.push_back({"M" + std::to_string(mg) + "-N" + std::to_string(nl), true, true, true, v, mg, nl, false});
    }
  return out;
}

TrainConfig apply_setting(TrainConfig cfg, const AblationSetting& s) {
  cfg.use_bg_aug = s.use_bg_aug;
  cfg.use_tol = s.use_tol;
  cfg.use_gla = s.use_gla;
  cfg.gla_views = s.views;
  cfg.global_views = s.global_views;
  cfg.local_views = s.local_views;
  return cfg;
}

std::vector<AblationRow> run_ablation_matrix(const TrainConfig& base, const AblationData& data,
                                             std::span<const AblationSetting> settings,
                                             std::span<const std::uint64_t> seeds, std::size_t workers) {
  if (seeds.size() < 3) throw Error(ErrorCode::invalid_argument, "the ablation matrix needs at least 3 seeds");
  std::vector<AblationRow> rows;
  for (const auto& s : settings) {
    AblationRow row;
    row.setting = s;
    const auto start = std::chrono::steady_clock::now();
    for (auto seed : seeds) {
      TrainConfig cfg = apply_setting(base, s);
      cfg.seed = seed;
      TrainData td;
      td.source = s.supervised_target ? data.target : data.source;
      td.target = data.target;
      td.bank = data.bank;
      Trainer t(cfg, td);
      t.set_workers(workers);
      train(t, std::nullopt);
      row.mca.push_back(evaluate(t.model(), data.target_test, workers).mca);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double n = static_cast<double>(row.mca.size());
    row.mean = std::accumulate(row.mca.begin(), row.mca.end(), 0.0) / n;
    double var = 0.0;
    for (double v : row.mca) var += (v - row.mean) * (v - row.mean);
    row.std = std::sqrt(var / n);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::string out = "target-test MCA (%), mean +- population std over seeds\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %5s %5s %5s %-14s %3s %3s %16s %9s\n", "setting", "aug", "tol", "gla",
                "views", "M", "N", "MCA", "seconds");
  out += line;
  for (const auto& r : rows) {
    std::string views;
    for (const auto& n : view_names(r.setting.views)) views += (views.empty() ? "" : "+") + n;
    if (!r.setting.use_gla || views.empty()) views = "-";
    char mca[32];
    std::snprintf(mca, sizeof(mca), "%.1f +- %.1f", r.mean, r.std);
    std::snprintf(line, sizeof(line), "%-22s %5s %5s %5s %-14s %3zu %3zu %16s %9.1f\n", r.setting.name.c_str(),
                  r.setting.use_bg_aug ? "on" : "off", r.setting.use_tol ? "on" : "off",
                  r.setting.use_gla ? "on" : "off", views.c_str(), r.setting.global_views, r.setting.local_views, mca,
                  r.seconds);
    out += line;
  }
  return out;
}

config::Json to_json(std::span<const AblationRow> rows) {
  config::Json arr = config::Json::array();
  for (const auto& r : rows) {
    arr.push_back({{"setting", r.setting.name},
                   {"use_bg_aug", r.setting.use_bg_aug},
                   {"use_tol", r.setting.use_tol},
                   {"use_gla", r.setting.use_gla},
                   {"gla_views", view_names(r.setting.views)},
                   {"global_views", r.setting.global_views},
                   {"local_views", r.setting.local_views},
                   {"supervised_target", r.setting.supervised_target},
                   {"mca", r.mca},
                   {"mean", r.mean},
                   {"std", r.std},
                   {"seconds", r.seconds}});
  }
  return config::Json{{"std_formula", "population"}, {"rows", arr}};
}

}  // namespace glad::trainer
