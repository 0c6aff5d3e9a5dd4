#pragma once

// Small random model/batch instances and finite-difference checks of the
// training gradients, shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "glad/diffnet.hpp"
#include "glad/model.hpp"
#include "glad/sampling.hpp"
#include "glad/synthdata.hpp"
#include "glad/trainer.hpp"

namespace glad::testing {

struct MicroInstance {
  model::ModelConfig cfg;
  model::GladModel model;
  trainer::BatchPlan plan;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline synth::VideoSample random_video(std::mt19937_64& rng, std::size_t dim, std::size_t n_classes,
                                       synth::Domain domain) {
  synth::VideoSample v;
  v.video_id = "micro";
  v.length = pick(rng, 3, 14);
  v.dim = dim;
  v.domain = domain;
  v.label = pick(rng, 0, n_classes - 1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  v.frames.resize(v.length * dim);
  for (auto& x : v.frames) x = u(rng);
  return v;
}

inline trainer::SamplePlan random_sample_plan(std::mt19937_64& rng, const model::ModelConfig& cfg,
                                              synth::Domain domain, std::size_t m, std::size_t n) {
  trainer::SamplePlan sp;
  sp.video = random_video(rng, cfg.frame_dim, cfg.n_classes, domain);
  const std::size_t T = sp.video.length;
  for (std::size_t k = 0; k < m; ++k) sp.global_clips.push_back(sampling::sample_global_clip(T, cfg.clip_frames, &rng));
  for (std::size_t k = 0; k < n; ++k)
    sp.local_clips.push_back(sampling::sample_local_clip(T, cfg.clip_frames, cfg.local_stride, &rng));
  sp.order_clips = sampling::sample_ordered_local_clips(T, cfg.clip_frames, cfg.local_stride, cfg.tol_clips, &rng);
  sp.permutation = sampling::random_permutation(cfg.tol_clips, rng);
  return sp;
}

// Tanh networks of at most 3 layers x 16 units, 1..4 samples per domain.
inline MicroInstance random_micro_instance(std::mt19937_64& rng) {
  model::ModelConfig cfg;
  cfg.hidden_activation = diffnet::Activation::tanh;
  cfg.frame_dim = pick(rng, 2, 8);
  cfg.frame_hidden = pick(rng, 2, 16);
  cfg.frame_out = pick(rng, 2, 16);
  cfg.feature_dim = pick(rng, 2, 16);
  cfg.n_classes = pick(rng, 2, 5);
  cfg.tol_clips = pick(rng, 2, 4);
  cfg.tol_hidden = pick(rng, 2, 16);
  cfg.domain_hidden.assign(pick(rng, 1, 2), 0);
  for (auto& h : cfg.domain_hidden) h = pick(rng, 2, 16);
  cfg.clip_frames = pick(rng, 1, 4);
  cfg.local_stride = pick(rng, 1, 2);
  cfg.validate();

  MicroInstance inst{cfg, model::GladModel(cfg, rng), {}};
  // Spread the initial weights so the losses are far from their flat points.
  std::normal_distribution<double> g(0.0, 0.2);
  for (auto& t : inst.model.params())
    for (auto& v : t.values) v += g(rng);

  const std::size_t b = pick(rng, 1, 4);
  const std::size_t m = pick(rng, 1, 2), n = pick(rng, 1, 2);
  for (std::size_t i = 0; i < b; ++i) {
    inst.plan.source.push_back(random_sample_plan(rng, cfg, synth::Domain::source, m, n));
    inst.plan.target.push_back(random_sample_plan(rng, cfg, synth::Domain::target, m, n));
  }
  return inst;
}

// The scalar whose gradient compute_step reports for a parameter group
// under `obj`: extractor and heads descend CE + TOL - coeff * GLA, the
// domain classifiers descend GLA.
inline double group_objective(const trainer::StepStats& s, const trainer::Objective& obj, bool domain_group) {
  double gla = 0.0;
  if (obj.gla) {
    if (obj.views.global) gla += s.gla_global;
    if (obj.views.local) gla += s.gla_local;
    if (obj.views.cross) gla += s.gla_cross;
  }
  if (domain_group) return gla;
  return (obj.ce ? s.l_ce : 0.0) + (obj.tol ? s.l_tol : 0.0) - obj.grl_coeff * gla;
}

// Max relative error (|a - fd| / max(1, |a|)) of compute_step's gradient
// against central differences, over every parameter, for each objective.
// Every loss value is logged on each evaluation, so one pass of perturbed
// full-objective steps serves all objectives.
inline std::vector<double> step_gradient_errors(const MicroInstance& inst, std::span<const trainer::Objective> objs,
                                                double eps = 1e-5) {
  trainer::Objective probe_obj;  // everything on, so every term is logged
  std::vector<diffnet::ParamList> analytic;
  for (const auto& o : objs) analytic.push_back(trainer::compute_step(inst.model, inst.plan, o).grads);
  const auto range = inst.model.domain_range();
  std::vector<double> worst(objs.size(), 0.0);
  model::GladModel probe = inst.model;
  for (std::size_t ti = 0; ti < probe.params().size(); ++ti) {
    const bool domain_group = ti >= range.begin && ti < range.end;
    for (std::size_t k = 0; k < probe.params()[ti].size(); ++k) {
      double& x = probe.params()[ti].values[k];
      const double x0 = x;
      x = x0 + eps;
      const auto up = trainer::compute_step(probe, inst.plan, probe_obj).stats;
      x = x0 - eps;
      const auto down = trainer::compute_step(probe, inst.plan, probe_obj).stats;
      x = x0;
      for (std::size_t j = 0; j < objs.size(); ++j) {
        const double fd =
            (group_objective(up, objs[j], domain_group) - group_objective(down, objs[j], domain_group)) / (2.0 * eps);
        const double a = analytic[j][ti].values[k];
        worst[j] = std::max(worst[j], std::abs(a - fd) / std::max(1.0, std::abs(a)));
      }
    }
  }
  return worst;
}

inline double step_gradient_error(const MicroInstance& inst, const trainer::Objective& obj, double eps = 1e-5) {
  return step_gradient_errors(inst, std::span<const trainer::Objective>(&obj, 1), eps).front();
}

inline trainer::Objective only(bool ce, bool tol, bool gla, model::GlaViews views = {}, double coeff = 1.0) {
  trainer::Objective o;
  o.ce = ce;
  o.tol = tol;
  o.gla = gla;
  o.views = views;
  o.grl_coeff = coeff;
  return o;
}

// The objectives checked term by term: CE, TOL, each alignment view, and
// the composed step with a non-unit reversal coefficient.
inline std::vector<trainer::Objective> term_objectives() {
  return {only(true, false, false),
          only(false, true, false),
          only(false, false, true, model::GlaViews{true, false, false}),
          only(false, false, true, model::GlaViews{false, true, false}),
          only(false, false, true, model::GlaViews{false, false, true}),
          only(true, true, true, model::GlaViews{}, 0.5)};
}

inline const char* term_objective_name(std::size_t i) {
  static const char* names[] = {"ce", "tol", "adv-gg", "adv-ll", "adv-cross", "composed"};
  return names[i];
}

}  // namespace glad::testing
