#include "glad/diffnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "binary_io.hpp"
#include "glad/error.hpp"

namespace glad {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::io_error: return "i/o error";
    case ErrorCode::corrupted_header: return "corrupted header";
    case ErrorCode::truncated_frame_data: return "truncated frame data";
    case ErrorCode::manifest_mismatch: return "manifest mismatch";
    case ErrorCode::numeric_failure: return "numeric failure";
    case ErrorCode::config_error: return "config error";
  }
  return "unknown error";
}

}  // namespace glad

namespace glad::diffnet {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::tanh: return std::tanh(z);
    case Activation::sigmoid: return sigmoid(z);
  }
  return z;
}

// Derivative expressed through the pre-activation z and output y.
double activation_slope(Activation a, double z, double y) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::sigmoid: return y * (1.0 - y);
  }
  return 1.0;
}

Activation layer_activation(const MlpSpec& spec, std::size_t layer) {
  return layer + 1 == spec.num_layers() ? spec.output_activation : spec.hidden_activations[layer];
}

std::string shape_string(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Shared core of both backward entry points. `delta` is the gradient w.r.t.
// the last layer's pre-activation.
std::vector<double> backward_core(const MlpSpec& spec, std::span<const ParamTensor> params,
                                  const MlpTrace& trace, std::vector<double> delta,
                                  std::span<ParamTensor> grads, bool want_input_grad) {
  if (grads.size() != spec.num_tensors())
    throw Error(ErrorCode::shape_mismatch, "gradient list does not match the MLP");
  for (std::size_t layer = spec.num_layers(); layer-- > 0;) {
    const auto& w = params[2 * layer].values;
    auto& gw = grads[2 * layer].values;
    auto& gb = grads[2 * layer + 1].values;
    const auto& x = trace.post[layer];
    const std::size_t out = spec.layer_widths[layer + 1];
    const std::size_t in = spec.layer_widths[layer];
    const bool need_dx = layer > 0 || want_input_grad;
    std::vector<double> dx(need_dx ? in : 0, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      const double* wrow = &w[o * in];
      double* grow = &gw[o * in];
      for (std::size_t i = 0; i < in; ++i) grow[i] += d * x[i];
      if (need_dx)
        for (std::size_t i = 0; i < in; ++i) dx[i] += wrow[i] * d;
    }
    if (layer == 0) return dx;
    const Activation a = spec.hidden_activations[layer - 1];
    const auto& z = trace.pre[layer - 1];
    const auto& y = trace.post[layer];
    for (std::size_t i = 0; i < in; ++i) dx[i] *= activation_slope(a, z[i], y[i]);
    delta = std::move(dx);
  }
  return {};
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw Error(ErrorCode::invalid_argument, "unknown activation '" + name + "'");
}

ParamTensor::ParamTensor(std::string tensor_name, std::vector<std::size_t> tensor_shape)
    : name(std::move(tensor_name)), shape(std::move(tensor_shape)), values(element_count(shape), 0.0) {}

std::size_t element_count(std::span<const std::size_t> shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ParamList zeros_like(std::span<const ParamTensor> like) {
  ParamList out;
  out.reserve(like.size());
  for (const auto& t : like) out.emplace_back(t.name, t.shape);
  return out;
}

void fill_zero(std::span<ParamTensor> params) {
  for (auto& t : params) std::fill(t.values.begin(), t.values.end(), 0.0);
}

void accumulate(std::span<ParamTensor> dst, std::span<const ParamTensor> src) {
  if (dst.size() != src.size()) throw Error(ErrorCode::shape_mismatch, "accumulate: list sizes differ");
  for (std::size_t k = 0; k < dst.size(); ++k) {
    if (dst[k].size() != src[k].size())
      throw Error(ErrorCode::shape_mismatch, "accumulate: tensor " + dst[k].name);
    for (std::size_t i = 0; i < dst[k].size(); ++i) dst[k].values[i] += src[k].values[i];
  }
}

std::vector<double> flatten(std::span<const ParamTensor> params) {
  std::vector<double> flat;
  for (const auto& t : params) flat.insert(flat.end(), t.values.begin(), t.values.end());
  return flat;
}

void unflatten(std::span<const double> flat, std::span<ParamTensor> params) {
  std::size_t offset = 0;
  for (auto& t : params) {
    if (offset + t.size() > flat.size())
      throw Error(ErrorCode::shape_mismatch, "unflatten: vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.values.begin());
    offset += t.size();
  }
  if (offset != flat.size()) throw Error(ErrorCode::shape_mismatch, "unflatten: vector too long");
}

MlpSpec MlpSpec::uniform(std::vector<std::size_t> widths, Activation hidden, Activation output) {
  MlpSpec spec;
  spec.layer_widths = std::move(widths);
  const std::size_t n_hidden = spec.layer_widths.size() >= 2 ? spec.layer_widths.size() - 2 : 0;
  spec.hidden_activations.assign(n_hidden, hidden);
  spec.output_activation = output;
  spec.validate();
  return spec;
}

void MlpSpec::validate() const {
  if (layer_widths.size() < 2)
    throw Error(ErrorCode::invalid_argument, "MLP needs at least two layer widths");
  for (auto w : layer_widths)
    if (w == 0) throw Error(ErrorCode::invalid_argument, "MLP layer widths must be positive");
  if (hidden_activations.size() != layer_widths.size() - 2)
    throw Error(ErrorCode::invalid_argument, "one activation per hidden layer required");
}

ParamList init_mlp(const MlpSpec& spec, const std::string& prefix, std::mt19937_64& rng) {
  spec.validate();
  ParamList params;
  for (std::size_t layer = 0; layer < spec.num_layers(); ++layer) {
    const std::size_t in = spec.layer_widths[layer];
    const std::size_t out = spec.layer_widths[layer + 1];
    ParamTensor w(prefix + ".w" + std::to_string(layer), {out, in});
    ParamTensor b(prefix + ".b" + std::to_string(layer), {out});
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : w.values) v = dist(rng);
    params.push_back(std::move(w));
    params.push_back(std::move(b));
  }
  return params;
}

void check_params(const MlpSpec& spec, std::span<const ParamTensor> params) {
  if (params.size() != spec.num_tensors())
    throw Error(ErrorCode::shape_mismatch, "expected " + std::to_string(spec.num_tensors()) +
                                               " tensors, got " + std::to_string(params.size()));
  for (std::size_t layer = 0; layer < spec.num_layers(); ++layer) {
    const std::size_t in = spec.layer_widths[layer];
    const std::size_t out = spec.layer_widths[layer + 1];
    const auto& w = params[2 * layer];
    const auto& b = params[2 * layer + 1];
    if (w.shape != std::vector<std::size_t>{out, in} || w.values.size() != out * in)
      throw Error(ErrorCode::shape_mismatch,
                  "layer " + std::to_string(layer) + " weight has shape " + shape_string(w.shape));
    if (b.shape != std::vector<std::size_t>{out} || b.values.size() != out)
      throw Error(ErrorCode::shape_mismatch,
                  "layer " + std::to_string(layer) + " bias has shape " + shape_string(b.shape));
  }
}

MlpTrace mlp_forward(const MlpSpec& spec, std::span<const ParamTensor> params,
                     std::span<const double> input) {
  if (input.size() != spec.input_width())
    throw Error(ErrorCode::shape_mismatch, "input length " + std::to_string(input.size()) +
                                               " != " + std::to_string(spec.input_width()));
  MlpTrace trace;
  trace.pre.reserve(spec.num_layers());
  trace.post.reserve(spec.num_layers() + 1);
  trace.post.emplace_back(input.begin(), input.end());
  for (std::size_t layer = 0; layer < spec.num_layers(); ++layer) {
    const std::size_t in = spec.layer_widths[layer];
    const std::size_t out = spec.layer_widths[layer + 1];
    const auto& w = params[2 * layer].values;
    const auto& b = params[2 * layer + 1].values;
    const auto& x = trace.post.back();
    std::vector<double> z(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wrow = &w[o * in];
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * x[i];
      z[o] = acc;
    }
    const Activation a = layer_activation(spec, layer);
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) y[o] = activate(a, z[o]);
    trace.pre.push_back(std::move(z));
    trace.post.push_back(std::move(y));
  }
  return trace;
}

std::vector<double> mlp_apply(const MlpSpec& spec, std::span<const ParamTensor> params,
                              std::span<const double> input) {
  spec.validate();
  check_params(spec, params);
  return mlp_forward(spec, params, input).output();
}

std::vector<double> mlp_backward(const MlpSpec& spec, std::span<const ParamTensor> params,
                                 const MlpTrace& trace, std::span<const double> upstream,
                                 std::span<ParamTensor> grads, bool want_input_grad) {
  if (upstream.size() != spec.output_width())
    throw Error(ErrorCode::shape_mismatch, "upstream length does not match the MLP output");
  const std::size_t last = spec.num_layers() - 1;
  std::vector<double> delta(upstream.begin(), upstream.end());
  for (std::size_t o = 0; o < delta.size(); ++o)
    delta[o] *= activation_slope(spec.output_activation, trace.pre[last][o], trace.post[last + 1][o]);
  return backward_core(spec, params, trace, std::move(delta), grads, want_input_grad);
}

std::vector<double> mlp_backward_from_logits(const MlpSpec& spec,
                                             std::span<const ParamTensor> params,
                                             const MlpTrace& trace,
                                             std::span<const double> upstream,
                                             std::span<ParamTensor> grads) {
  if (upstream.size() != spec.output_width())
    throw Error(ErrorCode::shape_mismatch, "upstream length does not match the MLP output");
  return backward_core(spec, params, trace, std::vector<double>(upstream.begin(), upstream.end()),
                       grads, true);
}

MlpGradients mlp_gradients(const MlpSpec& spec, std::span<const ParamTensor> params,
                           std::span<const double> input, std::span<const double> upstream) {
  spec.validate();
  check_params(spec, params);
  if (upstream.size() != spec.output_width())
    throw Error(ErrorCode::shape_mismatch, "upstream length does not match the MLP output");
  const MlpTrace trace = mlp_forward(spec, params, input);
  MlpGradients out;
  out.params = zeros_like(params);
  out.input = mlp_backward(spec, params, trace, upstream, out.params);
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::invalid_argument, "softmax of empty logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

LossGrad softmax_cross_entropy(std::span<const double> logits, std::size_t target) {
  if (logits.empty()) throw Error(ErrorCode::invalid_argument, "cross entropy of empty logits");
  if (target >= logits.size())
    throw Error(ErrorCode::invalid_argument, "target class " + std::to_string(target) +
                                                 " out of range for " +
                                                 std::to_string(logits.size()) + " logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  const double log_norm = peak + std::log(total);
  LossGrad out;
  out.loss = log_norm - logits[target];
  if (out.loss < 0.0) out.loss = 0.0;
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.grad[i] = std::exp(logits[i] - log_norm);
  out.grad[target] -= 1.0;
  return out;
}

std::vector<double> grl_forward(std::span<const double> input) {
  return std::vector<double>(input.begin(), input.end());
}

std::vector<double> grl_backward(std::span<const double> upstream, double coefficient) {
  std::vector<double> out(upstream.size());
  for (std::size_t i = 0; i < upstream.size(); ++i) out[i] = -coefficient * upstream[i];
  return out;
}

SgdState SgdState::for_params(std::span<const ParamTensor> params, double momentum,
                              double weight_decay, double learning_rate) {
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw Error(ErrorCode::invalid_argument, "momentum must lie in [0, 1)");
  SgdState state;
  state.momentum = momentum;
  state.weight_decay = weight_decay;
  state.learning_rate = learning_rate;
  for (const auto& t : params) state.velocity.emplace_back(t.size(), 0.0);
  return state;
}

void sgd_step(std::span<ParamTensor> params, std::span<const ParamTensor> grads, SgdState& state) {
  if (params.size() != grads.size() || params.size() != state.velocity.size())
    throw Error(ErrorCode::shape_mismatch, "sgd_step: parameter, gradient and velocity lists differ");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size() || params[k].size() != state.velocity[k].size())
      throw Error(ErrorCode::shape_mismatch, "sgd_step: tensor " + params[k].name);
    for (double g : grads[k].values)
      if (!std::isfinite(g))
        throw Error(ErrorCode::numeric_failure, "non-finite gradient in tensor " + params[k].name);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].values;
    const auto& g = grads[k].values;
    auto& v = state.velocity[k];
    const double wd = params[k].is_weight() ? state.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + (g[i] + wd * p[i]);
      p[i] -= state.learning_rate * v[i];
    }
  }
}

double finite_difference_check(const LossFunction& loss_fn, std::span<const double> params,
                               double eps) {
  std::vector<double> analytic;
  loss_fn(params, &analytic);
  if (analytic.size() != params.size())
    throw Error(ErrorCode::shape_mismatch, "loss function returned a gradient of the wrong size");
  std::vector<double> probe(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = loss_fn(probe, nullptr);
    probe[i] = saved - eps;
    const double down = loss_fn(probe, nullptr);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

void write_checkpoint(std::span<const ParamTensor> params, const std::filesystem::path& json_path,
                      const std::filesystem::path& bin_path) {
  nlohmann::json entries = nlohmann::json::array();
  std::vector<char> blob;
  for (const auto& t : params) {
    entries.push_back({{"name", t.name}, {"shape", t.shape}});
    for (double v : t.values) detail::put_f32(blob, static_cast<float>(v));
  }
  detail::write_text(json_path, nlohmann::json{{"params", entries}}.dump(2) + "\n");
  detail::write_file(bin_path, blob);
}

ParamList read_checkpoint(const std::filesystem::path& json_path,
                          const std::filesystem::path& bin_path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(detail::read_text(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::corrupted_header, json_path.string() + ": " + e.what());
  }
  const auto blob = detail::read_file(bin_path);
  ParamList params;
  std::size_t offset = 0;
  try {
    for (const auto& entry : doc.at("params")) {
      ParamTensor t(entry.at("name").get<std::string>(),
                    entry.at("shape").get<std::vector<std::size_t>>());
      if (offset + 4 * t.size() > blob.size())
        throw Error(ErrorCode::truncated_frame_data, bin_path.string() + " ends inside " + t.name);
      for (auto& v : t.values) {
        v = detail::get_f32(&blob[offset]);
        offset += 4;
      }
      params.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::corrupted_header, json_path.string() + ": " + e.what());
  }
  if (offset != blob.size())
    throw Error(ErrorCode::manifest_mismatch, bin_path.string() + " has trailing data");
  return params;
}

}  // namespace glad::diffnet
