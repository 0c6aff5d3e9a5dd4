#pragma once

// Small differentiable compute core: dense layers, activations, softmax and
// sigmoid losses, gradient reversal and momentum SGD. Gradients are coded by
// hand and checked against central finite differences in the tests.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace glad::diffnet {

enum class Activation { identity, relu, tanh, sigmoid };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  ParamTensor() = default;
  ParamTensor(std::string tensor_name, std::vector<std::size_t> tensor_shape);

  std::size_t size() const { return values.size(); }
  // Weight matrices (rank >= 2) receive weight decay, biases do not.
  bool is_weight() const { return shape.size() >= 2; }
};

using ParamList = std::vector<ParamTensor>;

std::size_t element_count(std::span<const std::size_t> shape);

// Zero-valued list with the same names and shapes as `like`.
ParamList zeros_like(std::span<const ParamTensor> like);
void fill_zero(std::span<ParamTensor> params);
// dst += src, tensor by tensor.
void accumulate(std::span<ParamTensor> dst, std::span<const ParamTensor> src);

std::vector<double> flatten(std::span<const ParamTensor> params);
void unflatten(std::span<const double> flat, std::span<ParamTensor> params);

struct MlpSpec {
  std::vector<std::size_t> layer_widths;
  std::vector<Activation> hidden_activations;  // one per hidden layer
  Activation output_activation = Activation::identity;

  // All hidden layers share `hidden`.
  static MlpSpec uniform(std::vector<std::size_t> widths, Activation hidden, Activation output);

  std::size_t num_layers() const { return layer_widths.size() - 1; }
  std::size_t input_width() const { return layer_widths.front(); }
  std::size_t output_width() const { return layer_widths.back(); }
  // Two tensors (W, b) per layer.
  std::size_t num_tensors() const { return 2 * num_layers(); }

  void validate() const;
};

// Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
ParamList init_mlp(const MlpSpec& spec, const std::string& prefix, std::mt19937_64& rng);

// Forward activations kept for the backward pass. post[0] is the input,
// pre[k] / post[k + 1] are layer k's pre- and post-activation.
struct MlpTrace {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;

  const std::vector<double>& output() const { return post.back(); }
  const std::vector<double>& output_preactivation() const { return pre.back(); }
};

void check_params(const MlpSpec& spec, std::span<const ParamTensor> params);

MlpTrace mlp_forward(const MlpSpec& spec, std::span<const ParamTensor> params,
                     std::span<const double> input);

std::vector<double> mlp_apply(const MlpSpec& spec, std::span<const ParamTensor> params,
                              std::span<const double> input);

// Back-propagates `upstream` (gradient w.r.t. the post-activation output),
// adding parameter gradients into `grads`. Returns the input gradient, or an
// empty vector when `want_input_grad` is false.
std::vector<double> mlp_backward(const MlpSpec& spec, std::span<const ParamTensor> params,
                                 const MlpTrace& trace, std::span<const double> upstream,
                                 std::span<ParamTensor> grads, bool want_input_grad = true);

// Same as mlp_backward, but `upstream` is the gradient w.r.t. the output
// pre-activation. Used where a loss is computed from logits directly.
std::vector<double> mlp_backward_from_logits(const MlpSpec& spec,
                                             std::span<const ParamTensor> params,
                                             const MlpTrace& trace,
                                             std::span<const double> upstream,
                                             std::span<ParamTensor> grads);

struct MlpGradients {
  ParamList params;
  std::vector<double> input;
};

MlpGradients mlp_gradients(const MlpSpec& spec, std::span<const ParamTensor> params,
                           std::span<const double> input, std::span<const double> upstream);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

std::vector<double> softmax(std::span<const double> logits);
double sigmoid(double z);
// log(1 + exp(z)) without overflow.
double softplus(double z);

// loss = -log softmax(logits)[target], grad = softmax - onehot.
LossGrad softmax_cross_entropy(std::span<const double> logits, std::size_t target);

// Gradient reversal: identity forward, -coefficient * upstream backward.
std::vector<double> grl_forward(std::span<const double> input);
std::vector<double> grl_backward(std::span<const double> upstream, double coefficient);

struct SgdState {
  std::vector<std::vector<double>> velocity;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double learning_rate = 2e-3;

  static SgdState for_params(std::span<const ParamTensor> params, double momentum,
                             double weight_decay, double learning_rate);
};

// v' = momentum * v + (g + wd * p); p' = p - lr * v'. Weight decay only on
// weight matrices. Throws Error(numeric_failure) before touching anything if
// a gradient is non-finite.
void sgd_step(std::span<ParamTensor> params, std::span<const ParamTensor> grads, SgdState& state);

// Loss over a flat parameter vector; when `grad` is non-null it receives the
// analytic gradient.
using LossFunction = std::function<double(std::span<const double> params, std::vector<double>* grad)>;

// Max over parameters of |analytic - central difference| / max(1, |analytic|).
double finite_difference_check(const LossFunction& loss_fn, std::span<const double> params,
                               double eps);

// Checkpoint: JSON listing {name, shape} in order, plus a binary blob of
// little-endian float32 values concatenated in the same order.
void write_checkpoint(std::span<const ParamTensor> params, const std::filesystem::path& json_path,
                      const std::filesystem::path& bin_path);
ParamList read_checkpoint(const std::filesystem::path& json_path,
                          const std::filesystem::path& bin_path);

}  // namespace glad::diffnet
