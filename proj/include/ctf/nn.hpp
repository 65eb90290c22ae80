#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctf/core.hpp"
#include "ctf/perception.hpp"

namespace ctf::nn {

// Dense row-major matrix.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
  std::span<const double> row_span(int r) const { return {row(r), static_cast<std::size_t>(cols)}; }
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

struct MlpShape {
  int input = 0;
  std::vector<int> hidden;        // tanh layers
  int output = 0;                 // linear output layer
  std::vector<int> output_heads;  // partition of `output`; drives init fan-out
  bool operator==(const MlpShape&) const = default;
};

// Multilayer perceptron with tanh hidden layers and a linear output layer.
//
// Parameter layout in `params`, layer by layer from the input side: the
// weight matrix stored input-major (W[i * fan_out + j] connects input i to
// unit j), followed by the fan_out biases.
struct Mlp {
  MlpShape shape;
  std::vector<double> params;

  int num_layers() const { return static_cast<int>(shape.hidden.size()) + 1; }
  int layer_in(int l) const { return l == 0 ? shape.input : shape.hidden[l - 1]; }
  int layer_out(int l) const { return l < static_cast<int>(shape.hidden.size()) ? shape.hidden[l] : shape.output; }
  std::size_t weight_offset(int l) const;
  std::size_t bias_offset(int l) const { return weight_offset(l) + static_cast<std::size_t>(layer_in(l)) * layer_out(l); }
  bool operator==(const Mlp&) const = default;
};

std::size_t param_count(const MlpShape& shape);

// Xavier-uniform weights, zero biases. With zero_output the output layer's
// weights are zero as well.
Mlp init_mlp(const MlpShape& shape, std::uint64_t seed, bool zero_output = false);

// Policy output columns: branch logits [0,3), [3,6), [6,8), then the value.
inline constexpr int kLogitCount = kActionOneHotDim;
inline constexpr int kValueColumn = kLogitCount;
inline constexpr int kPolicyOutput = kLogitCount + 1;
inline constexpr std::array<int, kNumBranches> kBranchOffset{0, 3, 6};
inline constexpr int kDefaultHidden = 128;
inline constexpr int kDiscriminatorHidden = 64;

// Actor-critic network: shared tanh trunk (obs -> 128 -> 128), three logit
// heads (3, 3, 2) and a value head, stored as one 9-wide output layer.
struct PolicyParams {
  Mlp net;
  int obs_dim() const { return net.shape.input; }
  bool operator==(const PolicyParams&) const = default;
};

// Discriminator D(obs, action): (obs_dim + 8) -> 64 -> 64 -> 1 logit, with
// D = sigmoid(logit).
struct DiscriminatorParams {
  Mlp net;
  int obs_dim() const { return net.shape.input - kActionOneHotDim; }
  bool operator==(const DiscriminatorParams&) const = default;
};

PolicyParams init_params(int obs_dim, std::uint64_t seed, int hidden = kDefaultHidden, int layers = 2);
// Final layer starts at zero so a fresh discriminator outputs exactly 0.5.
DiscriminatorParams init_discriminator(int obs_dim, std::uint64_t seed, int hidden = kDiscriminatorHidden);

// Single-sample forward pass keeping the activations for backprop.
struct ForwardCache {
  std::vector<std::vector<double>> acts;  // acts[0] = input, acts[l+1] = output of layer l
  std::span<const double> output() const { return acts.back(); }
};
void forward(const Mlp& net, std::span<const double> x, ForwardCache& cache);
// Accumulates d(loss)/d(params) for one sample into grad given dOut.
void backward(const Mlp& net, const ForwardCache& cache, std::span<const double> d_out, std::span<double> grad);

struct PolicyOutput {
  std::array<double, kLogitCount> logits{};
  double value = 0.0;
};
PolicyOutput policy_forward(const PolicyParams& p, std::span<const double> obs);

// Batched forward state: acts[l] is a (batch x width) matrix.
struct BatchCache {
  std::vector<Matrix> acts;
  const Matrix& output() const { return acts.back(); }
};

// OpenMP kernels (parallel over samples for the forward sweep and over
// weight rows for the gradient). Per-element summation order is fixed, so
// results are bit-identical for any thread count and equal the serial
// references below.
void forward_batch(const Mlp& net, const Matrix& x, BatchCache& cache);
void backward_batch(const Mlp& net, const BatchCache& cache, const Matrix& d_out, std::span<double> grad);

void forward_batch_serial(const Mlp& net, const Matrix& x, BatchCache& cache);
void backward_batch_serial(const Mlp& net, const BatchCache& cache, const Matrix& d_out, std::span<double> grad);

// ---- loss heads ------------------------------------------------------------
// Each returns the mean-reduced scalar loss and fills d_out (same shape as the
// network output) with d(loss)/d(output).

double log_softmax_at(std::span<const double> logits, int index);
std::array<double, 3> softmax(std::span<const double> logits);

// Sum over branches of the cross-entropy of the taken action.
double bc_loss(const Matrix& out, std::span<const Action> actions, Matrix& d_out, double weight = 1.0);

struct PpoBatch {
  std::span<const Action> actions;
  std::span<const double> old_logprob;
  std::span<const double> advantages;
  std::span<const double> returns;
};

struct PpoLossParts {
  double surrogate = 0.0;  // -mean(min(r A, clip(r) A))
  double value = 0.0;      // mean (V - R)^2
  double entropy = 0.0;    // mean summed branch entropy
  double total = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double max_ratio_error = 0.0;  // max |ratio - 1|
};

PpoLossParts ppo_loss(const Matrix& out, const PpoBatch& batch, double clip_eps, double value_coef,
                      double entropy_coef, Matrix& d_out);

// Individual heads, used by the gradient checker.
double surrogate_loss(const Matrix& out, const PpoBatch& batch, double clip_eps, Matrix& d_out);
double value_loss(const Matrix& out, std::span<const double> returns, Matrix& d_out);
double entropy_bonus_loss(const Matrix& out, Matrix& d_out);  // -mean(entropy)

// Binary cross-entropy on discriminator logits (label 1 = expert).
double discriminator_loss(const Matrix& logits, std::span<const double> labels, Matrix& d_out);

inline constexpr double kProbClamp = 1e-7;
double clamped_sigmoid(double logit);

// ---- sampling --------------------------------------------------------------

struct SampledAction {
  Action action;
  double logprob = 0.0;
  double entropy = 0.0;
};

// Per-branch categorical sample; greedy takes the lowest-index argmax.
SampledAction sample_action(std::span<const double> logits, Rng& rng, bool greedy = false);
double action_logprob(std::span<const double> logits, const Action& a);
double action_entropy(std::span<const double> logits);

// ---- optimisation ----------------------------------------------------------

struct AdamState {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

AdamState make_adam(std::size_t n, double lr);
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& s);

// Scales grads so their 2-norm is at most max_norm; returns the original norm.
double clip_grad_norm(std::span<double> grads, double max_norm);

// ---- checkpoints (format "ckptv1") -------------------------------------------

struct Checkpoint {
  PolicyParams policy;
  std::string obs_layout = kObsLayout;
  int rays = kDefaultRays;
  std::uint64_t seed = 0;
  std::vector<std::string> lineage;  // run ids / parent checkpoints
  std::int64_t training_step = 0;
  std::string id;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
// Throws FormatError on an unknown format or inconsistent shapes.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ctf::nn
