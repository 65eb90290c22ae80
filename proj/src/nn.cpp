#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ctf/nn.hpp"

namespace ctf::nn {
namespace {

void check_finite(std::span<const double> v, int layer) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite activation in layer " + std::to_string(layer));
  }
}

}  // namespace

std::size_t Mlp::weight_offset(int l) const {
  std::size_t off = 0;
  for (int k = 0; k < l; ++k) off += static_cast<std::size_t>(layer_in(k) + 1) * layer_out(k);
  return off;
}

std::size_t param_count(const MlpShape& shape) {
  Mlp m;
  m.shape = shape;
  return m.weight_offset(m.num_layers());
}

Mlp init_mlp(const MlpShape& shape, std::uint64_t seed, bool zero_output) {
  if (shape.input <= 0 || shape.output <= 0) throw ContractError("init_mlp: dimensions must be positive");
  for (int h : shape.hidden) {
    if (h <= 0) throw ContractError("init_mlp: hidden width must be positive");
  }
  Mlp m;
  m.shape = shape;
  m.params.assign(param_count(shape), 0.0);
  Rng rng(seed);
  for (int l = 0; l < m.num_layers(); ++l) {
    const int in = m.layer_in(l);
    const int out = m.layer_out(l);
    const bool is_output = l + 1 == m.num_layers();
    if (is_output && zero_output) continue;
    // Output columns belonging to one head share that head's fan-out.
    std::vector<double> limit(out);
    if (is_output && !shape.output_heads.empty()) {
      int col = 0;
      for (int width : shape.output_heads) {
        for (int k = 0; k < width; ++k) limit[col++] = std::sqrt(6.0 / (in + width));
      }
      if (col != out) throw ContractError("init_mlp: output_heads do not sum to output");
    } else {
      std::fill(limit.begin(), limit.end(), std::sqrt(6.0 / (in + out)));
    }
    double* w = m.params.data() + m.weight_offset(l);
    for (int i = 0; i < in; ++i) {
      for (int j = 0; j < out; ++j) w[i * out + j] = limit[j] * (2.0 * uniform01(rng) - 1.0);
    }
  }
  return m;
}

PolicyParams init_params(int obs_dim, std::uint64_t seed, int hidden, int layers) {
  if (obs_dim <= 0 || hidden <= 0 || layers <= 0) throw ContractError("init_params: dimensions must be positive");
  MlpShape s{obs_dim, std::vector<int>(layers, hidden), kPolicyOutput, {3, 3, 2, 1}};
  return PolicyParams{init_mlp(s, seed)};
}

DiscriminatorParams init_discriminator(int obs_dim, std::uint64_t seed, int hidden) {
  if (obs_dim <= 0) throw ContractError("init_discriminator: obs_dim must be positive");
  MlpShape s{obs_dim + kActionOneHotDim, {hidden, hidden}, 1, {}};
  return DiscriminatorParams{init_mlp(s, seed, /*zero_output=*/true)};
}

void forward(const Mlp& net, std::span<const double> x, ForwardCache& cache) {
  if (x.size() != static_cast<std::size_t>(net.shape.input)) {
    throw ContractError("forward: expected input of " + std::to_string(net.shape.input) + ", got " +
                        std::to_string(x.size()));
  }
  const int layers = net.num_layers();
  cache.acts.resize(layers + 1);
  cache.acts[0].assign(x.begin(), x.end());
  for (int l = 0; l < layers; ++l) {
    const int in = net.layer_in(l);
    const int out = net.layer_out(l);
    const double* w = net.params.data() + net.weight_offset(l);
    const double* b = net.params.data() + net.bias_offset(l);
    const std::vector<double>& a = cache.acts[l];
    std::vector<double>& z = cache.acts[l + 1];
    z.assign(b, b + out);
    for (int i = 0; i < in; ++i) {
      const double ai = a[i];
      if (ai == 0.0) continue;
      const double* wi = w + static_cast<std::size_t>(i) * out;
      for (int j = 0; j < out; ++j) z[j] += ai * wi[j];
    }
    check_finite(z, l);
    if (l + 1 < layers) {
      for (double& v : z) v = std::tanh(v);
    }
  }
}

void backward(const Mlp& net, const ForwardCache& cache, std::span<const double> d_out, std::span<double> grad) {
  if (grad.size() != net.params.size()) throw ContractError("backward: gradient size mismatch");
  if (d_out.size() != static_cast<std::size_t>(net.shape.output)) throw ContractError("backward: d_out size mismatch");
  std::vector<double> dz(d_out.begin(), d_out.end());
  std::vector<double> da;
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    const int in = net.layer_in(l);
    const int out = net.layer_out(l);
    const double* w = net.params.data() + net.weight_offset(l);
    double* gw = grad.data() + net.weight_offset(l);
    double* gb = grad.data() + net.bias_offset(l);
    const std::vector<double>& a = cache.acts[l];
    for (int i = 0; i < in; ++i) {
      const double ai = a[i];
      if (ai == 0.0) continue;
      double* gwi = gw + static_cast<std::size_t>(i) * out;
      for (int j = 0; j < out; ++j) gwi[j] += ai * dz[j];
    }
    for (int j = 0; j < out; ++j) gb[j] += dz[j];
    if (l == 0) break;
    da.assign(in, 0.0);
    for (int i = 0; i < in; ++i) {
      const double* wi = w + static_cast<std::size_t>(i) * out;
      double s = 0.0;
      for (int j = 0; j < out; ++j) s += wi[j] * dz[j];
      da[i] = s * (1.0 - a[i] * a[i]);
    }
    check_finite(da, l - 1);
    dz.swap(da);
  }
}

PolicyOutput policy_forward(const PolicyParams& p, std::span<const double> obs) {
  thread_local ForwardCache cache;
  forward(p.net, obs, cache);
  PolicyOutput o;
  const auto y = cache.output();
  std::copy(y.begin(), y.begin() + kLogitCount, o.logits.begin());
  o.value = y[kValueColumn];
  return o;
}

// ---- loss heads ------------------------------------------------------------

namespace {

std::span<const double> branch_logits(std::span<const double> logits, int b) {
  return logits.subspan(kBranchOffset[b], kActionBranches[b]);
}

// Writes softmax into p and returns log-sum-exp.
double softmax_into(std::span<const double> z, double* p) {
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    p[k] = std::exp(z[k] - mx);
    sum += p[k];
  }
  for (std::size_t k = 0; k < z.size(); ++k) p[k] /= sum;
  return mx + std::log(sum);
}

}  // namespace

std::array<double, 3> softmax(std::span<const double> logits) {
  std::array<double, 3> p{};
  softmax_into(logits, p.data());
  return p;
}

double log_softmax_at(std::span<const double> logits, int index) {
  double p[3];
  const double lse = softmax_into(logits, p);
  return logits[index] - lse;
}

double action_logprob(std::span<const double> logits, const Action& a) {
  double lp = 0.0;
  for (int b = 0; b < kNumBranches; ++b) lp += log_softmax_at(branch_logits(logits, b), a.branch[b]);
  return lp;
}

double action_entropy(std::span<const double> logits) {
  double h = 0.0;
  for (int b = 0; b < kNumBranches; ++b) {
    const auto z = branch_logits(logits, b);
    double p[3];
    const double lse = softmax_into(z, p);
    for (std::size_t k = 0; k < z.size(); ++k) {
      if (p[k] > 0.0) h -= p[k] * (z[k] - lse);
    }
  }
  return h;
}

double bc_loss(const Matrix& out, std::span<const Action> actions, Matrix& d_out, double weight) {
  const int n = out.rows;
  if (n == 0 || actions.size() != static_cast<std::size_t>(n)) throw ContractError("bc_loss: batch size mismatch");
  d_out = Matrix(n, out.cols);
  double loss = 0.0;
  const double scale = weight / n;
  for (int r = 0; r < n; ++r) {
    const auto logits = out.row_span(r).first(kLogitCount);
    for (int b = 0; b < kNumBranches; ++b) {
      const auto z = branch_logits(logits, b);
      double p[3];
      const double lse = softmax_into(z, p);
      const int a = actions[r].branch[b];
      loss -= z[a] - lse;
      for (int k = 0; k < kActionBranches[b]; ++k) {
        d_out(r, kBranchOffset[b] + k) = scale * (p[k] - (k == a ? 1.0 : 0.0));
      }
    }
  }
  return weight * loss / n;
}

double surrogate_loss(const Matrix& out, const PpoBatch& batch, double clip_eps, Matrix& d_out) {
  const int n = out.rows;
  d_out = Matrix(n, out.cols);
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const auto logits = out.row_span(r).first(kLogitCount);
    const double ratio = std::exp(action_logprob(logits, batch.actions[r]) - batch.old_logprob[r]);
    const double adv = batch.advantages[r];
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv;
    if (unclipped <= clipped) {
      loss -= unclipped;
      const double g = -adv * ratio / n;  // d loss / d logprob
      for (int b = 0; b < kNumBranches; ++b) {
        const auto z = branch_logits(logits, b);
        double p[3];
        softmax_into(z, p);
        for (int k = 0; k < kActionBranches[b]; ++k) {
          d_out(r, kBranchOffset[b] + k) = g * ((k == batch.actions[r].branch[b] ? 1.0 : 0.0) - p[k]);
        }
      }
    } else {
      loss -= clipped;
    }
  }
  return loss / n;
}

double value_loss(const Matrix& out, std::span<const double> returns, Matrix& d_out) {
  const int n = out.rows;
  d_out = Matrix(n, out.cols);
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const double diff = out(r, kValueColumn) - returns[r];
    loss += diff * diff;
    d_out(r, kValueColumn) = 2.0 * diff / n;
  }
  return loss / n;
}

double entropy_bonus_loss(const Matrix& out, Matrix& d_out) {
  const int n = out.rows;
  d_out = Matrix(n, out.cols);
  double total_h = 0.0;
  for (int r = 0; r < n; ++r) {
    const auto logits = out.row_span(r).first(kLogitCount);
    for (int b = 0; b < kNumBranches; ++b) {
      const auto z = branch_logits(logits, b);
      double p[3];
      const double lse = softmax_into(z, p);
      double h = 0.0;
      for (int k = 0; k < kActionBranches[b]; ++k) h -= p[k] * (z[k] - lse);
      total_h += h;
      for (int k = 0; k < kActionBranches[b]; ++k) {
        const double dh = -p[k] * ((z[k] - lse) + h);
        d_out(r, kBranchOffset[b] + k) = -dh / n;
      }
    }
  }
  return -total_h / n;
}

PpoLossParts ppo_loss(const Matrix& out, const PpoBatch& batch, double clip_eps, double value_coef,
                      double entropy_coef, Matrix& d_out) {
  const int n = out.rows;
  if (n == 0 || batch.actions.size() != static_cast<std::size_t>(n) ||
      batch.old_logprob.size() != static_cast<std::size_t>(n) ||
      batch.advantages.size() != static_cast<std::size_t>(n) || batch.returns.size() != static_cast<std::size_t>(n)) {
    throw ContractError("ppo_loss: batch size mismatch");
  }
  PpoLossParts parts;
  Matrix d_sur, d_val, d_ent;
  parts.surrogate = surrogate_loss(out, batch, clip_eps, d_sur);
  parts.value = value_loss(out, batch.returns, d_val);
  parts.entropy = -entropy_bonus_loss(out, d_ent);
  parts.total = parts.surrogate + value_coef * parts.value - entropy_coef * parts.entropy;
  d_out = Matrix(n, out.cols);
  for (std::size_t k = 0; k < d_out.data.size(); ++k) {
    d_out.data[k] = d_sur.data[k] + value_coef * d_val.data[k] + entropy_coef * d_ent.data[k];
  }
  int clipped = 0;
  double kl = 0.0;
  for (int r = 0; r < n; ++r) {
    const double log_ratio = action_logprob(out.row_span(r).first(kLogitCount), batch.actions[r]) - batch.old_logprob[r];
    const double ratio = std::exp(log_ratio);
    if (std::abs(ratio - 1.0) > clip_eps) ++clipped;
    kl += (ratio - 1.0) - log_ratio;
    parts.max_ratio_error = std::max(parts.max_ratio_error, std::abs(ratio - 1.0));
  }
  parts.clip_fraction = static_cast<double>(clipped) / n;
  parts.approx_kl = kl / n;
  return parts;
}

double clamped_sigmoid(double logit) {
  const double s = 1.0 / (1.0 + std::exp(-logit));
  return std::clamp(s, kProbClamp, 1.0 - kProbClamp);
}

double discriminator_loss(const Matrix& logits, std::span<const double> labels, Matrix& d_out) {
  const int n = logits.rows;
  if (n == 0 || labels.size() != static_cast<std::size_t>(n)) throw ContractError("discriminator_loss: batch size mismatch");
  d_out = Matrix(n, logits.cols);
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const double z = logits(r, 0);
    // softplus(z) - y z, the numerically stable form of binary cross-entropy
    const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    loss += softplus - labels[r] * z;
    d_out(r, 0) = (1.0 / (1.0 + std::exp(-z)) - labels[r]) / n;
  }
  return loss / n;
}

// ---- sampling --------------------------------------------------------------

SampledAction sample_action(std::span<const double> logits, Rng& rng, bool greedy) {
  SampledAction s;
  for (int b = 0; b < kNumBranches; ++b) {
    const auto z = branch_logits(logits, b);
    double p[3];
    const double lse = softmax_into(z, p);
    int pick = 0;
    if (greedy) {
      for (int k = 1; k < kActionBranches[b]; ++k) {
        if (z[k] > z[pick]) pick = k;
      }
    } else {
      const double u = uniform01(rng);
      double acc = 0.0;
      pick = kActionBranches[b] - 1;
      for (int k = 0; k < kActionBranches[b]; ++k) {
        acc += p[k];
        if (u < acc) {
          pick = k;
          break;
        }
      }
    }
    s.action.branch[b] = pick;
    s.logprob += z[pick] - lse;
    for (int k = 0; k < kActionBranches[b]; ++k) {
      if (p[k] > 0.0) s.entropy -= p[k] * (z[k] - lse);
    }
  }
  return s;
}

// ---- optimisation ----------------------------------------------------------

AdamState make_adam(std::size_t n, double lr) {
  AdamState s;
  s.lr = lr;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& s) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw ContractError("adam_update: shape mismatch (params " + std::to_string(params.size()) + ", grads " +
                        std::to_string(grads.size()) + ", moments " + std::to_string(s.m.size()) + ")");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    s.m[k] = s.beta1 * s.m[k] + (1.0 - s.beta1) * g;
    s.v[k] = s.beta2 * s.v[k] + (1.0 - s.beta2) * g * g;
    const double m_hat = s.m[k] / c1;
    const double v_hat = s.v[k] / c2;
    params[k] -= s.lr * m_hat / (std::sqrt(v_hat) + s.eps);
  }
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace ctf::nn
