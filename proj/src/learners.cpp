#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctf/training.hpp"

namespace ctf {

using nn::Matrix;

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

void gather_rows(const Matrix& src, std::span<const std::size_t> rows, Matrix& dst) {
  dst = Matrix(static_cast<int>(rows.size()), src.cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(src.row(static_cast<int>(rows[r])), src.cols, dst.row(static_cast<int>(r)));
  }
}

int argmax_branch(std::span<const double> logits, int b) {
  int best = 0;
  for (int k = 1; k < kActionBranches[b]; ++k) {
    if (logits[nn::kBranchOffset[b] + k] > logits[nn::kBranchOffset[b] + best]) best = k;
  }
  return best;
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(what + " is not finite (" + std::to_string(v) + ")");
}

}  // namespace

// ---- datasets -----------------------------------------------------------------

namespace {

void append_trajectory(DemoDataset& d, const Trajectory& t, int expected_obs_dim, const std::string& where) {
  if (t.header.obs_layout != kObsLayout) {
    throw FormatError(where + ": observation layout '" + t.header.obs_layout + "' is not " + kObsLayout);
  }
  if (t.header.obs_dim != expected_obs_dim) {
    throw FormatError(where + ": observation width " + std::to_string(t.header.obs_dim) + " does not match " +
                      std::to_string(expected_obs_dim));
  }
  for (const DemoStep& s : t.steps) {
    if (static_cast<int>(s.obs.size()) != expected_obs_dim) {
      throw FormatError(where + ": step " + std::to_string(s.t) + " has " + std::to_string(s.obs.size()) +
                        " observation values");
    }
    d.obs.data.insert(d.obs.data.end(), s.obs.begin(), s.obs.end());
    d.acts.push_back(s.act);
  }
  d.obs.rows = static_cast<int>(d.acts.size());
}

DemoDataset empty_dataset(int obs_dim) {
  DemoDataset d;
  d.obs_dim = obs_dim;
  d.obs.cols = obs_dim;
  return d;
}

}  // namespace

DemoDataset make_dataset(std::span<const Trajectory> demos, int expected_obs_dim) {
  DemoDataset d = empty_dataset(expected_obs_dim);
  for (const Trajectory& t : demos) {
    append_trajectory(d, t, expected_obs_dim,
                      "demo " + t.header.session_id + " agent " + std::to_string(t.header.agent_id));
  }
  return d;
}

DemoDataset load_demo_dataset(std::span<const std::string> paths, int expected_obs_dim) {
  DemoDataset d = empty_dataset(expected_obs_dim);
  for (const std::string& p : paths) {
    const auto files = list_demo_files(p);
    if (files.empty()) throw IoError("no demo files at " + p);
    for (const auto& f : files) {
      Trajectory t;
      try {
        t = read_demo(f);
      } catch (const FormatError& e) {
        const std::string msg = e.what();
        throw FormatError(msg.find(f.string()) == std::string::npos ? f.string() + ": " + msg : msg);
      }
      append_trajectory(d, t, expected_obs_dim, f.string());
    }
  }
  return d;
}

DemoDataset subset(const DemoDataset& d, std::span<const std::size_t> rows) {
  DemoDataset s = empty_dataset(d.obs_dim);
  gather_rows(d.obs, rows, s.obs);
  for (std::size_t r : rows) s.acts.push_back(d.acts[r]);
  return s;
}

std::pair<DemoDataset, DemoDataset> split_dataset(const DemoDataset& d, double holdout_frac, std::uint64_t seed) {
  if (!(holdout_frac >= 0.0 && holdout_frac <= 1.0)) throw ContractError("split_dataset: fraction outside [0, 1]");
  auto idx = iota_indices(d.size());
  Rng rng(seed);
  shuffle_indices(idx, rng);
  const auto n_hold = static_cast<std::size_t>(std::llround(holdout_frac * static_cast<double>(d.size())));
  std::vector<std::size_t> train(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> hold(idx.end() - static_cast<std::ptrdiff_t>(n_hold), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(hold.begin(), hold.end());
  return {subset(d, train), subset(d, hold)};
}

std::array<double, kNumBranches> branch_agreement(const nn::PolicyParams& p, const DemoDataset& d) {
  std::array<double, kNumBranches> agree{};
  if (d.size() == 0) return agree;
  nn::BatchCache cache;
  nn::forward_batch(p.net, d.obs, cache);
  const Matrix& out = cache.output();
  std::array<std::size_t, kNumBranches> hits{};
  for (int r = 0; r < out.rows; ++r) {
    for (int b = 0; b < kNumBranches; ++b) {
      if (argmax_branch(out.row_span(r), b) == d.acts[r].branch[b]) ++hits[b];
    }
  }
  for (int b = 0; b < kNumBranches; ++b) agree[b] = static_cast<double>(hits[b]) / static_cast<double>(d.size());
  return agree;
}

// ---- behavioural cloning ---------------------------------------------------------

double bc_step(nn::PolicyParams& p, nn::AdamState& opt, const Matrix& obs, std::span<const Action> acts) {
  nn::BatchCache cache;
  nn::forward_batch(p.net, obs, cache);
  Matrix d_out;
  const double loss = nn::bc_loss(cache.output(), acts, d_out);
  require_finite(loss, "BC loss");
  std::vector<double> grad(p.net.params.size(), 0.0);
  nn::backward_batch(p.net, cache, d_out, grad);
  nn::adam_update(p.net.params, grad, opt);
  return loss;
}

BcResult train_bc(const TrainConfig& cfg, const DemoDataset& data, const nn::PolicyParams* init) {
  if (data.size() == 0) throw ContractError("train_bc: no demonstration steps");
  BcResult res;
  res.policy = init ? *init : nn::init_params(data.obs_dim, derive_seed(cfg.seed, 1), cfg.hidden);
  if (res.policy.obs_dim() != data.obs_dim) {
    throw FormatError("train_bc: policy expects " + std::to_string(res.policy.obs_dim()) +
                      " observation values, demos have " + std::to_string(data.obs_dim));
  }
  nn::AdamState opt = nn::make_adam(res.policy.net.params.size(), cfg.bc.lr);
  Rng rng(derive_seed(cfg.seed, 2));
  auto idx = iota_indices(data.size());
  Matrix obs;
  std::vector<Action> acts;
  for (int epoch = 0; epoch < cfg.bc.epochs; ++epoch) {
    shuffle_indices(idx, rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(cfg.bc.batch)) {
      const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(cfg.bc.batch));
      const std::span<const std::size_t> rows(idx.data() + start, end - start);
      gather_rows(data.obs, rows, obs);
      acts.clear();
      for (std::size_t r : rows) acts.push_back(data.acts[r]);
      total += bc_step(res.policy, opt, obs, acts);
      ++batches;
    }
    res.loss_curve.push_back(total / batches);
  }
  return res;
}

BcResult train_bc(const TrainConfig& cfg, std::span<const Trajectory> demos) {
  if (demos.empty()) throw ContractError("train_bc: no demonstrations");
  return train_bc(cfg, make_dataset(demos, demos.front().header.obs_dim));
}

// ---- GAIL ---------------------------------------------------------------------------

Matrix discriminator_inputs(const Matrix& obs, std::span<const Action> acts) {
  if (acts.size() != static_cast<std::size_t>(obs.rows)) throw ContractError("discriminator_inputs: size mismatch");
  Matrix x(obs.rows, obs.cols + kActionOneHotDim);
  for (int r = 0; r < obs.rows; ++r) {
    std::copy_n(obs.row(r), obs.cols, x.row(r));
    const auto oh = action_one_hot(acts[r]);
    std::copy(oh.begin(), oh.end(), x.row(r) + obs.cols);
  }
  return x;
}

double discriminator_prob(const nn::DiscriminatorParams& d, std::span<const double> obs, const Action& a) {
  if (static_cast<int>(obs.size()) != d.obs_dim()) throw ContractError("discriminator_prob: observation width mismatch");
  std::vector<double> x(obs.begin(), obs.end());
  const auto oh = action_one_hot(a);
  x.insert(x.end(), oh.begin(), oh.end());
  nn::ForwardCache cache;
  nn::forward(d.net, x, cache);
  return nn::clamped_sigmoid(cache.output()[0]);
}

namespace {

Matrix stack(const Matrix& a, const Matrix& b) {
  Matrix x(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), x.data.begin());
  std::copy(b.data.begin(), b.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return x;
}

void check_gail_batches(const nn::DiscriminatorParams& d, const Matrix& expert, const Matrix& policy) {
  if (expert.rows == 0 || policy.rows == 0) throw ContractError("gail_update: empty batch");
  const int want = d.net.shape.input;
  if (expert.cols != want || policy.cols != want) {
    throw ContractError("gail_update: batch width " + std::to_string(expert.cols) + "/" + std::to_string(policy.cols) +
                        " does not match discriminator input " + std::to_string(want));
  }
}

}  // namespace

GailStats discriminator_eval(const nn::DiscriminatorParams& d, const Matrix& expert, const Matrix& policy) {
  check_gail_batches(d, expert, policy);
  const Matrix x = stack(expert, policy);
  std::vector<double> labels(static_cast<std::size_t>(x.rows), 0.0);
  std::fill_n(labels.begin(), expert.rows, 1.0);
  nn::BatchCache cache;
  nn::forward_batch(d.net, x, cache);
  Matrix d_out;
  GailStats s;
  s.loss = nn::discriminator_loss(cache.output(), labels, d_out);
  int correct = 0;
  for (int r = 0; r < x.rows; ++r) {
    const bool says_expert = nn::clamped_sigmoid(cache.output()(r, 0)) > 0.5;
    if (says_expert == (labels[r] == 1.0)) ++correct;
  }
  s.accuracy = static_cast<double>(correct) / x.rows;
  return s;
}

GailStats gail_update(nn::DiscriminatorParams& d, nn::AdamState& opt, const Matrix& expert, const Matrix& policy) {
  check_gail_batches(d, expert, policy);
  const Matrix x = stack(expert, policy);
  std::vector<double> labels(static_cast<std::size_t>(x.rows), 0.0);
  std::fill_n(labels.begin(), expert.rows, 1.0);
  nn::BatchCache cache;
  nn::forward_batch(d.net, x, cache);
  Matrix d_out;
  GailStats s;
  s.loss = nn::discriminator_loss(cache.output(), labels, d_out);
  require_finite(s.loss, "discriminator loss");
  int correct = 0;
  for (int r = 0; r < x.rows; ++r) {
    const bool says_expert = nn::clamped_sigmoid(cache.output()(r, 0)) > 0.5;
    if (says_expert == (labels[r] == 1.0)) ++correct;
  }
  s.accuracy = static_cast<double>(correct) / x.rows;
  std::vector<double> grad(d.net.params.size(), 0.0);
  nn::backward_batch(d.net, cache, d_out, grad);
  nn::adam_update(d.net.params, grad, opt);
  return s;
}

double gail_reward_from_prob(double d, double scale) {
  const double c = std::clamp(d, nn::kProbClamp, 1.0 - nn::kProbClamp);
  return -std::log1p(-c) * scale;
}

double gail_reward(const nn::DiscriminatorParams& d, std::span<const double> obs, const Action& a, double scale) {
  return gail_reward_from_prob(discriminator_prob(d, obs, a), scale);
}

// ---- GAE -----------------------------------------------------------------------------

void compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
                 double bootstrap, double gamma, double lambda, std::span<double> advantages,
                 std::span<double> returns) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n || advantages.size() != n || returns.size() != n) {
    throw ContractError("compute_gae: length mismatch");
  }
  double next_adv = 0.0;
  double next_value = bootstrap;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    advantages[k] = next_adv;
    returns[k] = next_adv + values[k];
    next_value = values[k];
  }
}

GaeResult compute_gae(const RolloutBuffer& buf, double gamma, double lambda, double gail_coef) {
  GaeResult g;
  for (const RolloutStream& s : buf.streams) {
    const std::size_t n = s.env_reward.size();
    std::vector<double> r(s.env_reward);
    if (gail_coef != 0.0) {
      for (std::size_t k = 0; k < n; ++k) r[k] += gail_coef * s.gail_reward[k];
    }
    std::vector<double> adv(n), ret(n);
    compute_gae(r, s.value, s.done, s.bootstrap_value, gamma, lambda, adv, ret);
    g.advantages.push_back(std::move(adv));
    g.returns.push_back(std::move(ret));
  }
  return g;
}

// ---- PPO -------------------------------------------------------------------------------

PpoData flatten(const RolloutBuffer& buf, const GaeResult& gae) {
  PpoData d;
  std::size_t n = 0;
  for (const RolloutStream& s : buf.streams) n += s.act.size();
  d.obs = Matrix(static_cast<int>(n), buf.obs_dim);
  std::size_t off = 0;
  for (std::size_t i = 0; i < buf.streams.size(); ++i) {
    const RolloutStream& s = buf.streams[i];
    std::copy(s.obs.begin(), s.obs.end(), d.obs.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += s.obs.size();
    d.acts.insert(d.acts.end(), s.act.begin(), s.act.end());
    d.old_logprob.insert(d.old_logprob.end(), s.logprob.begin(), s.logprob.end());
    d.advantages.insert(d.advantages.end(), gae.advantages[i].begin(), gae.advantages[i].end());
    d.returns.insert(d.returns.end(), gae.returns[i].begin(), gae.returns[i].end());
  }
  return d;
}

PpoStats ppo_update(nn::PolicyParams& p, nn::AdamState& opt, const PpoData& data, const PpoConfig& cfg, Rng& rng,
                    const BcAux& bc) {
  const std::size_t n = data.acts.size();
  if (n == 0) throw ContractError("ppo_update: empty batch");
  PpoStats st;
  auto idx = iota_indices(n);
  Matrix obs, bc_obs;
  std::vector<Action> acts, bc_acts;
  std::vector<double> old_lp, adv, ret;
  std::vector<double> grad(p.net.params.size());
  nn::BatchCache cache, bc_cache;
  const bool use_bc = bc.data && bc.strength > 0.0 && bc.data->size() > 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(idx, rng);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.minibatch)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.minibatch));
      const std::span<const std::size_t> rows(idx.data() + start, end - start);
      gather_rows(data.obs, rows, obs);
      acts.clear();
      old_lp.clear();
      adv.clear();
      ret.clear();
      for (std::size_t r : rows) {
        acts.push_back(data.acts[r]);
        old_lp.push_back(data.old_logprob[r]);
        adv.push_back(data.advantages[r]);
        ret.push_back(data.returns[r]);
      }
      if (adv.size() > 1) {
        double mean = 0.0;
        for (double a : adv) mean += a;
        mean /= static_cast<double>(adv.size());
        double var = 0.0;
        for (double a : adv) var += (a - mean) * (a - mean);
        const double sd = std::sqrt(var / static_cast<double>(adv.size()));
        for (double& a : adv) a = (a - mean) / (sd + 1e-8);
      }
      nn::forward_batch(p.net, obs, cache);
      Matrix d_out;
      const nn::PpoLossParts parts =
          nn::ppo_loss(cache.output(), {acts, old_lp, adv, ret}, cfg.clip_eps, cfg.value_coef, cfg.entropy_coef, d_out);
      require_finite(parts.total, "PPO loss");
      if (st.minibatches == 0) st.max_ratio_error_first = parts.max_ratio_error;
      std::fill(grad.begin(), grad.end(), 0.0);
      nn::backward_batch(p.net, cache, d_out, grad);
      if (use_bc) {
        std::vector<std::size_t> bc_rows(static_cast<std::size_t>(bc.batch));
        for (auto& r : bc_rows) r = uniform_index(*bc.rng, bc.data->size());
        gather_rows(bc.data->obs, bc_rows, bc_obs);
        bc_acts.clear();
        for (std::size_t r : bc_rows) bc_acts.push_back(bc.data->acts[r]);
        nn::forward_batch(p.net, bc_obs, bc_cache);
        Matrix bc_d;
        const double l = nn::bc_loss(bc_cache.output(), bc_acts, bc_d, bc.strength);
        require_finite(l, "BC auxiliary loss");
        nn::backward_batch(p.net, bc_cache, bc_d, grad);
        st.bc_loss += l / bc.strength;
      }
      if (cfg.max_grad_norm > 0.0) nn::clip_grad_norm(grad, cfg.max_grad_norm);
      nn::adam_update(p.net.params, grad, opt);
      st.surrogate += parts.surrogate;
      st.value += parts.value;
      st.entropy += parts.entropy;
      st.approx_kl += parts.approx_kl;
      st.clip_fraction += parts.clip_fraction;
      ++st.minibatches;
    }
  }
  const double m = st.minibatches;
  st.surrogate /= m;
  st.value /= m;
  st.entropy /= m;
  st.approx_kl /= m;
  st.clip_fraction /= m;
  st.bc_loss /= m;
  return st;
}

// ---- self-play ---------------------------------------------------------------------------

SnapshotPool::SnapshotPool(int pool_size) : pool_size_(pool_size) {
  if (pool_size < 1) throw ContractError("SnapshotPool: pool_size must be >= 1");
}

void SnapshotPool::push(Snapshot s) {
  if (!s.params) throw ContractError("SnapshotPool::push: null params");
  pool_.push_back(std::move(s));
  while (pool_.size() > static_cast<std::size_t>(pool_size_)) pool_.pop_front();
}

std::shared_ptr<const nn::PolicyParams> selfplay_pick(const SnapshotPool& pool,
                                                      std::shared_ptr<const nn::PolicyParams> current,
                                                      double latest_prob, Rng& rng) {
  if (pool.empty()) return current;
  if (uniform01(rng) < latest_prob) return current;
  return pool.snapshots()[uniform_index(rng, pool.size())].params;
}

bool snapshot_due(std::int64_t before, std::int64_t after, std::int64_t every) {
  if (every <= 0) throw ContractError("snapshot_due: every must be positive");
  return after / every > before / every;
}

double anneal(double start, std::int64_t step, std::int64_t max_env_steps) {
  const double half = 0.5 * static_cast<double>(max_env_steps);
  if (half <= 0.0) return 0.0;
  return start * std::max(0.0, 1.0 - static_cast<double>(step) / half);
}

}  // namespace ctf
