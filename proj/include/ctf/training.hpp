#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctf/demos.hpp"
#include "ctf/engine.hpp"
#include "ctf/nn.hpp"
#include "ctf/perception.hpp"

namespace ctf {

// ---- configuration -----------------------------------------------------------

enum class Algorithm { BC, GAIL_PPO, PPO, Combo };
enum class OpponentKind { SelfPlay, Expert, Random, None };
enum class Curriculum { None, FetchFlag };

const char* algorithm_name(Algorithm a);
const char* opponent_name(OpponentKind k);
const char* curriculum_name(Curriculum c);

struct PpoConfig {
  double lr = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int epochs = 3;
  int minibatch = 512;
  int horizon = 2048;  // steps per learner agent per iteration
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;  // 0 disables clipping
  int num_envs = 1;
};

struct BcConfig {
  double lr = 3e-4;
  int batch = 256;
  int epochs = 20;
};

struct GailConfig {
  double lr = 1e-4;
  int batch = 256;
  double reward_scale = 1.0;
  int updates_per_iter = 1;
};

struct SelfPlayConfig {
  std::int64_t snapshot_every = 50'000;
  int pool_size = 10;
  double opponent_latest_prob = 0.5;
};

struct ComboConfig {
  double bc_strength = 0.5;
  double gail_strength = 0.1;
};

struct TrainConfig {
  std::string run_id = "run";
  std::uint64_t seed = 1;
  Algorithm algorithm = Algorithm::Combo;
  ComboConfig combo;
  std::vector<std::string> demo_paths;
  std::int64_t max_env_steps = 1'000'000;
  PpoConfig ppo;
  BcConfig bc;
  GailConfig gail;
  SelfPlayConfig selfplay;
  std::int64_t eval_every = 100'000;
  int eval_episodes = 0;  // episodes vs the scripted expert at each checkpoint
  std::string checkpoint_dir = "checkpoints";
  OpponentKind opponent = OpponentKind::SelfPlay;
  Curriculum curriculum = Curriculum::None;
  ArenaConfig arena;
  int rays = kDefaultRays;
  int hidden = nn::kDefaultHidden;
  // Reward per unit of new closest approach to the current objective; used by
  // the fetch-flag curriculum.
  double progress_reward = 0.0;
  std::string init_checkpoint;  // optional warm start

  // Throws ConfigError naming the offending key.
  void validate() const;
  // Arena actually played (the curriculum arena when one is selected).
  ArenaConfig effective_arena() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Unknown keys are rejected so typos do not silently fall back to defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
// "a.b.c=value"; value is parsed as JSON and otherwise taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
// Throws ConfigError naming the path if it is missing or malformed.
TrainConfig load_train_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

// Small open arena, only Blue slot 0 active, White's flag close by.
ArenaConfig fetch_flag_arena();

// ---- demonstration data ---------------------------------------------------------

struct DemoDataset {
  int obs_dim = 0;
  nn::Matrix obs;
  std::vector<Action> acts;
  std::size_t size() const { return acts.size(); }
};

// Throws FormatError citing the trajectory when its layout or width differs.
DemoDataset make_dataset(std::span<const Trajectory> demos, int expected_obs_dim);
// Reads files (directories are expanded); errors cite the file.
DemoDataset load_demo_dataset(std::span<const std::string> paths, int expected_obs_dim);
// Seeded random split; the second part holds round(frac * n) samples.
std::pair<DemoDataset, DemoDataset> split_dataset(const DemoDataset& d, double holdout_frac, std::uint64_t seed);
DemoDataset subset(const DemoDataset& d, std::span<const std::size_t> rows);

// Fraction of samples whose greedy branch choice matches, per branch.
std::array<double, kNumBranches> branch_agreement(const nn::PolicyParams& p, const DemoDataset& d);

// ---- behavioural cloning ------------------------------------------------------

struct BcResult {
  nn::PolicyParams policy;
  std::vector<double> loss_curve;  // mean minibatch loss per epoch
};

// One Adam step on the batch; returns the loss before the step.
double bc_step(nn::PolicyParams& p, nn::AdamState& opt, const nn::Matrix& obs, std::span<const Action> acts);

BcResult train_bc(const TrainConfig& cfg, const DemoDataset& data, const nn::PolicyParams* init = nullptr);
BcResult train_bc(const TrainConfig& cfg, std::span<const Trajectory> demos);

// ---- GAIL ---------------------------------------------------------------------

// Rows of [obs, one-hot action].
nn::Matrix discriminator_inputs(const nn::Matrix& obs, std::span<const Action> acts);
double discriminator_prob(const nn::DiscriminatorParams& d, std::span<const double> obs, const Action& a);

struct GailStats {
  double loss = 0.0;
  double accuracy = 0.0;  // at threshold 0.5, over both batches
};

// One Adam step on BCE with expert label 1 and policy label 0. Inputs are
// discriminator rows. Throws ContractError on width mismatch or empty input.
GailStats gail_update(nn::DiscriminatorParams& d, nn::AdamState& opt, const nn::Matrix& expert,
                      const nn::Matrix& policy);
GailStats discriminator_eval(const nn::DiscriminatorParams& d, const nn::Matrix& expert, const nn::Matrix& policy);

// -ln(1 - D), D clamped to [1e-7, 1 - 1e-7], times scale.
double gail_reward_from_prob(double d, double scale = 1.0);
double gail_reward(const nn::DiscriminatorParams& d, std::span<const double> obs, const Action& a, double scale = 1.0);

// ---- rollouts -------------------------------------------------------------------

struct Opponent {
  OpponentKind kind = OpponentKind::None;
  std::shared_ptr<const nn::PolicyParams> params;  // SelfPlay only
};

struct RolloutOptions {
  ArenaConfig arena;
  PerceptionConfig perception;
  RewardSpec rewards;
  double progress_reward = 0.0;
};

struct EpisodeStat {
  std::int64_t end_step = 0;  // global env step at which it ended
  double ret = 0.0;           // mean undiscounted env return over learner agents
  std::int64_t length = 0;    // ticks
  Outcome outcome;
  Team learner = Team::Blue;
};

// One environment instance that persists across iterations.
struct RolloutWorker {
  WorldState world;
  Rng rng;
  Team learner = Team::Blue;
  std::int64_t episode_len = 0;
  std::array<double, kPlayersPerTeam> episode_return{};
  std::array<double, kPlayersPerTeam> best_dist{};
  std::array<bool, kPlayersPerTeam> had_flag{};
};

RolloutWorker make_worker(const ArenaConfig& arena, std::uint64_t seed);

// One learner agent's contiguous run of `horizon` steps.
struct RolloutStream {
  int worker = 0;
  int slot = 0;
  std::vector<double> obs;  // horizon x obs_dim
  std::vector<Action> act;
  std::vector<double> logprob;
  std::vector<double> value;
  std::vector<double> env_reward;
  std::vector<double> gail_reward;
  std::vector<std::uint8_t> done;
  double bootstrap_value = 0.0;  // V of the state after the last step
};

struct RolloutBuffer {
  int horizon = 0;
  int obs_dim = 0;
  std::vector<RolloutStream> streams;
  std::vector<EpisodeStat> episodes;
  std::int64_t env_steps = 0;  // ticks simulated, summed over workers
};

// Learner agents sample from `policy` in their team frame; the learner team
// alternates between episodes when there is an opponent. Workers run in
// parallel and are merged in worker order, so the result does not depend on
// the thread count.
RolloutBuffer collect_rollouts(std::vector<RolloutWorker>& workers, const nn::PolicyParams& policy,
                               const Opponent& opponent, int horizon, const RolloutOptions& opt,
                               std::int64_t step_offset = 0);
RolloutBuffer collect_rollouts(const nn::PolicyParams& policy, const Opponent& opponent, int horizon,
                               std::uint64_t seed, const RolloutOptions& opt = {});

// Learner slots that produce streams for this arena.
std::vector<int> learner_slots(const ArenaConfig& arena, bool alternate);

// ---- advantage estimation ---------------------------------------------------------

// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t, A_t = delta_t + gamma lambda (1 - done_t) A_{t+1},
// with V_T = bootstrap; returns = A + V.
void compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
                 double bootstrap, double gamma, double lambda, std::span<double> advantages,
                 std::span<double> returns);

struct GaeResult {
  std::vector<std::vector<double>> advantages;  // per stream
  std::vector<std::vector<double>> returns;
};
// Rewards are env_reward + gail_coef * gail_reward.
GaeResult compute_gae(const RolloutBuffer& buf, double gamma, double lambda, double gail_coef = 0.0);

// ---- PPO ---------------------------------------------------------------------------

struct PpoData {
  nn::Matrix obs;
  std::vector<Action> acts;
  std::vector<double> old_logprob;
  std::vector<double> advantages;
  std::vector<double> returns;
};
PpoData flatten(const RolloutBuffer& buf, const GaeResult& gae);

struct PpoStats {
  double surrogate = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double max_ratio_error_first = 0.0;  // first minibatch, before any update
  double bc_loss = 0.0;
  int minibatches = 0;
};

struct BcAux {
  const DemoDataset* data = nullptr;
  double strength = 0.0;
  int batch = 256;
  Rng* rng = nullptr;
};

// ppo.epochs passes over shuffled minibatches; advantages normalised per
// minibatch. An optional weighted BC term on demo minibatches joins each step.
PpoStats ppo_update(nn::PolicyParams& p, nn::AdamState& opt, const PpoData& data, const PpoConfig& cfg, Rng& rng,
                    const BcAux& bc = {});

// ---- self-play ------------------------------------------------------------------------

struct Snapshot {
  std::string id;
  std::int64_t step = 0;
  std::shared_ptr<const nn::PolicyParams> params;
};

class SnapshotPool {
 public:
  explicit SnapshotPool(int pool_size);
  // Oldest snapshots fall out once the pool is full.
  void push(Snapshot s);
  const std::deque<Snapshot>& snapshots() const { return pool_; }
  std::size_t size() const { return pool_.size(); }
  bool empty() const { return pool_.empty(); }

 private:
  int pool_size_;
  std::deque<Snapshot> pool_;
};

// Current params with probability latest_prob (always when the pool is
// empty), otherwise a uniformly chosen snapshot.
std::shared_ptr<const nn::PolicyParams> selfplay_pick(const SnapshotPool& pool,
                                                      std::shared_ptr<const nn::PolicyParams> current,
                                                      double latest_prob, Rng& rng);
// True when a multiple of `every` lies in (before, after].
bool snapshot_due(std::int64_t before, std::int64_t after, std::int64_t every);

// Linear decay to zero at max_env_steps / 2.
double anneal(double start, std::int64_t step, std::int64_t max_env_steps);

// ---- the training loop -------------------------------------------------------------------

struct TrainResult {
  nn::Checkpoint checkpoint;
  nlohmann::json report;
  std::filesystem::path checkpoint_path;
  std::filesystem::path report_path;
};

// Writes checkpoints and report.json under cfg.checkpoint_dir. Progress lines
// go to `log` when given.
TrainResult train(const TrainConfig& cfg, std::ostream* log = nullptr);

// Mean return of the report's episodes ending at a step in (from, to]; NaN if none.
double mean_return(const nlohmann::json& report, std::int64_t from, std::int64_t to);

}  // namespace ctf
