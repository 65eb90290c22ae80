#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctf/engine.hpp"
#include "ctf/nn.hpp"
#include "ctf/perception.hpp"

namespace ctf {

// ---- scripted expert -------------------------------------------------------

enum class ExpertRole { Runner, Defender, Support };
ExpertRole expert_role(int agent);
const char* role_name(ExpertRole r);

struct ExpertConfig {
  double throw_range = 8.0;
  // Largest miss distance (predicted target to ball line) that still counts
  // as aligned.
  double aim_tolerance = 0.6;
};

// World-frame intent of the rule-based player. Deterministic in (w, agent).
Intent scripted_expert_intent(const WorldState& w, int agent, const ExpertConfig& cfg = {});
// The same decision as a team-frame Action (what a demo records).
Action scripted_expert(const WorldState& w, int agent, const PerceptionConfig& pcfg = {},
                       const ExpertConfig& cfg = {});

// ---- policy sources ----------------------------------------------------------

enum class PolicyKind { Checkpoint, Expert, Random };

struct PolicySource {
  PolicyKind kind = PolicyKind::Expert;
  std::string label;
  std::shared_ptr<const nn::Checkpoint> checkpoint;

  static PolicySource expert();
  static PolicySource random();
  static PolicySource from_checkpoint(std::shared_ptr<const nn::Checkpoint> ckpt, std::string label);
  // "expert", "random", or a checkpoint file path (optionally "ckpt:PATH").
  static PolicySource parse(const std::string& spec);
};

// Throws FormatError if a checkpoint does not fit the arena's observation.
void check_compatible(const PolicySource& src, const ArenaConfig& arena);

// One world-frame intent for `agent`. Checkpoints act greedily; the random
// source draws uniformly from the 18 actions using rng.
Intent act(const PolicySource& src, const WorldState& w, int agent, Rng& rng);

// ---- evaluation --------------------------------------------------------------

struct EpisodeRecord {
  int episode = 0;
  Outcome outcome;
  double duration_s = 0.0;
};

struct Metrics {
  int episodes = 0;
  double mean_round_time_s = 0.0;
  double draw_rate = 0.0;
  double win_rate_blue = 0.0;
  double win_rate_white = 0.0;
  // NaN when the team never won.
  double mean_win_time_blue_s = 0.0;
  double mean_win_time_white_s = 0.0;
  std::vector<EpisodeRecord> log;
};

// Draws count at draw_time regardless of the logged duration.
Metrics compute_metrics(std::span<const EpisodeRecord> log, double draw_time);

nlohmann::json metrics_json(const Metrics& m);
std::string metrics_table(const Metrics& m);
void write_episode_csv(const std::filesystem::path& path, const Metrics& m);

struct EvalOptions {
  ArenaConfig arena;
  int episodes = 100;
  std::uint64_t seed = 1;
};

// Episodes run in parallel (OpenMP); episode i always uses the same seeds,
// so the result does not depend on the thread count.
Metrics evaluate(const PolicySource& blue, const PolicySource& white, const EvalOptions& opt);
Metrics evaluate_serial(const PolicySource& blue, const PolicySource& white, const EvalOptions& opt);

// Plays a single episode; exposed for the benchmark and tests.
EpisodeRecord play_episode(const PolicySource& blue, const PolicySource& white, const ArenaConfig& arena,
                           std::uint64_t seed, int episode);

// ---- expert demonstrations -------------------------------------------------

inline constexpr int kRoundsPerSession = 10;

// Expert-vs-expert sessions of kRoundsPerSession rounds; every agent is
// recorded, so each session yields 6 files. Returns the files in order.
std::vector<std::filesystem::path> generate_expert_demos(int n_sessions, std::uint64_t seed,
                                                         const std::filesystem::path& out_dir,
                                                         const ArenaConfig& arena = {});

}  // namespace ctf
