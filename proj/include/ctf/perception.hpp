#pragma once

#include <array>
#include <span>
#include <vector>

#include "ctf/engine.hpp"

namespace ctf {

inline constexpr const char* kObsLayout = "obsv1";
inline constexpr int kStateValues = 28;
inline constexpr int kRayFeatures = 1 + kNumHitTags;
inline constexpr int kDefaultRays = 24;
inline constexpr int kNumBranches = 3;
inline constexpr std::array<int, kNumBranches> kActionBranches{3, 3, 2};
inline constexpr int kActionOneHotDim = 3 + 3 + 2;

// Offsets into the state block of an obsv1 observation.
namespace obs_index {
inline constexpr int kSelfPos = 0;
inline constexpr int kSelfVel = 2;
inline constexpr int kFacing = 4;
inline constexpr int kOwnFlag = 6;    // pos(2) + mode one-hot(4)
inline constexpr int kEnemyFlag = 12;
inline constexpr int kHoldingBall = 18;
inline constexpr int kStunFraction = 19;
inline constexpr int kCarryingFlag = 20;
inline constexpr int kTeammates = 21;  // 2 x (rel pos(2) + carrying(1))
inline constexpr int kTimeFraction = 27;
}  // namespace obs_index

struct PerceptionConfig {
  int rays = kDefaultRays;
  double ray_range = 30.0;
  // White agents see the x-mirrored world so both teams share one frame.
  bool team_frame = true;
};

using Observation = std::vector<double>;

// Branch indices: move_x in {0,1,2} = {-1,0,+1}, move_y likewise,
// act in {0,1} = {none, throw}.
struct Action {
  std::array<int, kNumBranches> branch{1, 1, 0};
  bool operator==(const Action&) const = default;
};

int obs_dim(const ArenaConfig& arena, int rays);

Observation observe(const WorldState& w, int agent, const PerceptionConfig& cfg = {});
void observe_into(const WorldState& w, int agent, const PerceptionConfig& cfg, std::span<double> out);

// Throws ContractError for out-of-range branch indices.
Intent decode_action(const Action& a);
Action encode_intent(const Intent& in);

// Maps an action chosen in the agent's team frame to a world-frame intent.
Intent to_world_intent(const Action& a, Team team, const PerceptionConfig& cfg = {});
// Inverse of to_world_intent.
Action from_world_intent(const Intent& in, Team team, const PerceptionConfig& cfg = {});

// Concatenated per-branch one-hot encoding (3 + 3 + 2 values).
std::array<double, kActionOneHotDim> action_one_hot(const Action& a);

struct RewardSpec {
  double flag_delivered_team = 1.0;
  double flag_pickup = 0.3;
  double ball_hit_dealt = 0.1;
  double ball_hit_taken = -0.1;
  double own_flag_returned = 0.2;
  double time_penalty_per_tick = -0.0005;
};

// Per-agent reward for one engine tick's events.
std::array<double, kNumPlayers> compute_rewards(std::span<const GameEvent> events, const RewardSpec& spec = {});

}  // namespace ctf
