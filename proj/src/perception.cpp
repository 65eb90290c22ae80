#include "ctf/perception.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace ctf {
namespace {

enum FlagView { kAtSpawn = 0, kCarriedAlly = 1, kCarriedEnemy = 2, kDropped = 3 };

void write_flag(const WorldState& w, const FlagState& f, Team viewer_team, double sx, std::span<double> out) {
  const ArenaConfig& a = *w.arena;
  out[0] = sx * f.pos.x / a.half_width();
  out[1] = f.pos.y / a.half_height();
  std::fill(out.begin() + 2, out.begin() + 6, 0.0);
  int mode = kAtSpawn;
  if (f.mode == FlagMode::Dropped) mode = kDropped;
  if (f.mode == FlagMode::Carried) mode = team_of(f.carrier) == viewer_team ? kCarriedAlly : kCarriedEnemy;
  out[2 + mode] = 1.0;
}

}  // namespace

int obs_dim(const ArenaConfig& /*arena*/, int rays) {
  if (rays <= 0) throw ContractError("obs_dim: rays must be positive, got " + std::to_string(rays));
  return kStateValues + rays * kRayFeatures;
}

Observation observe(const WorldState& w, int agent, const PerceptionConfig& cfg) {
  Observation out(static_cast<std::size_t>(obs_dim(*w.arena, cfg.rays)));
  observe_into(w, agent, cfg, out);
  return out;
}

void observe_into(const WorldState& w, int agent, const PerceptionConfig& cfg, std::span<double> out) {
  if (agent < 0 || agent >= kNumPlayers) throw ContractError("observe: agent id out of range");
  const ArenaConfig& a = *w.arena;
  if (out.size() != static_cast<std::size_t>(obs_dim(a, cfg.rays))) throw ContractError("observe: output size");
  const PlayerState& me = w.players[agent];
  const double sx = (cfg.team_frame && me.team == Team::White) ? -1.0 : 1.0;
  using namespace obs_index;

  out[kSelfPos] = sx * me.pos.x / a.half_width();
  out[kSelfPos + 1] = me.pos.y / a.half_height();
  out[kSelfVel] = sx * me.vel.x / a.max_speed;
  out[kSelfVel + 1] = me.vel.y / a.max_speed;
  out[kFacing] = sx * me.facing.x;
  out[kFacing + 1] = me.facing.y;
  write_flag(w, w.flag(me.team), me.team, sx, out.subspan(kOwnFlag, 6));
  write_flag(w, w.flag(other(me.team)), me.team, sx, out.subspan(kEnemyFlag, 6));
  out[kHoldingBall] = me.held_ball ? 1.0 : 0.0;
  out[kStunFraction] = static_cast<double>(me.stun_ticks) / static_cast<double>(a.stun_ticks());
  out[kCarryingFlag] = me.carried_flag ? 1.0 : 0.0;

  int slot = 0;
  const int first = me.team == Team::Blue ? 0 : kPlayersPerTeam;
  for (int id = first; id < first + kPlayersPerTeam; ++id) {
    if (id == agent) continue;
    const PlayerState& mate = w.players[id];
    double* dst = &out[kTeammates + 3 * slot];
    if (mate.active) {
      dst[0] = sx * (mate.pos.x - me.pos.x) / a.width;
      dst[1] = (mate.pos.y - me.pos.y) / a.height;
      dst[2] = mate.carried_flag ? 1.0 : 0.0;
    } else {
      dst[0] = dst[1] = dst[2] = 0.0;
    }
    ++slot;
  }
  out[kTimeFraction] = std::min(1.0, w.time_s() / a.draw_time);

  for (int k = 0; k < cfg.rays; ++k) {
    const double theta = 2.0 * std::numbers::pi * k / cfg.rays;
    const Vec2 dir{sx * std::cos(theta), std::sin(theta)};
    const RayHit hit = raycast(w, me.pos, dir, cfg.ray_range, agent);
    double* dst = &out[kStateValues + kRayFeatures * k];
    std::fill(dst, dst + kRayFeatures, 0.0);
    if (hit.hit) {
      dst[0] = hit.dist / cfg.ray_range;
      dst[1 + static_cast<int>(hit.tag)] = 1.0;
    } else {
      dst[0] = 1.0;
    }
  }
}

Intent decode_action(const Action& a) {
  for (int b = 0; b < kNumBranches; ++b) {
    if (a.branch[b] < 0 || a.branch[b] >= kActionBranches[b]) {
      throw ContractError("decode_action: branch " + std::to_string(b) + " index " + std::to_string(a.branch[b]) +
                          " out of range");
    }
  }
  return {a.branch[0] - 1, a.branch[1] - 1, a.branch[2] == 1};
}

Action encode_intent(const Intent& in) { return Action{{in.move_x + 1, in.move_y + 1, in.throw_ball ? 1 : 0}}; }

Intent to_world_intent(const Action& a, Team team, const PerceptionConfig& cfg) {
  Intent in = decode_action(a);
  if (cfg.team_frame && team == Team::White) in.move_x = -in.move_x;
  return in;
}

Action from_world_intent(const Intent& in, Team team, const PerceptionConfig& cfg) {
  Intent local = in;
  if (cfg.team_frame && team == Team::White) local.move_x = -local.move_x;
  return encode_intent(local);
}

std::array<double, kActionOneHotDim> action_one_hot(const Action& a) {
  std::array<double, kActionOneHotDim> v{};
  v[a.branch[0]] = 1.0;
  v[3 + a.branch[1]] = 1.0;
  v[6 + a.branch[2]] = 1.0;
  return v;
}

std::array<double, kNumPlayers> compute_rewards(std::span<const GameEvent> events, const RewardSpec& spec) {
  std::array<double, kNumPlayers> r{};
  bool terminal = false;
  for (const GameEvent& e : events) {
    switch (e.kind) {
      case EventKind::FlagDelivered:
        for (int id = 0; id < kNumPlayers; ++id) {
          r[id] += team_of(id) == e.team ? spec.flag_delivered_team : -spec.flag_delivered_team;
        }
        break;
      case EventKind::FlagPickup: r[e.player] += spec.flag_pickup; break;
      case EventKind::BallHit:
        r[e.player] += spec.ball_hit_dealt;
        r[e.other] += spec.ball_hit_taken;
        break;
      case EventKind::FlagReturned: r[e.player] += spec.own_flag_returned; break;
      case EventKind::RoundEnd: terminal = true; break;
      case EventKind::BallPickup:
      case EventKind::Throw: break;
    }
  }
  if (!terminal) {
    for (double& v : r) v += spec.time_penalty_per_tick;
  }
  return r;
}

}  // namespace ctf
