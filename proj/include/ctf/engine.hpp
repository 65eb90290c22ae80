#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctf/core.hpp"

namespace ctf {

inline constexpr int kPlayersPerTeam = 3;
inline constexpr int kNumPlayers = 2 * kPlayersPerTeam;

// Axis-aligned rectangle, min corner inclusive of max corner.
struct Rect {
  Vec2 min;
  Vec2 max;
  bool operator==(const Rect&) const = default;
};

// Arena geometry and rule constants. The arena is centred on the origin:
// x in [-width/2, width/2], y in [-height/2, height/2]. Blue defends the
// left (negative x) half.
struct ArenaConfig {
  double width = 40.0;
  double height = 20.0;
  std::vector<Rect> walls = default_walls();
  double base_depth = 4.0;
  std::array<Vec2, 2> flag_spawns{{{-18.0, 0.0}, {18.0, 0.0}}};
  // Blue spawn slots; White uses the x-mirrored slots.
  std::array<Vec2, kPlayersPerTeam> player_spawns{{{-17.0, 4.0}, {-19.0, -3.0}, {-17.0, -6.0}}};
  int ball_count = 6;
  // Balls spawn on x=0 at evenly spaced y slots, each offset by a seeded
  // uniform draw in [-ball_spawn_jitter, ball_spawn_jitter].
  double ball_spawn_jitter = 1.0;
  double player_radius = 0.5;
  double ball_radius = 0.3;
  double flag_radius = 0.5;
  double max_speed = 6.0;
  double throw_speed = 14.0;
  double throw_max_range = 25.0;
  double stun_duration = 3.0;
  double tick_dt = 0.05;
  double draw_time = 1000.0;
  int players_per_team = kPlayersPerTeam;
  // Players listed here are parked: they never move, sense, or interact.
  std::vector<int> inactive_players;

  bool operator==(const ArenaConfig&) const = default;

  static std::vector<Rect> default_walls();
  // Default constants with no interior walls.
  static ArenaConfig open();

  // Throws ConfigError naming the first violated invariant.
  void validate() const;

  double half_width() const { return 0.5 * width; }
  double half_height() const { return 0.5 * height; }
  std::int64_t draw_ticks() const;
  std::int64_t stun_ticks() const;
  Vec2 player_spawn(int player_id) const;
  bool in_base(Team team, Vec2 p) const;
  bool is_active(int player_id) const;
};

void to_json(nlohmann::json& j, const ArenaConfig& a);
void from_json(const nlohmann::json& j, ArenaConfig& a);

constexpr Team team_of(int player_id) { return player_id < kPlayersPerTeam ? Team::Blue : Team::White; }
constexpr int slot_of(int player_id) { return player_id % kPlayersPerTeam; }
// Player id of the same slot on the other team.
constexpr int mirror_id(int player_id) { return (player_id + kPlayersPerTeam) % kNumPlayers; }

struct PlayerState {
  int id = 0;
  Team team = Team::Blue;
  Vec2 pos;
  Vec2 vel;
  Vec2 facing{1.0, 0.0};
  // Remaining stun in whole ticks; seconds = stun_ticks * tick_dt.
  std::int64_t stun_ticks = 0;
  std::optional<int> held_ball;
  std::optional<Team> carried_flag;
  bool active = true;

  bool stunned() const { return stun_ticks > 0; }
  bool operator==(const PlayerState&) const = default;
};

enum class BallMode : std::uint8_t { OnGround, Held, InFlight };

struct BallState {
  int id = 0;
  Vec2 pos;
  BallMode mode = BallMode::OnGround;
  // Holder when Held, thrower when InFlight, -1 otherwise.
  int owner = -1;
  Vec2 vel;
  double flown = 0.0;
  bool operator==(const BallState&) const = default;
};

enum class FlagMode : std::uint8_t { AtSpawn, Carried, Dropped };

struct FlagState {
  Team team = Team::Blue;
  FlagMode mode = FlagMode::AtSpawn;
  int carrier = -1;
  Vec2 pos;
  bool operator==(const FlagState&) const = default;
};

enum class OutcomeKind : std::uint8_t { Ongoing, Won, Draw };

struct Outcome {
  OutcomeKind kind = OutcomeKind::Ongoing;
  Team winner = Team::Blue;  // meaningful only when Won
  double time_s = 0.0;
  bool operator==(const Outcome&) const = default;
};

struct WorldState {
  std::int64_t tick = 0;
  std::array<PlayerState, kNumPlayers> players;
  std::vector<BallState> balls;
  std::array<FlagState, 2> flags;
  std::shared_ptr<const ArenaConfig> arena;
  Rng rng;
  Outcome outcome;

  const ArenaConfig& config() const { return *arena; }
  double time_s() const { return static_cast<double>(tick) * arena->tick_dt; }
  double stun_remaining(int player_id) const {
    return static_cast<double>(players[player_id].stun_ticks) * arena->tick_dt;
  }
  const FlagState& flag(Team t) const { return flags[index(t)]; }
};

// Exact comparison of every field's bit pattern (including the RNG state).
bool bitwise_equal(const WorldState& a, const WorldState& b);
std::uint64_t state_hash(const WorldState& w);

enum class EventKind : std::uint8_t {
  FlagPickup,
  FlagDelivered,
  FlagReturned,
  BallHit,
  BallPickup,
  Throw,
  RoundEnd,
};

struct GameEvent {
  std::int64_t tick = 0;
  EventKind kind = EventKind::RoundEnd;
  int player = -1;  // actor: picker, deliverer, returner, thrower
  int other = -1;   // BallHit victim or BallPickup ball id
  Team team = Team::Blue;  // flag team for flag events
  Outcome outcome;         // RoundEnd only
  bool operator==(const GameEvent&) const = default;
};

const char* event_name(EventKind k);

// Movement intent for one player for one tick.
struct Intent {
  int move_x = 0;  // -1, 0, +1
  int move_y = 0;
  bool throw_ball = false;
  bool operator==(const Intent&) const = default;
};

WorldState new_world(const ArenaConfig& arena, std::uint64_t seed);

// Advances w by one tick in place and returns the tick's events.
// Throws StateError if the round is over and ContractError unless exactly
// kNumPlayers intents are given.
std::vector<GameEvent> step(WorldState& w, std::span<const Intent> intents);

// Value-returning convenience wrapper around step.
std::pair<WorldState, std::vector<GameEvent>> stepped(const WorldState& w,
                                                      std::span<const Intent> intents);

// New round on the same arena; the RNG continues from its current state.
WorldState reset_round(const WorldState& w);

enum class HitTag : std::uint8_t { Wall = 0, Ball, Teammate, Opponent, EnemyFlag, OwnFlag };
inline constexpr int kNumHitTags = 6;
const char* tag_name(HitTag t);

struct RayHit {
  bool hit = false;
  double dist = 0.0;
  HitTag tag = HitTag::Wall;
  bool operator==(const RayHit&) const = default;
};

// Nearest hit along the ray from origin in unit direction dir, as seen by
// player `viewer` (tags are relative to the viewer's team; the viewer's own
// disc and the items it holds or threw are ignored). Discs that contain the
// origin are not reported. Equal distances resolve by priority
// Wall > Opponent > Teammate > Ball > EnemyFlag > OwnFlag.
RayHit raycast(const WorldState& w, Vec2 origin, Vec2 dir, double max_dist, int viewer);

// The world reflected across x=0 with teams swapped (player i <-> i+3,
// Blue flag <-> White flag). Requires a mirror-symmetric arena.
WorldState mirror_world(const WorldState& w);
Intent mirror_intent(const Intent& in);

// Throws StateError describing the first violated state invariant.
void check_invariants(const WorldState& w);

}  // namespace ctf
