#include "ctf/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace ctf {
namespace {

// Entry parameter t in [0,1] of the segment p + t*d into the rectangle
// [lo, hi], or a negative value when the segment misses it.
double segment_rect_entry(Vec2 p, Vec2 d, Vec2 lo, Vec2 hi) {
  double tmin = 0.0;
  double tmax = 1.0;
  const double ps[2] = {p.x, p.y};
  const double ds[2] = {d.x, d.y};
  const double los[2] = {lo.x, lo.y};
  const double his[2] = {hi.x, hi.y};
  for (int a = 0; a < 2; ++a) {
    if (ds[a] == 0.0) {
      if (ps[a] <= los[a] || ps[a] >= his[a]) return -1.0;
      continue;
    }
    double t1 = (los[a] - ps[a]) / ds[a];
    double t2 = (his[a] - ps[a]) / ds[a];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin >= tmax) return -1.0;
  }
  return tmin;
}

// Entry parameter of segment p + t*d into the disc (c, r). An endpoint that
// finishes inside the disc counts as contact even if rounding pushed the
// analytic root just past t = 1.
double segment_disc_entry(Vec2 p, Vec2 d, Vec2 c, double r) {
  const Vec2 pc = p - c;
  const double cc = pc.dot(pc) - r * r;
  if (cc <= 0.0) return 0.0;
  const double a = d.dot(d);
  if (a == 0.0) return -1.0;
  const double b = pc.dot(d);
  const double disc = b * b - a * cc;
  if (disc >= 0.0) {
    const double t = (-b - std::sqrt(disc)) / a;
    if (t >= 0.0 && t <= 1.0) return t;
  }
  const Vec2 end = pc + d;
  if (end.dot(end) <= r * r) return 1.0;
  return -1.0;
}

Vec2 unit_move(int mx, int my) {
  if (mx == 0 && my == 0) return {};
  if (mx == 0) return {0.0, static_cast<double>(my)};
  if (my == 0) return {static_cast<double>(mx), 0.0};
  const double s = 1.0 / std::sqrt(2.0);
  return {mx * s, my * s};
}

void move_player(PlayerState& p, const ArenaConfig& a) {
  const double r = a.player_radius;
  const double lim_x = a.half_width() - r;
  const double lim_y = a.half_height() - r;

  double nx = p.pos.x + p.vel.x * a.tick_dt;
  nx = std::clamp(nx, -lim_x, lim_x);
  for (const Rect& w : a.walls) {
    if (!(p.pos.y > w.min.y - r && p.pos.y < w.max.y + r)) continue;
    const double left = w.min.x - r;
    const double right = w.max.x + r;
    if (p.vel.x > 0.0 && p.pos.x <= left && nx > left) nx = left;
    if (p.vel.x < 0.0 && p.pos.x >= right && nx < right) nx = right;
  }
  p.pos.x = nx;

  double ny = p.pos.y + p.vel.y * a.tick_dt;
  ny = std::clamp(ny, -lim_y, lim_y);
  for (const Rect& w : a.walls) {
    if (!(p.pos.x > w.min.x - r && p.pos.x < w.max.x + r)) continue;
    const double bottom = w.min.y - r;
    const double top = w.max.y + r;
    if (p.vel.y > 0.0 && p.pos.y <= bottom && ny > bottom) ny = bottom;
    if (p.vel.y < 0.0 && p.pos.y >= top && ny < top) ny = top;
  }
  p.pos.y = ny;
}

void drop_items(WorldState& w, PlayerState& p) {
  if (p.held_ball) {
    BallState& b = w.balls[*p.held_ball];
    b.mode = BallMode::OnGround;
    b.owner = -1;
    b.pos = p.pos;
    b.vel = {};
    b.flown = 0.0;
    p.held_ball.reset();
  }
  if (p.carried_flag) {
    FlagState& f = w.flags[index(*p.carried_flag)];
    f.mode = FlagMode::Dropped;
    f.carrier = -1;
    f.pos = p.pos;
    p.carried_flag.reset();
  }
}

void place_round(WorldState& w) {
  const ArenaConfig& a = *w.arena;
  for (int id = 0; id < kNumPlayers; ++id) {
    PlayerState& p = w.players[id];
    p = PlayerState{};
    p.id = id;
    p.team = team_of(id);
    p.pos = a.player_spawn(id);
    p.facing = p.team == Team::Blue ? Vec2{1.0, 0.0} : Vec2{-1.0, 0.0};
    p.active = a.is_active(id);
  }
  w.balls.assign(a.ball_count, BallState{});
  for (int i = 0; i < a.ball_count; ++i) {
    const double slot = -a.half_height() + a.height * (i + 0.5) / a.ball_count;
    const double jitter = a.ball_spawn_jitter * (2.0 * uniform01(w.rng) - 1.0);
    w.balls[i].id = i;
    w.balls[i].pos = {0.0, slot + jitter};
  }
  for (int t = 0; t < 2; ++t) {
    w.flags[t] = FlagState{static_cast<Team>(t), FlagMode::AtSpawn, -1, a.flag_spawns[t]};
  }
  w.tick = 0;
  w.outcome = Outcome{};
}

template <typename T>
void put(std::vector<unsigned char>& out, const T& v) {
  const auto* p = reinterpret_cast<const unsigned char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_vec(std::vector<unsigned char>& out, Vec2 v) {
  put(out, std::bit_cast<std::uint64_t>(v.x));
  put(out, std::bit_cast<std::uint64_t>(v.y));
}

std::vector<unsigned char> state_bytes(const WorldState& w) {
  std::vector<unsigned char> out;
  out.reserve(1024);
  put(out, w.tick);
  for (const PlayerState& p : w.players) {
    put(out, p.id);
    put(out, p.team);
    put_vec(out, p.pos);
    put_vec(out, p.vel);
    put_vec(out, p.facing);
    put(out, p.stun_ticks);
    put(out, p.held_ball.value_or(-1));
    put(out, p.carried_flag ? index(*p.carried_flag) : -1);
    put(out, p.active);
  }
  put(out, w.balls.size());
  for (const BallState& b : w.balls) {
    put(out, b.id);
    put_vec(out, b.pos);
    put(out, b.mode);
    put(out, b.owner);
    put_vec(out, b.vel);
    put(out, std::bit_cast<std::uint64_t>(b.flown));
  }
  for (const FlagState& f : w.flags) {
    put(out, f.team);
    put(out, f.mode);
    put(out, f.carrier);
    put_vec(out, f.pos);
  }
  put(out, w.outcome.kind);
  put(out, w.outcome.winner);
  put(out, std::bit_cast<std::uint64_t>(w.outcome.time_s));
  return out;
}

}  // namespace

const char* event_name(EventKind k) {
  switch (k) {
    case EventKind::FlagPickup: return "FlagPickup";
    case EventKind::FlagDelivered: return "FlagDelivered";
    case EventKind::FlagReturned: return "FlagReturned";
    case EventKind::BallHit: return "BallHit";
    case EventKind::BallPickup: return "BallPickup";
    case EventKind::Throw: return "Throw";
    case EventKind::RoundEnd: return "RoundEnd";
  }
  return "?";
}

const char* tag_name(HitTag t) {
  switch (t) {
    case HitTag::Wall: return "Wall";
    case HitTag::Ball: return "Ball";
    case HitTag::Teammate: return "Teammate";
    case HitTag::Opponent: return "Opponent";
    case HitTag::EnemyFlag: return "EnemyFlag";
    case HitTag::OwnFlag: return "OwnFlag";
  }
  return "?";
}

bool bitwise_equal(const WorldState& a, const WorldState& b) {
  if (a.arena != b.arena && !(*a.arena == *b.arena)) return false;
  return a.rng == b.rng && state_bytes(a) == state_bytes(b);
}

std::uint64_t state_hash(const WorldState& w) {
  std::vector<unsigned char> bytes = state_bytes(w);
  std::ostringstream rng_text;
  rng_text << w.rng;
  const std::string s = rng_text.str();
  bytes.insert(bytes.end(), s.begin(), s.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

WorldState new_world(const ArenaConfig& arena, std::uint64_t seed) {
  arena.validate();
  WorldState w;
  w.arena = std::make_shared<const ArenaConfig>(arena);
  w.rng.seed(seed);
  place_round(w);
  return w;
}

WorldState reset_round(const WorldState& w) {
  if (w.outcome.kind == OutcomeKind::Ongoing) throw StateError("reset_round: round still in progress");
  WorldState next;
  next.arena = w.arena;
  next.rng = w.rng;
  place_round(next);
  return next;
}

std::vector<GameEvent> step(WorldState& w, std::span<const Intent> intents) {
  if (w.outcome.kind != OutcomeKind::Ongoing) throw StateError("step: round already finished");
  if (intents.size() != static_cast<std::size_t>(kNumPlayers)) {
    throw ContractError("step: expected 6 intents, got " + std::to_string(intents.size()));
  }
  for (const Intent& in : intents) {
    if (in.move_x < -1 || in.move_x > 1 || in.move_y < -1 || in.move_y > 1) {
      throw ContractError("step: move components must be in {-1,0,1}");
    }
  }

  const ArenaConfig& a = *w.arena;
  std::vector<GameEvent> events;
  ++w.tick;
  const std::int64_t now = w.tick;

  // 1. stuns
  for (PlayerState& p : w.players) {
    if (p.stun_ticks > 0) --p.stun_ticks;
  }

  // 2. velocities and facing
  for (PlayerState& p : w.players) {
    const Intent& in = intents[p.id];
    if (!p.active || p.stunned()) {
      p.vel = {};
      continue;
    }
    const Vec2 dir = unit_move(in.move_x, in.move_y);
    p.vel = dir * a.max_speed;
    if (in.move_x != 0 || in.move_y != 0) p.facing = dir;
  }

  // 3. integrate players, carried items follow
  for (PlayerState& p : w.players) {
    if (!p.active) continue;
    move_player(p, a);
    if (p.held_ball) w.balls[*p.held_ball].pos = p.pos;
    if (p.carried_flag) w.flags[index(*p.carried_flag)].pos = p.pos;
  }

  // 4. throws
  for (PlayerState& p : w.players) {
    if (!intents[p.id].throw_ball || !p.active || p.stunned() || !p.held_ball) continue;
    BallState& b = w.balls[*p.held_ball];
    b.mode = BallMode::InFlight;
    b.owner = p.id;
    b.pos = p.pos;
    b.vel = p.facing * a.throw_speed;
    b.flown = 0.0;
    p.held_ball.reset();
    events.push_back({now, EventKind::Throw, p.id, b.id});
  }

  // 5. balls in flight
  const double full_step = a.throw_speed * a.tick_dt;
  const double lim_x = a.half_width() - a.ball_radius;
  const double lim_y = a.half_height() - a.ball_radius;
  const double hit_radius = a.player_radius + a.ball_radius;
  for (BallState& b : w.balls) {
    if (b.mode != BallMode::InFlight) continue;
    const int thrower = b.owner;
    const Team thrower_team = team_of(thrower);
    const double remaining = a.throw_max_range - b.flown;
    const bool truncated = remaining <= full_step;
    const double step_len = truncated ? remaining : full_step;
    const Vec2 d = truncated ? b.vel * (remaining / a.throw_speed) : b.vel * a.tick_dt;
    const Vec2 end = b.pos + d;

    double t_stop = 2.0;
    auto consider = [&](double t) {
      if (t >= 0.0 && t < t_stop) t_stop = t;
    };
    if (d.x > 0.0 && end.x > lim_x) consider((lim_x - b.pos.x) / d.x);
    if (d.x < 0.0 && end.x < -lim_x) consider((-lim_x - b.pos.x) / d.x);
    if (d.y > 0.0 && end.y > lim_y) consider((lim_y - b.pos.y) / d.y);
    if (d.y < 0.0 && end.y < -lim_y) consider((-lim_y - b.pos.y) / d.y);
    for (const Rect& r : a.walls) {
      const Vec2 grow{a.ball_radius, a.ball_radius};
      consider(segment_rect_entry(b.pos, d, r.min - grow, r.max + grow));
    }

    int victim = -1;
    double t_victim = 2.0;
    for (const PlayerState& p : w.players) {
      if (!p.active || p.team == thrower_team) continue;
      const double t = segment_disc_entry(b.pos, d, p.pos, hit_radius);
      if (t >= 0.0 && t < t_victim) {
        t_victim = t;
        victim = p.id;
      }
    }

    if (victim >= 0 && t_victim <= t_stop) {
      b.pos = b.pos + d * t_victim;
      b.mode = BallMode::OnGround;
      b.owner = -1;
      b.vel = {};
      b.flown = 0.0;
      PlayerState& v = w.players[victim];
      drop_items(w, v);
      v.stun_ticks = a.stun_ticks();
      v.vel = {};
      events.push_back({now, EventKind::BallHit, thrower, victim});
    } else if (t_stop <= 1.0) {
      b.pos = b.pos + d * t_stop;
      b.mode = BallMode::OnGround;
      b.owner = -1;
      b.vel = {};
      b.flown = 0.0;
    } else {
      b.pos = end;
      b.flown = truncated ? a.throw_max_range : b.flown + step_len;
      if (truncated) {
        b.mode = BallMode::OnGround;
        b.owner = -1;
        b.vel = {};
        b.flown = 0.0;
      }
    }
  }

  // 6. contact pickups, ascending player id
  const double ball_reach = a.player_radius + a.ball_radius;
  const double flag_reach = a.player_radius + a.flag_radius;
  for (PlayerState& p : w.players) {
    if (!p.active || p.stunned()) continue;
    if (!p.held_ball) {
      for (BallState& b : w.balls) {
        if (b.mode == BallMode::OnGround && distance(p.pos, b.pos) <= ball_reach) {
          b.mode = BallMode::Held;
          b.owner = p.id;
          b.pos = p.pos;
          p.held_ball = b.id;
          events.push_back({now, EventKind::BallPickup, p.id, b.id});
          break;
        }
      }
    }
    FlagState& enemy = w.flags[index(other(p.team))];
    if (!p.carried_flag && enemy.mode != FlagMode::Carried && distance(p.pos, enemy.pos) <= flag_reach) {
      enemy.mode = FlagMode::Carried;
      enemy.carrier = p.id;
      enemy.pos = p.pos;
      p.carried_flag = enemy.team;
      events.push_back({now, EventKind::FlagPickup, p.id, -1, enemy.team});
    }
    FlagState& own = w.flags[index(p.team)];
    if (own.mode == FlagMode::Dropped && distance(p.pos, own.pos) <= flag_reach) {
      own.mode = FlagMode::AtSpawn;
      own.pos = a.flag_spawns[index(p.team)];
      events.push_back({now, EventKind::FlagReturned, p.id, -1, p.team});
    }
  }

  // 7. delivery
  for (const PlayerState& p : w.players) {
    if (p.carried_flag && a.in_base(p.team, p.pos)) {
      w.outcome = Outcome{OutcomeKind::Won, p.team, w.time_s()};
      events.push_back({now, EventKind::FlagDelivered, p.id, -1, p.team});
      events.push_back({now, EventKind::RoundEnd, -1, -1, p.team, w.outcome});
      return events;
    }
  }

  // 8. draw
  if (now >= a.draw_ticks()) {
    w.outcome = Outcome{OutcomeKind::Draw, Team::Blue, w.time_s()};
    events.push_back({now, EventKind::RoundEnd, -1, -1, Team::Blue, w.outcome});
  }
  return events;
}

std::pair<WorldState, std::vector<GameEvent>> stepped(const WorldState& w, std::span<const Intent> intents) {
  WorldState next = w;
  auto events = step(next, intents);
  return {std::move(next), std::move(events)};
}

Intent mirror_intent(const Intent& in) { return {-in.move_x, in.move_y, in.throw_ball}; }

WorldState mirror_world(const WorldState& w) {
  WorldState m = w;
  const ArenaConfig& a = *w.arena;
  std::vector<int> inactive;
  for (int id : a.inactive_players) inactive.push_back(mirror_id(id));
  std::sort(inactive.begin(), inactive.end());
  std::vector<int> sorted = a.inactive_players;
  std::sort(sorted.begin(), sorted.end());
  if (inactive != sorted) {
    ArenaConfig ma = a;
    ma.inactive_players = inactive;
    m.arena = std::make_shared<const ArenaConfig>(ma);
  }
  for (const PlayerState& p : w.players) {
    PlayerState q = p;
    q.id = mirror_id(p.id);
    q.team = other(p.team);
    q.pos = p.pos.mirrored();
    q.vel = p.vel.mirrored();
    q.facing = p.facing.mirrored();
    if (p.carried_flag) q.carried_flag = other(*p.carried_flag);
    m.players[q.id] = q;
  }
  for (BallState& b : m.balls) {
    b.pos = b.pos.mirrored();
    b.vel = b.vel.mirrored();
    if (b.owner >= 0) b.owner = mirror_id(b.owner);
  }
  for (const FlagState& f : w.flags) {
    FlagState g = f;
    g.team = other(f.team);
    g.pos = f.pos.mirrored();
    if (f.carrier >= 0) g.carrier = mirror_id(f.carrier);
    m.flags[index(g.team)] = g;
  }
  if (w.outcome.kind == OutcomeKind::Won) m.outcome.winner = other(w.outcome.winner);
  return m;
}

void check_invariants(const WorldState& w) {
  const ArenaConfig& a = *w.arena;
  auto fail = [](const std::string& msg) { throw StateError("invariant violated: " + msg); };
  const double eps = 1e-9;
  if (w.tick < 0 || w.tick > a.draw_ticks()) fail("tick out of range");
  if ((w.outcome.kind == OutcomeKind::Draw) != (w.outcome.kind != OutcomeKind::Won && w.tick >= a.draw_ticks())) {
    fail("draw status inconsistent with tick");
  }
  for (const PlayerState& p : w.players) {
    const std::string who = "player " + std::to_string(p.id);
    const double r = a.player_radius;
    if (std::abs(p.pos.x) > a.half_width() - r + eps || std::abs(p.pos.y) > a.half_height() - r + eps) {
      fail(who + " outside arena");
    }
    for (const Rect& wall : a.walls) {
      if (p.pos.x > wall.min.x - r + eps && p.pos.x < wall.max.x + r - eps && p.pos.y > wall.min.y - r + eps &&
          p.pos.y < wall.max.y + r - eps) {
        fail(who + " inside a wall");
      }
    }
    if (p.stunned() && (p.vel != Vec2{} || p.held_ball || p.carried_flag)) fail(who + " stunned but active");
    if (p.vel.norm() > a.max_speed + eps) fail(who + " too fast");
    if (std::abs(p.facing.norm() - 1.0) > 1e-12) fail(who + " facing not unit");
    if (p.carried_flag && *p.carried_flag == p.team) fail(who + " carries own flag");
    if (p.held_ball) {
      const BallState& b = w.balls.at(*p.held_ball);
      if (b.mode != BallMode::Held || b.owner != p.id) fail(who + " holds inconsistent ball");
    }
    if (p.carried_flag) {
      const FlagState& f = w.flags[index(*p.carried_flag)];
      if (f.mode != FlagMode::Carried || f.carrier != p.id) fail(who + " carries inconsistent flag");
    }
  }
  for (const BallState& b : w.balls) {
    const std::string which = "ball " + std::to_string(b.id);
    if (b.mode == BallMode::InFlight) {
      if (std::abs(b.vel.norm() - a.throw_speed) > 1e-9) fail(which + " speed");
      if (b.flown > a.throw_max_range + eps) fail(which + " flew too far");
    } else if (b.vel != Vec2{}) {
      fail(which + " moving while not in flight");
    }
    if (b.mode == BallMode::Held) {
      const PlayerState& h = w.players.at(b.owner);
      if (h.held_ball != b.id) fail(which + " holder mismatch");
      if (h.stunned()) fail(which + " held by stunned player");
    }
  }
  for (const FlagState& f : w.flags) {
    if (f.mode == FlagMode::AtSpawn && !(f.pos == a.flag_spawns[index(f.team)])) fail("flag off spawn");
    if (f.mode == FlagMode::Carried) {
      const PlayerState& c = w.players.at(f.carrier);
      if (c.carried_flag != f.team) fail("flag carrier mismatch");
    }
  }
}

}  // namespace ctf
