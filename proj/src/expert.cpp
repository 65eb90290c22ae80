#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <memory>
#include <queue>
#include <unordered_map>

#include "ctf/arena.hpp"

namespace ctf {
namespace {

constexpr double kCell = 0.5;
// Integer path costs keep fields exactly mirror-symmetric.
constexpr int kInf = std::numeric_limits<int>::max();
constexpr int kStraight = 10;
constexpr int kDiagonal = 14;
constexpr double kProbe = 0.75;
constexpr std::size_t kMaxCachedFields = 4096;

// Occupancy grid over the arena plus lazily built distance fields. A field
// holds the octile path length from every free cell to a target cell.
struct NavGrid {
  int nx = 0;
  int ny = 0;
  double x0 = 0.0;
  double y0 = 0.0;
  std::vector<char> free;
  std::unordered_map<int, std::vector<int>> fields;
  std::array<std::vector<int>, 2> base_fields;

  explicit NavGrid(const ArenaConfig& a) {
    nx = static_cast<int>(std::lround(a.width / kCell));
    ny = static_cast<int>(std::lround(a.height / kCell));
    x0 = -a.half_width();
    y0 = -a.half_height();
    free.assign(static_cast<std::size_t>(nx) * ny, 0);
    const double r = a.player_radius;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Vec2 c = center(i, j);
        bool ok = std::abs(c.x) <= a.half_width() - r && std::abs(c.y) <= a.half_height() - r;
        for (const Rect& w : a.walls) {
          if (c.x > w.min.x - r && c.x < w.max.x + r && c.y > w.min.y - r && c.y < w.max.y + r) ok = false;
        }
        free[index(i, j)] = ok;
      }
    }
    for (Team t : {Team::Blue, Team::White}) {
      std::vector<int> sources;
      for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
          if (free[index(i, j)] && a.in_base(t, center(i, j))) sources.push_back(index(i, j));
        }
      }
      base_fields[ctf::index(t)] = dijkstra(sources);
    }
  }

  Vec2 center(int i, int j) const { return {x0 + (i + 0.5) * kCell, y0 + (j + 0.5) * kCell}; }
  int index(int i, int j) const { return j * nx + i; }

  // Cell lookup in the caller's team frame (sx = -1 flips x) so points on a
  // cell boundary resolve symmetrically for both teams.
  int cell_of(Vec2 p, int sx) const {
    int i = std::clamp(static_cast<int>(std::floor((sx * p.x - x0) / kCell)), 0, nx - 1);
    if (sx < 0) i = nx - 1 - i;
    const int j = std::clamp(static_cast<int>(std::floor((p.y - y0) / kCell)), 0, ny - 1);
    return index(i, j);
  }

  // Nearest free cell to p, searching outward ring by ring.
  int free_cell_near(Vec2 p, int sx) const {
    const int c = cell_of(p, sx);
    if (free[c]) return c;
    const int ci = c % nx;
    const int cj = c / nx;
    for (int rad = 1; rad < std::max(nx, ny); ++rad) {
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = cj - rad; j <= cj + rad; ++j) {
        for (int k = -rad; k <= rad; ++k) {
          const int i = ci + sx * k;
          if (i < 0 || j < 0 || i >= nx || j >= ny) continue;
          if (std::max(std::abs(i - ci), std::abs(j - cj)) != rad || !free[index(i, j)]) continue;
          const double d = distance(center(i, j), p);
          if (d < best_d) {
            best_d = d;
            best = index(i, j);
          }
        }
      }
      if (best >= 0) return best;
    }
    return c;
  }

  std::vector<int> dijkstra(const std::vector<int>& sources) const {
    std::vector<int> dist(free.size(), kInf);
    using Item = std::pair<int, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (int s : sources) {
      dist[s] = 0;
      pq.push({0, s});
    }
    static constexpr int kDi[8] = {1, -1, 0, 0, 1, 1, -1, -1};
    static constexpr int kDj[8] = {0, 0, 1, -1, 1, -1, 1, -1};
    while (!pq.empty()) {
      const auto [d, c] = pq.top();
      pq.pop();
      if (d > dist[c]) continue;
      const int ci = c % nx;
      const int cj = c / nx;
      for (int k = 0; k < 8; ++k) {
        const int i = ci + kDi[k];
        const int j = cj + kDj[k];
        if (i < 0 || j < 0 || i >= nx || j >= ny || !free[index(i, j)]) continue;
        // No corner cutting.
        if (k >= 4 && (!free[index(ci + kDi[k], cj)] || !free[index(ci, cj + kDj[k])])) continue;
        const int nd = d + (k < 4 ? kStraight : kDiagonal);
        if (nd < dist[index(i, j)]) {
          dist[index(i, j)] = nd;
          pq.push({nd, index(i, j)});
        }
      }
    }
    return dist;
  }

  const std::vector<int>& field_to(Vec2 target, int sx) {
    const int c = free_cell_near(target, sx);
    auto it = fields.find(c);
    if (it != fields.end()) return it->second;
    if (fields.size() >= kMaxCachedFields) fields.clear();
    return fields.emplace(c, dijkstra({c})).first->second;
  }

  int value(const std::vector<int>& f, Vec2 p, int sx) const {
    const int c = cell_of(p, sx);
    return free[c] ? f[c] : kInf;
  }
};

std::uint64_t arena_key(const ArenaConfig& a) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  auto mix = [&h](double d) { h = derive_seed(h, std::bit_cast<std::uint64_t>(d)); };
  mix(a.width);
  mix(a.height);
  mix(a.player_radius);
  mix(a.base_depth);
  for (const Rect& r : a.walls) {
    mix(r.min.x);
    mix(r.min.y);
    mix(r.max.x);
    mix(r.max.y);
  }
  return h;
}

NavGrid& nav_for(const ArenaConfig& a) {
  thread_local std::unordered_map<std::uint64_t, std::unique_ptr<NavGrid>> grids;
  const std::uint64_t key = arena_key(a);
  auto it = grids.find(key);
  if (it == grids.end()) it = grids.emplace(key, std::make_unique<NavGrid>(a)).first;
  return *it->second;
}

int sgn(double v, double dead) { return v > dead ? 1 : (v < -dead ? -1 : 0); }

Intent direct(Vec2 from, Vec2 to) { return {sgn(to.x - from.x, 0.1), sgn(to.y - from.y, 0.1), false}; }

Vec2 unit_dir(int mx, int my) {
  const double n = std::sqrt(static_cast<double>(mx * mx + my * my));
  return {mx / n, my / n};
}

constexpr int kDirs[8][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}};

// Greedy descent on a distance field: take the probe direction with the
// lowest field value; walls are sidestepped because the field routes around
// them. Close to the target, walk straight at it. Directions are scanned in
// the team frame (sx flips x) so ties break the same way for both teams.
Intent steer(NavGrid& g, const std::vector<int>& field, Vec2 pos, Vec2 target, int sx) {
  if (distance(pos, target) < 1.0) return direct(pos, target);
  int best = g.value(field, pos, sx);
  int bx = 0;
  int by = 0;
  for (const auto& d : kDirs) {
    const Vec2 q = pos + unit_dir(sx * d[0], d[1]) * kProbe;
    const int v = g.value(field, q, sx);
    if (v < best) {
      best = v;
      bx = sx * d[0];
      by = d[1];
    }
  }
  if (bx == 0 && by == 0) return direct(pos, target);
  return {bx, by, false};
}

Intent go_to(const WorldState& w, const PlayerState& me, Vec2 target) {
  NavGrid& g = nav_for(w.config());
  const int sx = me.team == Team::Blue ? 1 : -1;
  return steer(g, g.field_to(target, sx), me.pos, target, sx);
}

Intent go_home(const WorldState& w, const PlayerState& me) {
  NavGrid& g = nav_for(w.config());
  const Vec2 spawn = w.config().flag_spawns[index(me.team)];
  return steer(g, g.base_fields[index(me.team)], me.pos, spawn, me.team == Team::Blue ? 1 : -1);
}

// Per-round, per-agent preference bits. The RNG only advances between
// rounds, so its next draw identifies the round without being consumed.
std::uint64_t preference(const WorldState& w, int agent) {
  Rng probe = w.rng;
  return derive_seed(probe(), static_cast<std::uint64_t>(agent));
}

bool line_clear(const WorldState& w, Vec2 from, Vec2 dir, double len, int viewer) {
  const RayHit h = raycast(w, from, dir, len, viewer);
  return !(h.hit && h.tag == HitTag::Wall);
}

// Aligned throw at the best target: move (and so face) in one of the eight
// directions such that the target's predicted position lies on the ball's
// path within range.
std::optional<Intent> aim(const WorldState& w, const PlayerState& me, const ExpertConfig& cfg, int priority) {
  if (!me.held_ball) return std::nullopt;
  const ArenaConfig& a = w.config();
  std::vector<const PlayerState*> targets;
  for (const PlayerState& p : w.players) {
    if (p.team == me.team || !p.active || p.stunned()) continue;
    if (distance(p.pos, me.pos) > cfg.throw_range) continue;
    targets.push_back(&p);
  }
  std::stable_sort(targets.begin(), targets.end(), [&](const PlayerState* x, const PlayerState* y) {
    if ((x->id == priority) != (y->id == priority)) return x->id == priority;
    return distance(x->pos, me.pos) < distance(y->pos, me.pos);
  });
  for (const PlayerState* t : targets) {
    const double lead = distance(t->pos, me.pos) / a.throw_speed;
    const Vec2 pred = t->pos + t->vel * lead;
    double best = cfg.aim_tolerance;
    int bx = 0;
    int by = 0;
    for (const auto& d : kDirs) {
      const int dx = me.team == Team::Blue ? d[0] : -d[0];
      const Vec2 u = unit_dir(dx, d[1]);
      const Vec2 start = me.pos + u * (a.max_speed * a.tick_dt);
      const Vec2 rel = pred - start;
      const double along = rel.dot(u);
      if (along <= 0.0 || along > cfg.throw_range) continue;
      const double miss = (rel - u * along).norm();
      if (miss <= best && line_clear(w, me.pos, u, along + a.max_speed * a.tick_dt, me.id)) {
        best = miss;
        bx = dx;
        by = d[1];
      }
    }
    if (bx != 0 || by != 0) return Intent{bx, by, true};
  }
  return std::nullopt;
}

// A free opponent at least as close would win the race (ties go by id), so
// such balls are left alone. Both sides skip an exactly contested ball.
bool contested(const WorldState& w, const PlayerState& me, const BallState& b, double d) {
  for (const PlayerState& p : w.players) {
    if (p.team == me.team || !p.active || p.stunned() || p.held_ball) continue;
    if (distance(b.pos, p.pos) <= d) return true;
  }
  return false;
}

const BallState* nearest_ball(const WorldState& w, const PlayerState& me, bool second) {
  const BallState* best = nullptr;
  const BallState* next = nullptr;
  double bd = std::numeric_limits<double>::infinity();
  double nd = bd;
  for (const BallState& b : w.balls) {
    if (b.mode != BallMode::OnGround) continue;
    const double d = distance(b.pos, me.pos);
    if (contested(w, me, b, d)) continue;
    if (d < bd) {
      next = best;
      nd = bd;
      best = &b;
      bd = d;
    } else if (d < nd) {
      next = &b;
      nd = d;
    }
  }
  return second && next ? next : best;
}

Intent runner(const WorldState& w, const PlayerState& me, std::uint64_t pref) {
  const FlagState& enemy = w.flag(other(me.team));
  const double s = me.team == Team::Blue ? 1.0 : -1.0;
  if (enemy.mode == FlagMode::Carried) return go_to(w, me, enemy.pos);
  // Cross the centre line on the preferred side before heading in.
  if (me.pos.x * s < -2.0) {
    const double side = (pref & 1U) ? 1.0 : -1.0;
    const double frac = 0.1 + 0.6 * static_cast<double>((pref >> 8) & 0xFF) / 255.0;
    return go_to(w, me, {0.0, side * frac * w.config().half_height()});
  }
  return go_to(w, me, enemy.pos);
}

Intent defender(const WorldState& w, const PlayerState& me, const ExpertConfig& cfg, std::uint64_t pref) {
  const ArenaConfig& a = w.config();
  const FlagState& own = w.flag(me.team);
  const double s = me.team == Team::Blue ? 1.0 : -1.0;
  if (own.mode == FlagMode::Dropped) return go_to(w, me, own.pos);
  if (own.mode == FlagMode::Carried) {
    if (auto t = aim(w, me, cfg, own.carrier)) return *t;
    if (!me.held_ball) {
      const BallState* b = nearest_ball(w, me, false);
      if (b && distance(b->pos, me.pos) < 4.0) return go_to(w, me, b->pos);
    }
    return go_to(w, me, w.players[own.carrier].pos);
  }
  const Vec2 spawn = a.flag_spawns[index(me.team)];
  const Vec2 guard{spawn.x + s * 2.5, spawn.y + ((pref & 2U) ? 1.0 : -1.0)};
  if (me.held_ball) {
    if (auto t = aim(w, me, cfg, -1)) return *t;
    return go_to(w, me, guard);
  }
  if (const BallState* b = nearest_ball(w, me, false)) return go_to(w, me, b->pos);
  return go_to(w, me, guard);
}

Intent support(const WorldState& w, const PlayerState& me, const ExpertConfig& cfg, std::uint64_t pref) {
  const FlagState& own = w.flag(me.team);
  const int carrier = own.mode == FlagMode::Carried ? own.carrier : -1;
  if (!me.held_ball) {
    if (const BallState* b = nearest_ball(w, me, (pref & 4U) != 0)) return go_to(w, me, b->pos);
  } else if (auto t = aim(w, me, cfg, carrier)) {
    return *t;
  }
  if (carrier >= 0) return go_to(w, me, w.players[carrier].pos);
  const int runner_id = me.team == Team::Blue ? 0 : kPlayersPerTeam;
  const PlayerState& r = w.players[runner_id];
  const double s = me.team == Team::Blue ? 1.0 : -1.0;
  if (!r.active || r.id == me.id) return go_to(w, me, w.flag(other(me.team)).pos);
  const double side = (pref & 8U) ? 1.5 : -1.5;
  return go_to(w, me, {r.pos.x - s * 1.5, r.pos.y + side});
}

}  // namespace

ExpertRole expert_role(int agent) {
  switch (slot_of(agent)) {
    case 0: return ExpertRole::Runner;
    case 1: return ExpertRole::Defender;
    default: return ExpertRole::Support;
  }
}

const char* role_name(ExpertRole r) {
  switch (r) {
    case ExpertRole::Runner: return "runner";
    case ExpertRole::Defender: return "defender";
    case ExpertRole::Support: return "support";
  }
  return "?";
}

Intent scripted_expert_intent(const WorldState& w, int agent, const ExpertConfig& cfg) {
  if (agent < 0 || agent >= kNumPlayers) throw ContractError("scripted_expert: agent out of range");
  const PlayerState& me = w.players[agent];
  if (!me.active || me.stunned()) return {};
  if (me.carried_flag) return go_home(w, me);
  const std::uint64_t pref = preference(w, agent);
  switch (expert_role(agent)) {
    case ExpertRole::Runner: return runner(w, me, pref);
    case ExpertRole::Defender: return defender(w, me, cfg, pref);
    case ExpertRole::Support: return support(w, me, cfg, pref);
  }
  return {};
}

Action scripted_expert(const WorldState& w, int agent, const PerceptionConfig& pcfg, const ExpertConfig& cfg) {
  return from_world_intent(scripted_expert_intent(w, agent, cfg), team_of(agent), pcfg);
}

}  // namespace ctf
