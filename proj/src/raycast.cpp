#include <algorithm>
#include <cmath>
#include <limits>

#include "ctf/engine.hpp"

namespace ctf {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower value wins among equal distances.
int priority(HitTag t) {
  switch (t) {
    case HitTag::Wall: return 0;
    case HitTag::Opponent: return 1;
    case HitTag::Teammate: return 2;
    case HitTag::Ball: return 3;
    case HitTag::EnemyFlag: return 4;
    case HitTag::OwnFlag: return 5;
  }
  return 6;
}

// Slab test; 0 when the origin is inside the box, +inf on a miss.
double ray_box(Vec2 o, Vec2 d, const Rect& r) {
  double tmin = -kInf;
  double tmax = kInf;
  const double os[2] = {o.x, o.y};
  const double ds[2] = {d.x, d.y};
  const double lo[2] = {r.min.x, r.min.y};
  const double hi[2] = {r.max.x, r.max.y};
  for (int a = 0; a < 2; ++a) {
    if (ds[a] == 0.0) {
      if (os[a] < lo[a] || os[a] > hi[a]) return kInf;
      continue;
    }
    double t1 = (lo[a] - os[a]) / ds[a];
    double t2 = (hi[a] - os[a]) / ds[a];
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
  }
  if (tmax < tmin || tmax < 0.0) return kInf;
  return std::max(tmin, 0.0);
}

// Distance along the ray to the arena boundary from an interior origin.
double ray_boundary(Vec2 o, Vec2 d, double hw, double hh) {
  double t = kInf;
  if (d.x > 0.0) t = std::min(t, (hw - o.x) / d.x);
  if (d.x < 0.0) t = std::min(t, (-hw - o.x) / d.x);
  if (d.y > 0.0) t = std::min(t, (hh - o.y) / d.y);
  if (d.y < 0.0) t = std::min(t, (-hh - o.y) / d.y);
  return std::max(t, 0.0);
}

// Quadratic root of |o + t d - c| = r for unit d; +inf on a miss or when the
// origin is strictly inside the disc.
double ray_disc(Vec2 o, Vec2 d, Vec2 c, double r) {
  const Vec2 oc = o - c;
  const double cc = oc.dot(oc) - r * r;
  if (cc < 0.0) return kInf;
  const double b = oc.dot(d);
  const double disc = b * b - cc;
  if (disc < 0.0) return kInf;
  const double t = -b - std::sqrt(disc);
  return t >= 0.0 ? t : kInf;
}

}  // namespace

RayHit raycast(const WorldState& w, Vec2 origin, Vec2 dir, double max_dist, int viewer) {
  const ArenaConfig& a = *w.arena;
  const Team team = team_of(viewer);
  RayHit best;
  double best_t = kInf;
  auto offer = [&](double t, HitTag tag) {
    if (!(t <= max_dist)) return;
    if (t < best_t || (t == best_t && priority(tag) < priority(best.tag))) {
      best_t = t;
      best = {true, t, tag};
    }
  };

  offer(ray_boundary(origin, dir, a.half_width(), a.half_height()), HitTag::Wall);
  for (const Rect& r : a.walls) offer(ray_box(origin, dir, r), HitTag::Wall);

  for (const PlayerState& p : w.players) {
    if (p.id == viewer || !p.active) continue;
    offer(ray_disc(origin, dir, p.pos, a.player_radius), p.team == team ? HitTag::Teammate : HitTag::Opponent);
  }
  for (const BallState& b : w.balls) {
    if (b.mode == BallMode::Held) continue;
    if (b.mode == BallMode::InFlight && b.owner == viewer) continue;
    offer(ray_disc(origin, dir, b.pos, a.ball_radius), HitTag::Ball);
  }
  for (const FlagState& f : w.flags) {
    if (f.mode == FlagMode::Carried) continue;
    offer(ray_disc(origin, dir, f.pos, a.flag_radius), f.team == team ? HitTag::OwnFlag : HitTag::EnemyFlag);
  }
  return best;
}

}  // namespace ctf
