#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctf/engine.hpp"

namespace ctf {
namespace {

std::string describe(const Rect& r) {
  std::ostringstream os;
  os << "wall [" << r.min.x << ", " << r.min.y << "]-[" << r.max.x << ", " << r.max.y << "]";
  return os.str();
}

bool disc_overlaps_rect(Vec2 c, double radius, const Rect& r) {
  const double nx = std::clamp(c.x, r.min.x, r.max.x);
  const double ny = std::clamp(c.y, r.min.y, r.max.y);
  const double dx = c.x - nx;
  const double dy = c.y - ny;
  return dx * dx + dy * dy < radius * radius;
}

std::int64_t whole_ticks(double seconds, double dt, const char* what) {
  const double ratio = seconds / dt;
  const auto ticks = static_cast<std::int64_t>(std::llround(ratio));
  if (ticks <= 0 || std::abs(static_cast<double>(ticks) * dt - seconds) > 1e-9 * std::max(1.0, seconds)) {
    throw ConfigError(std::string("tick_dt must divide ") + what + " exactly");
  }
  return ticks;
}

}  // namespace

std::vector<Rect> ArenaConfig::default_walls() {
  return {
      {{-10.0, 2.0}, {-8.0, 7.0}},   {{8.0, 2.0}, {10.0, 7.0}},
      {{-6.0, -7.0}, {-4.0, -2.0}},  {{4.0, -7.0}, {6.0, -2.0}},
      {{-13.0, -3.0}, {-12.0, 3.0}}, {{12.0, -3.0}, {13.0, 3.0}},
  };
}

ArenaConfig ArenaConfig::open() {
  ArenaConfig a;
  a.walls.clear();
  return a;
}

std::int64_t ArenaConfig::draw_ticks() const { return whole_ticks(draw_time, tick_dt, "draw_time"); }

std::int64_t ArenaConfig::stun_ticks() const { return whole_ticks(stun_duration, tick_dt, "stun_duration"); }

Vec2 ArenaConfig::player_spawn(int player_id) const {
  const Vec2 p = player_spawns[slot_of(player_id)];
  return team_of(player_id) == Team::Blue ? p : p.mirrored();
}

bool ArenaConfig::in_base(Team team, Vec2 p) const {
  return team == Team::Blue ? p.x <= -half_width() + base_depth : p.x >= half_width() - base_depth;
}

bool ArenaConfig::is_active(int player_id) const {
  return std::find(inactive_players.begin(), inactive_players.end(), player_id) == inactive_players.end();
}

void ArenaConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(width, "width");
  positive(height, "height");
  positive(base_depth, "base_depth");
  positive(player_radius, "player_radius");
  positive(ball_radius, "ball_radius");
  positive(flag_radius, "flag_radius");
  positive(max_speed, "max_speed");
  positive(throw_speed, "throw_speed");
  positive(throw_max_range, "throw_max_range");
  positive(stun_duration, "stun_duration");
  positive(tick_dt, "tick_dt");
  positive(draw_time, "draw_time");
  if (players_per_team != kPlayersPerTeam) throw ConfigError("players_per_team must be 3");
  if (ball_count < 0) throw ConfigError("ball_count must be non-negative");
  if (2.0 * base_depth >= width) throw ConfigError("bases overlap");
  draw_ticks();
  stun_ticks();

  const double hw = half_width();
  const double hh = half_height();
  if (ball_count > 0) {
    const double spacing = height / ball_count;
    if (ball_spawn_jitter < 0.0 || ball_spawn_jitter + ball_radius > 0.5 * spacing) {
      throw ConfigError("ball_spawn_jitter too large for ball spacing");
    }
  }

  auto inside = [&](Vec2 p, double r) { return p.x - r >= -hw && p.x + r <= hw && p.y - r >= -hh && p.y + r <= hh; };
  if (!(flag_spawns[1] == flag_spawns[0].mirrored())) throw ConfigError("flag spawns are not mirror-symmetric");
  if (!in_base(Team::Blue, flag_spawns[0]) || !inside(flag_spawns[0], flag_radius)) {
    throw ConfigError("blue flag spawn must lie inside the blue base");
  }
  for (const Vec2& p : player_spawns) {
    if (!inside(p, player_radius) || p.x >= 0.0) throw ConfigError("player spawns must lie in the blue half");
  }
  for (int id : inactive_players) {
    if (id < 0 || id >= kNumPlayers) throw ConfigError("inactive player id out of range");
  }

  for (const Rect& r : walls) {
    if (!(r.min.x < r.max.x && r.min.y < r.max.y)) throw ConfigError(describe(r) + " is degenerate");
    if (r.min.x < -hw || r.max.x > hw || r.min.y < -hh || r.max.y > hh) {
      throw ConfigError(describe(r) + " lies outside the arena");
    }
    for (int t = 0; t < 2; ++t) {
      if (disc_overlaps_rect(flag_spawns[t], flag_radius, r)) throw ConfigError(describe(r) + " covers a flag spawn");
    }
    for (int id = 0; id < kNumPlayers; ++id) {
      if (disc_overlaps_rect(player_spawn(id), player_radius, r)) {
        throw ConfigError(describe(r) + " covers a player spawn");
      }
    }
    if (ball_count > 0 && r.min.x < ball_radius && r.max.x > -ball_radius) {
      throw ConfigError(describe(r) + " crosses the ball spawn line x=0");
    }
    const Rect m{{-r.max.x, r.min.y}, {-r.min.x, r.max.y}};
    if (std::find(walls.begin(), walls.end(), m) == walls.end()) {
      throw ConfigError(describe(r) + " has no mirror image across x=0");
    }
  }
}

void to_json(nlohmann::json& j, const ArenaConfig& a) {
  nlohmann::json walls = nlohmann::json::array();
  for (const Rect& r : a.walls) walls.push_back({r.min.x, r.min.y, r.max.x, r.max.y});
  nlohmann::json spawns = nlohmann::json::array();
  for (const Vec2& p : a.player_spawns) spawns.push_back({p.x, p.y});
  j = nlohmann::json{
      {"width", a.width},
      {"height", a.height},
      {"walls", walls},
      {"base_depth", a.base_depth},
      {"flag_spawns", {{a.flag_spawns[0].x, a.flag_spawns[0].y}, {a.flag_spawns[1].x, a.flag_spawns[1].y}}},
      {"player_spawns", spawns},
      {"ball_count", a.ball_count},
      {"ball_spawn_jitter", a.ball_spawn_jitter},
      {"player_radius", a.player_radius},
      {"ball_radius", a.ball_radius},
      {"flag_radius", a.flag_radius},
      {"max_speed", a.max_speed},
      {"throw_speed", a.throw_speed},
      {"throw_max_range", a.throw_max_range},
      {"stun_duration", a.stun_duration},
      {"tick_dt", a.tick_dt},
      {"draw_time", a.draw_time},
      {"players_per_team", a.players_per_team},
      {"inactive_players", a.inactive_players},
  };
}

// Missing keys keep their defaults, so partial arena objects are accepted.
void from_json(const nlohmann::json& j, ArenaConfig& a) {
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("width", a.width);
    get("height", a.height);
    get("base_depth", a.base_depth);
    get("ball_count", a.ball_count);
    get("ball_spawn_jitter", a.ball_spawn_jitter);
    get("player_radius", a.player_radius);
    get("ball_radius", a.ball_radius);
    get("flag_radius", a.flag_radius);
    get("max_speed", a.max_speed);
    get("throw_speed", a.throw_speed);
    get("throw_max_range", a.throw_max_range);
    get("stun_duration", a.stun_duration);
    get("tick_dt", a.tick_dt);
    get("draw_time", a.draw_time);
    get("players_per_team", a.players_per_team);
    get("inactive_players", a.inactive_players);
    if (j.contains("walls")) {
      a.walls.clear();
      for (const auto& w : j.at("walls")) {
        a.walls.push_back({{w.at(0).get<double>(), w.at(1).get<double>()}, {w.at(2).get<double>(), w.at(3).get<double>()}});
      }
    }
    if (j.contains("flag_spawns")) {
      for (int t = 0; t < 2; ++t) {
        a.flag_spawns[t] = {j.at("flag_spawns").at(t).at(0).get<double>(), j.at("flag_spawns").at(t).at(1).get<double>()};
      }
    }
    if (j.contains("player_spawns")) {
      for (int s = 0; s < kPlayersPerTeam; ++s) {
        const auto& p = j.at("player_spawns").at(s);
        a.player_spawns[s] = {p.at(0).get<double>(), p.at(1).get<double>()};
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad arena config: ") + e.what());
  }
}

}  // namespace ctf
