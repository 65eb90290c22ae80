#include <cmath>
#include <cstdio>
#include <fstream>

#include "ctf/server.hpp"

namespace ctf {

using nlohmann::json;

// ---- configuration -----------------------------------------------------------

void SessionConfig::validate() const {
  arena.validate();
  if (session_id.empty()) throw ConfigError("session_id must not be empty");
  if (session_id.find_first_of("/\\") != std::string::npos) throw ConfigError("session_id must not contain '/'");
  if (demo_dir.empty()) throw ConfigError("demo_dir must not be empty");
  if (!(idle_timeout_s > 0.0)) throw ConfigError("idle_timeout_s must be positive");
  if (!(intermission_s >= 0.0)) throw ConfigError("intermission_s must be >= 0");
  if (rays < 1) throw ConfigError("rays must be >= 1");
}

std::filesystem::path SessionConfig::effective_log_path() const {
  if (!log_path.empty()) return log_path;
  return std::filesystem::path(demo_dir) / (session_id + ".log.jsonl");
}

json to_json(const SessionConfig& c) {
  json a;
  to_json(a, c.arena);
  return {{"arena", a},
          {"seed", c.seed},
          {"session_id", c.session_id},
          {"demo_dir", c.demo_dir},
          {"log_path", c.log_path},
          {"idle_timeout_s", c.idle_timeout_s},
          {"intermission_s", c.intermission_s},
          {"rays", c.rays},
          {"record_all", c.record_all}};
}

SessionConfig session_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("session config must be a JSON object");
  const json defaults = to_json(SessionConfig{});
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
  }
  SessionConfig c;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  };
  if (j.contains("arena")) from_json(j.at("arena"), c.arena);
  get("seed", c.seed);
  get("session_id", c.session_id);
  get("demo_dir", c.demo_dir);
  get("log_path", c.log_path);
  get("idle_timeout_s", c.idle_timeout_s);
  get("intermission_s", c.intermission_s);
  get("rays", c.rays);
  get("record_all", c.record_all);
  c.validate();
  return c;
}

SessionConfig load_session_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return session_config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

const char* seat_kind_name(SeatKind k) {
  switch (k) {
    case SeatKind::Human: return "human";
    case SeatKind::Bot: return "bot";
    case SeatKind::Scripted: return "scripted";
    case SeatKind::IdleHold: return "idle";
  }
  return "?";
}

// ---- session -----------------------------------------------------------------

namespace {

const char* ball_mode_name(BallMode m) {
  switch (m) {
    case BallMode::OnGround: return "ground";
    case BallMode::Held: return "held";
    case BallMode::InFlight: return "flight";
  }
  return "?";
}

const char* flag_mode_name(FlagMode m) {
  switch (m) {
    case FlagMode::AtSpawn: return "spawn";
    case FlagMode::Carried: return "carried";
    case FlagMode::Dropped: return "dropped";
  }
  return "?";
}

json vec(Vec2 v) { return json::array({v.x, v.y}); }

// Integer in {-1, 0, 1}; returns false when the raw value had to be changed.
bool clamp_axis(const json& v, int& out) {
  const double x = v.get<double>();
  if (!std::isfinite(x)) {
    out = 0;
    return false;
  }
  const double r = std::max(-1.0, std::min(1.0, std::round(x)));
  out = static_cast<int>(r);
  return r == x;
}

}  // namespace

Session::Session(SessionConfig cfg, std::optional<PolicySource> bot, FrameSink sink)
    : cfg_(std::move(cfg)), bot_(std::move(bot)), sink_(std::move(sink)), bot_rng_(derive_seed(cfg_.seed, 17)) {
  cfg_.validate();
  if (bot_) check_compatible(*bot_, cfg_.arena);
  perception_.rays = cfg_.rays;
  world_ = new_world(cfg_.arena, cfg_.seed);
  std::error_code ec;
  std::filesystem::create_directories(cfg_.demo_dir, ec);
  if (ec || !std::filesystem::is_directory(cfg_.demo_dir)) throw IoError("cannot create demo directory " + cfg_.demo_dir);
  const auto log_path = cfg_.effective_log_path();
  if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path(), ec);
  log_.open(log_path, std::ios::app);
  if (!log_) throw IoError("cannot open session log " + log_path.string());
  for (int id = 0; id < kNumPlayers; ++id) {
    Seat& s = seats_[id];
    s.fallback = !cfg_.arena.is_active(id) ? SeatKind::IdleHold : bot_ ? SeatKind::Bot : SeatKind::Scripted;
    s.kind = s.fallback;
    if (cfg_.record_all && s.kind != SeatKind::IdleHold) open_recorder(id);
  }
  log_event({{"event", "start"}, {"session_id", cfg_.session_id}, {"seed", cfg_.seed},
             {"bots", bot_ ? bot_->label : "scripted"}});
}

Session::~Session() {
  if (log_) {
    try {
      log_event({{"event", "close"}, {"rounds_played", rounds_played_}, {"counters", counters_}});
    } catch (...) {
    }
  }
}

void Session::send(int conn, const json& msg) {
  if (sink_) sink_(conn, msg.dump());
}

void Session::broadcast(const json& msg) {
  if (!sink_) return;
  const std::string text = msg.dump();
  for (int c : conns_) sink_(c, text);
}

void Session::error(int conn, const std::string& code, const std::string& msg) {
  ++counters_["error_" + code];
  send(conn, {{"type", "error"}, {"code", code}, {"msg", msg}});
}

void Session::log_event(json entry) {
  entry["frame"] = frame_tick_;
  log_ << entry.dump() << '\n';
  log_.flush();
}

int Session::seat_of(int conn) const {
  for (int id = 0; id < kNumPlayers; ++id) {
    if (seats_[id].kind == SeatKind::Human && seats_[id].conn == conn) return id;
  }
  return -1;
}

void Session::connect(int conn) { conns_.insert(conn); }

void Session::disconnect(int conn, double now) {
  const int seat = seat_of(conn);
  if (seat >= 0) release_seat(seat, "disconnect", now);
  conns_.erase(conn);
}

void Session::handle(int conn, const std::string& text, double now) {
  conns_.insert(conn);
  json msg;
  try {
    msg = json::parse(text);
  } catch (const json::exception&) {
    error(conn, "bad_json", "frame is not valid JSON");
    return;
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    error(conn, "bad_message", "message needs a string 'type'");
    return;
  }
  const std::string type = msg["type"];
  if (type == "join") {
    on_join(conn, msg, now);
  } else if (type == "input") {
    on_input(conn, msg, now);
  } else if (type == "leave") {
    const int seat = seat_of(conn);
    if (seat < 0) {
      error(conn, "not_seated", "leave without a seat");
    } else {
      release_seat(seat, "leave", now);
    }
  } else {
    error(conn, "unknown_type", "unknown message type '" + type + "'");
  }
}

void Session::on_join(int conn, const json& msg, double now) {
  if (seat_of(conn) >= 0) {
    error(conn, "already_joined", "this connection already holds a seat");
    return;
  }
  const std::string want = msg.contains("team") && msg["team"].is_string() ? msg["team"].get<std::string>() : "auto";
  if (want != "auto" && want != "blue" && want != "white") {
    error(conn, "bad_team", "team must be auto, blue or white");
    return;
  }
  std::string name = msg.contains("name") && msg["name"].is_string() ? msg["name"].get<std::string>() : "";
  if (name.size() > 64) name.resize(64);

  auto free_seat = [&](Team t) {
    for (int slot = 0; slot < kPlayersPerTeam; ++slot) {
      const int id = t == Team::Blue ? slot : slot + kPlayersPerTeam;
      if (seats_[id].kind != SeatKind::Human && seats_[id].kind != SeatKind::IdleHold) return id;
    }
    return -1;
  };
  auto humans = [&](Team t) {
    int n = 0;
    for (int id = 0; id < kNumPlayers; ++id) n += seats_[id].kind == SeatKind::Human && team_of(id) == t ? 1 : 0;
    return n;
  };
  int seat = -1;
  if (want == "auto") {
    const Team first = humans(Team::White) < humans(Team::Blue) ? Team::White : Team::Blue;
    seat = free_seat(first);
    if (seat < 0) seat = free_seat(other(first));
    if (seat < 0) {
      error(conn, "full", "all seats are taken");
      return;
    }
  } else {
    seat = free_seat(parse_team(want));
    if (seat < 0) {
      const bool any = free_seat(Team::Blue) >= 0 || free_seat(Team::White) >= 0;
      error(conn, any ? "team_full" : "full", any ? "no free seat on team " + want : "all seats are taken");
      return;
    }
  }

  Seat& s = seats_[seat];
  s.kind = SeatKind::Human;
  s.conn = conn;
  s.name = name;
  s.pending = Intent{};
  s.last_input_s = now;
  if (!s.recorder) open_recorder(seat);
  running_ = true;
  json arena;
  to_json(arena, cfg_.arena);
  send(conn, {{"type", "welcome"},
              {"player_id", seat},
              {"team", team_name(team_of(seat))},
              {"arena", arena},
              {"tick_dt", cfg_.arena.tick_dt}});
  log_event({{"event", "join"}, {"player_id", seat}, {"name", name}, {"team", team_name(team_of(seat))},
             {"demo", s.recorder->path().string()}});
}

void Session::open_recorder(int seat) {
  Seat& s = seats_[seat];
  DemoSource src;
  if (s.kind == SeatKind::Human) {
    src.kind = DemoSourceKind::Human;
  } else if (s.kind == SeatKind::Bot) {
    src = {DemoSourceKind::Policy, bot_->label};
  }
  // A seed makes sense only when recording starts with the session's first tick.
  const bool fresh = frame_tick_ == 0;
  char name[96];
  std::snprintf(name, sizeof name, "_seat%d_%03d%s", seat, demo_counter_++, kDemoExtension);
  const auto path = std::filesystem::path(cfg_.demo_dir) / (cfg_.session_id + name);
  s.recorder = std::make_unique<DemoRecorder>(
      path, make_demo_header(cfg_.arena, cfg_.rays, cfg_.session_id, seat, src,
                             fresh ? std::optional<std::uint64_t>(cfg_.seed) : std::nullopt));
  demo_files_.push_back(path);
}

void Session::release_seat(int seat, const std::string& why, double) {
  Seat& s = seats_[seat];
  log_event({{"event", why}, {"player_id", seat}, {"name", s.name}});
  s.kind = s.fallback;
  s.conn = -1;
  s.pending = Intent{};
  if (!cfg_.record_all) s.recorder.reset();
}

void Session::on_input(int conn, const json& msg, double now) {
  const int seat = seat_of(conn);
  if (seat < 0) {
    error(conn, "not_seated", "input from a connection without a human seat");
    return;
  }
  if (!msg.contains("move") || !msg["move"].is_array() || msg["move"].size() != 2 || !msg["move"][0].is_number() ||
      !msg["move"][1].is_number()) {
    error(conn, "bad_message", "input.move must be [mx, my]");
    return;
  }
  Intent in;
  bool clean = clamp_axis(msg["move"][0], in.move_x);
  clean = clamp_axis(msg["move"][1], in.move_y) && clean;
  if (!clean) ++counters_["clamped_move"];
  if (msg.contains("act")) {
    const json& a = msg["act"];
    if (a.is_boolean()) {
      in.throw_ball = a.get<bool>();
    } else if (a.is_number()) {
      const double v = a.get<double>();
      in.throw_ball = v != 0.0 && !std::isnan(v);
      if (v != 0.0 && v != 1.0) ++counters_["clamped_act"];
    } else {
      error(conn, "bad_message", "input.act must be 0 or 1");
      return;
    }
  }
  ++counters_["inputs"];
  Seat& s = seats_[seat];
  s.pending = in;
  s.last_input_s = now;
}

bool Session::on_clock(double now) {
  for (int id = 0; id < kNumPlayers; ++id) {
    Seat& s = seats_[id];
    if (s.kind == SeatKind::Human && now - s.last_input_s >= cfg_.idle_timeout_s) {
      const int conn = s.conn;
      release_seat(id, "idle", now);
      error(conn, "idle", "no input for " + std::to_string(static_cast<int>(cfg_.idle_timeout_s)) +
                              " s; seat handed to a bot");
    }
  }
  if (!running_) return false;
  if (intermission_) {
    if (now < resume_at_) return false;
    intermission_ = false;
    world_ = reset_round(world_);
  }
  step_world();
  if (world_.outcome.kind != OutcomeKind::Ongoing) {
    intermission_ = true;
    resume_at_ = now + cfg_.intermission_s;
  }
  return true;
}

void Session::step_world() {
  std::array<Intent, kNumPlayers> intents{};
  std::array<Observation, kNumPlayers> obs;
  for (int id = 0; id < kNumPlayers; ++id) {
    Seat& s = seats_[id];
    switch (s.kind) {
      case SeatKind::Human:
        intents[id] = s.pending;
        // Movement repeats until the next input; throws do not.
        s.pending.throw_ball = false;
        break;
      case SeatKind::Bot: intents[id] = act(*bot_, world_, id, bot_rng_); break;
      case SeatKind::Scripted: intents[id] = scripted_expert_intent(world_, id); break;
      case SeatKind::IdleHold: break;
    }
    if (!world_.players[id].active) intents[id] = Intent{};
    if (s.recorder) obs[id] = observe(world_, id, perception_);
  }
  const auto events = step(world_, intents);
  const auto rew = compute_rewards(events);
  const bool done = world_.outcome.kind != OutcomeKind::Ongoing;
  for (int id = 0; id < kNumPlayers; ++id) {
    Seat& s = seats_[id];
    if (s.recorder) s.recorder->record_step(obs[id], from_world_intent(intents[id], team_of(id), perception_), rew[id], done);
  }
  ++frame_tick_;
  broadcast(state_frame());
  if (done) {
    ++rounds_played_;
    const Outcome& o = world_.outcome;
    const std::string winner = o.kind == OutcomeKind::Draw ? "draw" : team_name(o.winner);
    broadcast({{"type", "round_end"}, {"winner", winner}, {"time_s", o.time_s}});
    log_event({{"event", "round_end"}, {"round", rounds_played_}, {"winner", winner}, {"time_s", o.time_s},
               {"counters", counters_}});
  }
}

json Session::state_frame() const {
  json players = json::array();
  for (const PlayerState& p : world_.players) {
    players.push_back({{"id", p.id},
                       {"team", team_name(p.team)},
                       {"pos", vec(p.pos)},
                       {"stun", world_.stun_remaining(p.id)},
                       {"has_ball", p.held_ball.has_value()},
                       {"has_flag", p.carried_flag.has_value()},
                       {"active", p.active}});
  }
  json balls = json::array();
  for (const BallState& b : world_.balls) {
    balls.push_back({{"id", b.id}, {"pos", vec(b.pos)}, {"mode", ball_mode_name(b.mode)}});
  }
  json flags = json::array();
  for (const FlagState& f : world_.flags) {
    flags.push_back({{"team", team_name(f.team)}, {"pos", vec(f.pos)}, {"mode", flag_mode_name(f.mode)}});
  }
  return {{"type", "state"},
          {"tick", frame_tick_},
          {"players", players},
          {"balls", balls},
          {"flags", flags},
          {"time_s", world_.time_s()}};
}

}  // namespace ctf
