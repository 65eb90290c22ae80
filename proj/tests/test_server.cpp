#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "ctf/server.hpp"
#include "ctf/training.hpp"

using namespace ctf;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("ctf_srv_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

struct Captured {
  int conn;
  json msg;
};

struct Harness {
  std::filesystem::path dir;
  std::vector<Captured> out;
  std::unique_ptr<Session> s;
  double now = 0.0;

  explicit Harness(const std::string& tag, SessionConfig cfg = {}, std::optional<PolicySource> bot = {}) {
    dir = temp_dir(tag);
    cfg.demo_dir = dir.string();
    s = std::make_unique<Session>(cfg, bot, [this](int c, const std::string& t) { out.push_back({c, json::parse(t)}); });
  }
  ~Harness() {
    s.reset();
    std::filesystem::remove_all(dir);
  }
  void send(int conn, const json& j) { s->handle(conn, j.dump(), now); }
  bool clock() {
    const bool stepped = s->on_clock(now);
    now += s->world().config().tick_dt;
    return stepped;
  }
  std::vector<json> to(int conn, const std::string& type) const {
    std::vector<json> r;
    for (const Captured& c : out) {
      if (c.conn == conn && c.msg["type"] == type) r.push_back(c.msg);
    }
    return r;
  }
  json last(int conn) const {
    for (auto it = out.rbegin(); it != out.rend(); ++it) {
      if (it->conn == conn) return it->msg;
    }
    return nullptr;
  }
};

json join(const std::string& team = "auto") { return {{"type", "join"}, {"name", "p"}, {"team", team}}; }
json input(int mx, int my, int a = 0) { return {{"type", "input"}, {"tick", 0}, {"move", {mx, my}}, {"act", a}}; }

// Independent schema check for every frame the server may send.
std::string check_server_frame(const json& m) {
  auto is_vec = [](const json& v) { return v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number(); };
  auto is_team = [](const json& v) { return v.is_string() && (v == "blue" || v == "white"); };
  if (!m.is_object() || !m.contains("type") || !m["type"].is_string()) return "no type";
  const std::string t = m["type"];
  if (t == "welcome") {
    if (!m["player_id"].is_number_integer() || m["player_id"] < 0 || m["player_id"] > 5) return "player_id";
    if (!is_team(m["team"]) || !m["arena"].is_object() || !m["tick_dt"].is_number()) return "welcome fields";
  } else if (t == "state") {
    if (!m["tick"].is_number_integer() || !m["time_s"].is_number()) return "state header";
    if (!m["players"].is_array() || m["players"].size() != 6) return "players";
    for (const json& p : m["players"]) {
      if (!p["id"].is_number_integer() || !is_team(p["team"]) || !is_vec(p["pos"]) || !p["stun"].is_number() ||
          !p["has_ball"].is_boolean() || !p["has_flag"].is_boolean()) {
        return "player entry";
      }
    }
    for (const json& b : m["balls"]) {
      if (!b["id"].is_number_integer() || !is_vec(b["pos"]) || !b["mode"].is_string()) return "ball entry";
    }
    if (!m["flags"].is_array() || m["flags"].size() != 2) return "flags";
    for (const json& f : m["flags"]) {
      if (!is_team(f["team"]) || !is_vec(f["pos"]) || !f["mode"].is_string()) return "flag entry";
    }
  } else if (t == "round_end") {
    if (!m["winner"].is_string() || !(m["winner"] == "blue" || m["winner"] == "white" || m["winner"] == "draw")) {
      return "winner";
    }
    if (!m["time_s"].is_number()) return "time_s";
  } else if (t == "error") {
    if (!m["code"].is_string() || !m["msg"].is_string()) return "error fields";
  } else {
    return "unknown type " + t;
  }
  return "";
}

}  // namespace

// ---- configuration ---------------------------------------------------------------

TEST_CASE("session config round trip and errors") {
  SessionConfig c;
  c.seed = 9;
  c.session_id = "abc";
  c.record_all = true;
  const SessionConfig back = session_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(session_config_from_json(json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(session_config_from_json(json{{"idle_timeout_s", 0}}), ConfigError);
  CHECK_THROWS_AS(session_config_from_json(json{{"session_id", "a/b"}}), ConfigError);
  CHECK_THROWS_WITH_AS(load_session_config("/nonexistent/s.json"), doctest::Contains("/nonexistent/s.json"),
                       ConfigError);
}

// ---- seats and joins ------------------------------------------------------------------

TEST_CASE("initial seats and idle world") {
  Harness h("init");
  for (int i = 0; i < kNumPlayers; ++i) CHECK(h.s->seat_kind(i) == SeatKind::Scripted);
  CHECK_FALSE(h.s->running());
  for (int i = 0; i < 10; ++i) CHECK_FALSE(h.clock());
  CHECK(h.s->world().tick == 0);
  CHECK(h.s->frames() == 0);

  const nn::Checkpoint ck{.policy = nn::init_params(obs_dim(ArenaConfig{}, kDefaultRays), 1, 8)};
  const auto src = PolicySource::from_checkpoint(std::make_shared<const nn::Checkpoint>(ck), "bot");
  Harness b("bots", {}, src);
  for (int i = 0; i < kNumPlayers; ++i) CHECK(b.s->seat_kind(i) == SeatKind::Bot);
  CHECK_FALSE(b.s->running());

  nn::Checkpoint wrong = ck;
  wrong.policy = nn::init_params(7, 1, 8);
  const auto bad = PolicySource::from_checkpoint(std::make_shared<const nn::Checkpoint>(wrong), "bad");
  CHECK_THROWS_AS(Harness("bad", {}, bad), FormatError);
}

TEST_CASE("auto join balances teams and opens a recorder") {
  Harness h("auto");
  const std::vector<int> expect{0, 3, 1, 4, 2, 5};
  for (int c = 1; c <= 6; ++c) {
    h.send(c, join());
    const json w = h.last(c);
    REQUIRE(w["type"] == "welcome");
    CHECK(w["player_id"] == expect[c - 1]);
    CHECK(w["team"] == team_name(team_of(expect[c - 1])));
    CHECK(w["tick_dt"] == 0.05);
    CHECK(w["arena"]["width"] == ArenaConfig{}.width);
    CHECK(h.s->seat_kind(expect[c - 1]) == SeatKind::Human);
    CHECK(h.s->seat_connection(expect[c - 1]) == c);
  }
  CHECK(h.s->demo_files().size() == 6);
  for (const auto& f : h.s->demo_files()) CHECK(std::filesystem::exists(f));
  h.send(7, join());
  CHECK(h.last(7)["type"] == "error");
  CHECK(h.last(7)["code"] == "full");
  CHECK(h.s->running());
}

TEST_CASE("explicit team joins and protocol errors") {
  Harness h("team");
  for (int c = 1; c <= 3; ++c) {
    h.send(c, join("white"));
    CHECK(h.last(c)["player_id"] == 2 + c);
  }
  h.send(4, join("white"));
  CHECK(h.last(4)["code"] == "team_full");
  h.send(4, join("blue"));
  CHECK(h.last(4)["player_id"] == 0);
  h.send(4, join("blue"));
  CHECK(h.last(4)["code"] == "already_joined");
  h.send(5, join("green"));
  CHECK(h.last(5)["code"] == "bad_team");
  h.s->handle(5, "{nope", h.now);
  CHECK(h.last(5)["code"] == "bad_json");
  h.send(5, json{{"type", "dance"}});
  CHECK(h.last(5)["code"] == "unknown_type");
  h.send(5, json{{"move", {1, 0}}});
  CHECK(h.last(5)["code"] == "bad_message");
  h.send(5, input(1, 0));
  CHECK(h.last(5)["code"] == "not_seated");
  h.send(5, json{{"type", "leave"}});
  CHECK(h.last(5)["code"] == "not_seated");
  h.send(4, json{{"type", "input"}, {"move", {1}}});
  CHECK(h.last(4)["code"] == "bad_message");
  // Error frames conform to the schema too.
  for (const Captured& c : h.out) CHECK(check_server_frame(c.msg) == "");
}

TEST_CASE("leave and disconnect hand the seat back") {
  Harness h("leave");
  h.send(1, join());
  h.send(2, join());
  h.send(1, json{{"type", "leave"}});
  CHECK(h.s->seat_kind(0) == SeatKind::Scripted);
  h.s->disconnect(2, h.now);
  CHECK(h.s->seat_kind(3) == SeatKind::Scripted);
  h.send(3, join());
  CHECK(h.last(3)["player_id"] == 0);
}

// ---- inputs --------------------------------------------------------------------------

TEST_CASE("inputs apply at the next tick, latest wins, movement repeats") {
  SessionConfig cfg;
  cfg.arena = ArenaConfig::open();
  Harness h("input", cfg);
  h.send(1, join("blue"));
  const double x0 = h.s->world().players[0].pos.x;
  h.send(1, input(1, 0));
  REQUIRE(h.clock());
  const double x1 = h.s->world().players[0].pos.x;
  CHECK(x1 > x0);
  h.send(1, input(1, 0));
  h.send(1, input(-1, 0));
  h.clock();
  const double x2 = h.s->world().players[0].pos.x;
  CHECK(h.s->world().players[0].vel.x < 0.0);
  h.clock();
  h.clock();
  CHECK(h.s->world().players[0].pos.x < x2);
  CHECK(h.s->world().players[0].vel.x < 0.0);
}

TEST_CASE("throws do not repeat and malformed values are clamped") {
  SessionConfig cfg;
  cfg.arena = ArenaConfig::open();
  Harness h("clamp", cfg);
  h.send(1, join("blue"));
  h.send(1, json{{"type", "input"}, {"tick", 0}, {"move", {5, -0.4}}, {"act", 1}});
  h.clock();
  h.clock();
  h.send(1, json{{"type", "input"}, {"tick", 2}, {"move", {0, 0}}, {"act", 3}});
  h.clock();
  CHECK(h.s->counters().at("clamped_move") == 1);
  CHECK(h.s->counters().at("clamped_act") == 1);
  const std::filesystem::path demo = h.s->demo_files().at(0);
  const Trajectory t = read_demo(demo);
  REQUIRE(t.steps.size() == 3);
  CHECK(t.steps[0].act == from_world_intent(Intent{1, 0, true}, Team::Blue));
  CHECK(t.steps[1].act == from_world_intent(Intent{1, 0, false}, Team::Blue));
  CHECK(t.steps[2].act == from_world_intent(Intent{0, 0, true}, Team::Blue));
}

TEST_CASE("human demo grows by exactly one step per tick") {
  Harness h("grow");
  h.send(1, join());
  const auto path = h.s->demo_files().at(0);
  for (int i = 1; i <= 25; ++i) {
    h.send(1, input(i % 3 - 1, 1));
    h.clock();
    CHECK(read_demo(path).steps.size() == static_cast<std::size_t>(i));
  }
  const DemoReport r = validate_demo(path);
  CHECK(r.ok);
  CHECK(read_demo(path).header.source.kind == DemoSourceKind::Human);
  CHECK(read_demo(path).header.seed == SessionConfig{}.seed);
}

TEST_CASE("a silent human is replaced after the idle timeout") {
  Harness h("idle");
  h.send(1, join());
  h.send(2, json{{"type", "join"}, {"team", "auto"}});
  while (h.now < 59.9) {
    h.send(2, input(0, 0));
    h.clock();
  }
  CHECK(h.s->seat_kind(0) == SeatKind::Human);
  while (h.now < 60.2) {
    h.send(2, input(0, 0));
    h.clock();
  }
  CHECK(h.s->seat_kind(0) == SeatKind::Scripted);
  CHECK(h.s->seat_kind(3) == SeatKind::Human);
  const auto errs = h.to(1, "error");
  REQUIRE(errs.size() == 1);
  CHECK(errs[0]["code"] == "idle");
  std::ifstream log(SessionConfig{.demo_dir = h.dir.string()}.effective_log_path());
  bool logged = false;
  for (std::string line; std::getline(log, line);) logged = logged || json::parse(line)["event"] == "idle";
  CHECK(logged);
}

// ---- ticks, rounds and intermission -----------------------------------------------------------

TEST_CASE("round end time matches an engine replay; intermission then reset") {
  SessionConfig cfg;
  cfg.seed = 5;
  Harness h("round", cfg);
  h.s->connect(9);  // spectator
  h.send(1, join("blue"));
  int guard = 0;
  while (h.s->rounds_played() == 0 && guard++ < 30'000) {
    h.send(1, input(0, 0));
    h.clock();
  }
  REQUIRE(h.s->rounds_played() == 1);
  const auto ends = h.to(9, "round_end");
  REQUIRE(ends.size() == 1);

  // Oracle: the same world driven directly through the engine.
  WorldState w = new_world(cfg.arena, cfg.seed);
  std::array<Intent, kNumPlayers> in{};
  while (w.outcome.kind == OutcomeKind::Ongoing) {
    for (int id = 0; id < kNumPlayers; ++id) in[id] = id == 0 ? Intent{} : scripted_expert_intent(w, id);
    step(w, in);
  }
  CHECK(ends[0]["time_s"].get<double>() == w.outcome.time_s);
  CHECK(ends[0]["time_s"].get<double>() == static_cast<double>(w.tick) * 0.05);
  CHECK(ends[0]["winner"] == (w.outcome.kind == OutcomeKind::Draw ? "draw" : team_name(w.outcome.winner)));
  CHECK(bitwise_equal(h.s->world(), w));

  // Five seconds without steps, then a fresh round.
  const std::int64_t frames = h.s->frames();
  const double end_time = h.now;
  int idle_periods = 0;
  while (!h.clock()) {
    ++idle_periods;
    h.send(1, input(0, 0));
  }
  CHECK(h.now - end_time >= 5.0);
  CHECK(idle_periods >= 99);
  CHECK(idle_periods <= 101);
  CHECK(h.s->frames() == frames + 1);
  CHECK(h.s->world().tick == 1);

  std::int64_t prev = 0;
  for (const json& m : h.to(9, "state")) {
    REQUIRE(m["tick"].get<std::int64_t>() == prev + 1);
    prev = m["tick"];
  }
  for (const Captured& c : h.out) REQUIRE(check_server_frame(c.msg) == "");
}

TEST_CASE("a human sending the expert's actions is indistinguishable from a scripted seat") {
  SessionConfig cfg;
  cfg.seed = 3;
  Harness h("transparent", cfg);
  h.send(1, join("blue"));
  WorldState w = new_world(cfg.arena, cfg.seed);
  std::array<Intent, kNumPlayers> in{};
  for (int t = 0; t < 400; ++t) {
    const Intent e = scripted_expert_intent(h.s->world(), 0);
    h.send(1, input(e.move_x, e.move_y, e.throw_ball ? 1 : 0));
    h.clock();
    for (int id = 0; id < kNumPlayers; ++id) in[id] = scripted_expert_intent(w, id);
    step(w, in);
    REQUIRE(bitwise_equal(h.s->world(), w));
    if (w.outcome.kind != OutcomeKind::Ongoing) break;
  }
}

TEST_CASE("recorded session demos replay through the engine") {
  SessionConfig cfg;
  cfg.seed = 21;
  cfg.record_all = true;
  cfg.intermission_s = 0.0;
  cfg.arena.draw_time = 30.0;
  Harness h("replay", cfg);
  h.send(1, join("white"));
  Rng rng(4);
  while (h.s->rounds_played() < 2) {
    if (uniform01(rng) < 0.3) {
      h.send(1, input(static_cast<int>(uniform_index(rng, 3)) - 1, static_cast<int>(uniform_index(rng, 3)) - 1,
                      static_cast<int>(uniform_index(rng, 2))));
    }
    h.clock();
  }
  std::array<Trajectory, kNumPlayers> demos;
  REQUIRE(h.s->demo_files().size() == 6);
  for (const auto& f : h.s->demo_files()) {
    REQUIRE(validate_demo(f).ok);
    Trajectory t = read_demo(f);
    demos[t.header.agent_id] = std::move(t);
  }
  CHECK(demos[3].header.source.kind == DemoSourceKind::Scripted);  // seat was recorded before the join
  const std::size_t n = demos[0].steps.size();
  for (const auto& d : demos) REQUIRE(d.steps.size() == n);

  WorldState w = new_world(demos[0].header.arena, *demos[0].header.seed);
  std::array<Intent, kNumPlayers> in{};
  for (std::size_t k = 0; k < n; ++k) {
    for (int id = 0; id < kNumPlayers; ++id) {
      const Observation o = observe(w, id);
      REQUIRE(std::memcmp(o.data(), demos[id].steps[k].obs.data(), o.size() * sizeof(double)) == 0);
      in[id] = to_world_intent(demos[id].steps[k].act, team_of(id));
    }
    step(w, in);
    REQUIRE((w.outcome.kind != OutcomeKind::Ongoing) == demos[0].steps[k].done);
    if (demos[0].steps[k].done && k + 1 < n) w = reset_round(w);
  }
}

TEST_CASE("bots drive every empty seat greedily") {
  const ArenaConfig arena;
  const nn::Checkpoint ck{.policy = nn::init_params(obs_dim(arena, kDefaultRays), 4, 8)};
  const auto src = PolicySource::from_checkpoint(std::make_shared<const nn::Checkpoint>(ck), "bot");
  SessionConfig cfg;
  Harness h("botplay", cfg, src);
  h.send(1, join());
  WorldState w = new_world(arena, cfg.seed);
  Rng unused(0);
  std::array<Intent, kNumPlayers> in{};
  for (int t = 0; t < 50; ++t) {
    h.send(1, input(0, 1));
    h.clock();
    for (int id = 0; id < kNumPlayers; ++id) in[id] = id == 0 ? Intent{0, 1, false} : act(src, w, id, unused);
    step(w, in);
    REQUIRE(bitwise_equal(h.s->world(), w));
  }
}

// ---- over the network -----------------------------------------------------------------

namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

struct Client {
  asio::io_context io;
  websocket::stream<tcp::socket> ws{io};

  explicit Client(unsigned short port) {
    tcp::resolver r(io);
    asio::connect(ws.next_layer(), r.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/");
    ws.text(true);
  }
  void send(const json& j) { ws.write(asio::buffer(j.dump())); }
  json recv() {
    beast::flat_buffer b;
    ws.read(b);
    return json::parse(beast::buffers_to_string(b.data()));
  }
  json recv_type(const std::string& type) {
    for (;;) {
      json m = recv();
      if (m["type"] == type) return m;
    }
  }
};

}  // namespace

TEST_CASE("websocket session: welcome, conforming frames and 20 Hz cadence") {
  const auto dir = temp_dir("ws");
  SessionConfig cfg;
  cfg.demo_dir = dir.string();
  auto server = start_session(cfg, 0, std::nullopt, "127.0.0.1");
  REQUIRE(server->port() != 0);
  {
    Client c(server->port());
    c.send(join());
    const json w = c.recv();
    REQUIRE(check_server_frame(w) == "");
    CHECK(w["type"] == "welcome");
    CHECK(w["player_id"] == 0);

    using clock = std::chrono::steady_clock;
    std::vector<clock::time_point> arrivals;
    std::int64_t prev = -1;
    while (arrivals.size() < 200) {
      c.send(input(1, 0));
      const json m = c.recv();
      REQUIRE(check_server_frame(m) == "");
      if (m["type"] != "state") continue;
      REQUIRE(m["tick"].get<std::int64_t>() > prev);
      prev = m["tick"];
      arrivals.push_back(clock::now());
    }
    const double mean =
        std::chrono::duration<double>(arrivals.back() - arrivals.front()).count() / (arrivals.size() - 1);
    CHECK(mean == doctest::Approx(0.05).epsilon(0.1));

    Client other(server->port());
    other.send(json{{"type", "input"}, {"move", {0, 0}}, {"act", 0}});
    const json e = other.recv_type("error");
    CHECK(e["code"] == "not_seated");
  }
  server->stop();
  CHECK(server->session().seat_kind(0) == SeatKind::Scripted);
  const auto files = server->session().demo_files();
  REQUIRE(files.size() == 1);
  CHECK(validate_demo(files[0]).ok);
  CHECK(validate_demo(files[0]).steps >= 190);
  server.reset();
  std::filesystem::remove_all(dir);
}

TEST_CASE("seventh client over the network gets full; startup errors") {
  const auto dir = temp_dir("ws7");
  SessionConfig cfg;
  cfg.demo_dir = dir.string();
  auto server = start_session(cfg, 0, std::nullopt, "127.0.0.1");
  {
    std::vector<std::unique_ptr<Client>> cs;
    for (int i = 0; i < 6; ++i) {
      cs.push_back(std::make_unique<Client>(server->port()));
      cs.back()->send(join());
      CHECK(cs.back()->recv_type("welcome")["player_id"].is_number());
    }
    Client seventh(server->port());
    seventh.send(join());
    const json e = seventh.recv_type("error");
    CHECK(e["code"] == "full");

    CHECK_THROWS_AS(start_session(cfg, server->port(), std::nullopt, "127.0.0.1"), IoError);
  }
  CHECK_THROWS(start_session(cfg, 0, std::string((dir / "missing.ckpt").string()), "127.0.0.1"));
  server->stop();
  server.reset();
  std::filesystem::remove_all(dir);
}
