#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ctf/arena.hpp"
#include "ctf/demos.hpp"

namespace ctf {

struct SessionConfig {
  ArenaConfig arena;
  std::uint64_t seed = 1;
  std::string session_id = "session";
  std::string demo_dir = "demos";
  std::string log_path;  // empty: <demo_dir>/<session_id>.log.jsonl
  double idle_timeout_s = 60.0;
  double intermission_s = 5.0;
  int rays = kDefaultRays;
  // Record every seat, not only human ones (makes sessions replayable).
  bool record_all = false;

  void validate() const;
  std::filesystem::path effective_log_path() const;
};

nlohmann::json to_json(const SessionConfig& c);
SessionConfig session_config_from_json(const nlohmann::json& j);
SessionConfig load_session_config(const std::filesystem::path& path);

enum class SeatKind { Human, Bot, Scripted, IdleHold };
const char* seat_kind_name(SeatKind k);

// Frames leave through the sink: (connection id, JSON text).
using FrameSink = std::function<void(int, const std::string&)>;

// Authoritative game session without any I/O of its own. The caller feeds
// messages and clock periods in order; `now` is seconds on any monotonic clock.
class Session {
 public:
  // With a bot source every non-human seat is driven greedily by it,
  // otherwise by the scripted expert. Throws FormatError for an incompatible
  // checkpoint.
  Session(SessionConfig cfg, std::optional<PolicySource> bot, FrameSink sink);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  void connect(int conn);
  void disconnect(int conn, double now);
  void handle(int conn, const std::string& text, double now);
  // One clock period: idle checks, then one engine tick unless the session
  // is waiting for its first human or sits in an intermission. Returns true
  // when the world advanced.
  bool on_clock(double now);

  const WorldState& world() const { return world_; }
  SeatKind seat_kind(int seat) const { return seats_[seat].kind; }
  int seat_connection(int seat) const { return seats_[seat].conn; }
  bool running() const { return running_; }
  bool in_intermission() const { return intermission_; }
  std::int64_t frames() const { return frame_tick_; }
  int rounds_played() const { return rounds_played_; }
  const std::map<std::string, std::int64_t>& counters() const { return counters_; }
  // Every demo file opened so far, in opening order.
  const std::vector<std::filesystem::path>& demo_files() const { return demo_files_; }

 private:
  struct Seat {
    SeatKind kind = SeatKind::Scripted;
    SeatKind fallback = SeatKind::Scripted;
    int conn = -1;
    std::string name;
    Intent pending;
    double last_input_s = 0.0;
    std::unique_ptr<DemoRecorder> recorder;
  };

  void send(int conn, const nlohmann::json& msg);
  void broadcast(const nlohmann::json& msg);
  void error(int conn, const std::string& code, const std::string& msg);
  void log_event(nlohmann::json entry);
  void on_join(int conn, const nlohmann::json& msg, double now);
  void on_input(int conn, const nlohmann::json& msg, double now);
  void release_seat(int seat, const std::string& why, double now);
  void open_recorder(int seat);
  int seat_of(int conn) const;
  void step_world();
  nlohmann::json state_frame() const;

  SessionConfig cfg_;
  std::optional<PolicySource> bot_;
  FrameSink sink_;
  PerceptionConfig perception_;
  WorldState world_;
  Rng bot_rng_;
  std::array<Seat, kNumPlayers> seats_;
  std::set<int> conns_;
  bool running_ = false;
  bool intermission_ = false;
  double resume_at_ = 0.0;
  std::int64_t frame_tick_ = 0;
  int rounds_played_ = 0;
  int demo_counter_ = 0;
  std::map<std::string, std::int64_t> counters_;
  std::vector<std::filesystem::path> demo_files_;
  std::ofstream log_;
};

// WebSocket front end: one io thread accepts connections, reads frames and
// drives the session clock at the arena tick rate.
class SessionServer {
 public:
  // Binds immediately; throws IoError when the port is busy. Port 0 picks a
  // free one.
  SessionServer(SessionConfig cfg, unsigned short port, std::optional<PolicySource> bot,
                const std::string& address = "0.0.0.0");
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  unsigned short port() const;
  void start();  // background thread
  void run();    // blocks until stop()
  void stop();
  // Valid to inspect once stopped.
  const Session& session() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

// Loads the checkpoint (if any) and binds the port; startup errors throw.
std::unique_ptr<SessionServer> start_session(const SessionConfig& cfg, unsigned short port,
                                             const std::optional<std::string>& bot_checkpoint,
                                             const std::string& address = "0.0.0.0");

}  // namespace ctf
