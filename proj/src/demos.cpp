#include "ctf/demos.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace ctf {
namespace {

using ojson = nlohmann::ordered_json;

ojson header_json(const DemoHeader& h) {
  ojson j;
  j["magic"] = h.magic;
  j["version"] = h.version;
  j["obs_layout"] = h.obs_layout;
  j["obs_dim"] = h.obs_dim;
  j["action_branches"] = h.action_branches;
  j["tick_dt"] = h.tick_dt;
  nlohmann::json arena = h.arena;
  j["arena"] = ojson::parse(arena.dump());
  j["session_id"] = h.session_id;
  j["agent_id"] = h.agent_id;
  j["team"] = team_name(h.team);
  j["source"] = to_string(h.source);
  if (h.seed) j["seed"] = *h.seed;
  return j;
}

DemoHeader parse_header(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("demo header is not JSON: ") + e.what());
  }
  DemoHeader h;
  try {
    h.magic = j.at("magic").get<std::string>();
    if (h.magic != kDemoMagic) throw FormatError("bad demo magic '" + h.magic + "'");
    h.version = j.at("version").get<int>();
    if (h.version != kDemoVersion) throw FormatError("unsupported demo version " + std::to_string(h.version));
    h.obs_layout = j.at("obs_layout").get<std::string>();
    h.obs_dim = j.at("obs_dim").get<int>();
    h.action_branches = j.at("action_branches").get<std::array<int, kNumBranches>>();
    h.tick_dt = j.at("tick_dt").get<double>();
    h.arena = j.at("arena").get<ArenaConfig>();
    h.session_id = j.at("session_id").get<std::string>();
    h.agent_id = j.at("agent_id").get<int>();
    h.team = parse_team(j.at("team").get<std::string>());
    h.source = parse_demo_source(j.at("source").get<std::string>());
    if (j.contains("seed")) h.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad demo header: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("bad demo header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad demo header: ") + e.what());
  }
  return h;
}

std::string step_line(std::int64_t t, std::span<const double> obs, const Action& act, double rew, bool done) {
  ojson j;
  j["t"] = t;
  j["obs"] = std::vector<double>(obs.begin(), obs.end());
  j["act"] = act.branch;
  j["rew"] = rew;
  j["done"] = done;
  return j.dump();
}

DemoStep parse_step(const nlohmann::json& j) {
  DemoStep s;
  s.t = j.at("t").get<std::int64_t>();
  s.obs = j.at("obs").get<std::vector<double>>();
  s.act.branch = j.at("act").get<std::array<int, kNumBranches>>();
  s.rew = j.at("rew").get<double>();
  s.done = j.at("done").get<bool>();
  return s;
}

bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

}  // namespace

std::string to_string(const DemoSource& s) {
  switch (s.kind) {
    case DemoSourceKind::Human: return "Human";
    case DemoSourceKind::Scripted: return "Scripted";
    case DemoSourceKind::Policy: return "Policy:" + s.checkpoint;
  }
  return "?";
}

DemoSource parse_demo_source(const std::string& s) {
  if (s == "Human") return {DemoSourceKind::Human, {}};
  if (s == "Scripted") return {DemoSourceKind::Scripted, {}};
  if (s.rfind("Policy:", 0) == 0) return {DemoSourceKind::Policy, s.substr(7)};
  throw FormatError("unknown demo source '" + s + "'");
}

bool bitwise_equal(const Trajectory& a, const Trajectory& b) {
  if (!(a.header == b.header) || a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const DemoStep& x = a.steps[i];
    const DemoStep& y = b.steps[i];
    if (x.t != y.t || !(x.act == y.act) || x.done != y.done || !same_bits(x.rew, y.rew)) return false;
    if (x.obs.size() != y.obs.size()) return false;
    for (std::size_t k = 0; k < x.obs.size(); ++k) {
      if (!same_bits(x.obs[k], y.obs[k])) return false;
    }
  }
  return true;
}

DemoHeader make_demo_header(const ArenaConfig& arena, int rays, std::string session_id, int agent_id,
                            DemoSource source, std::optional<std::uint64_t> seed) {
  DemoHeader h;
  h.obs_dim = obs_dim(arena, rays);
  h.tick_dt = arena.tick_dt;
  h.arena = arena;
  h.session_id = std::move(session_id);
  h.agent_id = agent_id;
  h.team = team_of(agent_id);
  h.source = std::move(source);
  h.seed = seed;
  return h;
}

DemoRecorder::DemoRecorder(const std::filesystem::path& path, DemoHeader header)
    : path_(path), header_(std::move(header)) {
  if (path_.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path_.parent_path(), ec);
  }
  out_.open(path_, std::ios::out | std::ios::trunc);
  if (!out_) throw IoError("cannot open demo file " + path_.string());
  out_ << header_json(header_).dump() << '\n';
  out_.flush();
}

void DemoRecorder::record_step(std::span<const double> obs, const Action& act, double rew, bool done) {
  if (obs.size() != static_cast<std::size_t>(header_.obs_dim)) {
    throw ContractError("record_step: expected obs_dim " + std::to_string(header_.obs_dim) + ", got " +
                        std::to_string(obs.size()));
  }
  decode_action(act);
  out_ << step_line(next_t_, obs, act, rew, done) << '\n';
  out_.flush();
  if (!out_) throw IoError("write failed on " + path_.string());
  ++next_t_;
}

void write_demo(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path, std::ios::out | std::ios::trunc);
  if (!out) throw IoError("cannot open demo file " + path.string());
  out << header_json(traj.header).dump() << '\n';
  for (const DemoStep& s : traj.steps) out << step_line(s.t, s.obs, s.act, s.rew, s.done) << '\n';
  if (!out) throw IoError("write failed on " + path.string());
}

Trajectory read_demo(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open demo file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  const bool ends_with_newline = !text.empty() && text.back() == '\n';
  if (lines.empty()) throw FormatError(path.string() + ": empty demo file");

  Trajectory traj;
  traj.header = parse_header(lines[0]);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const bool last = i + 1 == lines.size();
    try {
      traj.steps.push_back(parse_step(nlohmann::json::parse(lines[i])));
    } catch (const nlohmann::json::exception& e) {
      if (last && !ends_with_newline) {
        if (warnings) warnings->push_back(path.string() + ": truncated final line " + std::to_string(i + 1) + " skipped");
        break;
      }
      throw FormatError(path.string() + ": line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return traj;
}

DemoReport validate_demo(const std::filesystem::path& path) {
  DemoReport report;
  auto problem = [&](std::size_t line, const std::string& what) {
    report.problems.push_back("line " + std::to_string(line) + ": " + what);
  };

  Trajectory traj;
  std::vector<std::string> warnings;
  try {
    traj = read_demo(path, &warnings);
  } catch (const std::exception& e) {
    report.problems.push_back(e.what());
    return report;
  }
  for (const std::string& w : warnings) report.problems.push_back(w);

  const DemoHeader& h = traj.header;
  if (h.obs_layout != kObsLayout) problem(1, "unknown obs_layout '" + h.obs_layout + "'");
  if (h.obs_dim <= kStateValues || (h.obs_dim - kStateValues) % kRayFeatures != 0) {
    problem(1, "obs_dim " + std::to_string(h.obs_dim) + " does not match the obsv1 layout");
  }
  if (h.action_branches != kActionBranches) problem(1, "action_branches must be [3,3,2]");
  if (h.agent_id < 0 || h.agent_id >= kNumPlayers) problem(1, "agent_id out of range");
  else if (team_of(h.agent_id) != h.team) problem(1, "team does not match agent_id");
  if (!(h.tick_dt > 0.0)) problem(1, "tick_dt must be positive");
  if (traj.steps.empty()) problem(1, "no steps");

  std::int64_t prev_t = 0;
  double prev_time_fraction = 0.0;
  bool prev_done = false;
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const DemoStep& s = traj.steps[i];
    const std::size_t line = i + 2;
    if (i > 0 && s.t <= prev_t) problem(line, "t " + std::to_string(s.t) + " not greater than " + std::to_string(prev_t));
    prev_t = s.t;
    if (s.obs.size() != static_cast<std::size_t>(h.obs_dim)) {
      problem(line, "obs length " + std::to_string(s.obs.size()) + " != obs_dim " + std::to_string(h.obs_dim));
    }
    for (std::size_t k = 0; k < s.obs.size(); ++k) {
      if (!std::isfinite(s.obs[k]) || s.obs[k] < -1.0 || s.obs[k] > 1.0) {
        std::ostringstream os;
        os << "obs[" << k << "] = " << s.obs[k] << " out of range [-1,1]";
        problem(line, os.str());
        break;
      }
    }
    for (int b = 0; b < kNumBranches; ++b) {
      if (s.act.branch[b] < 0 || s.act.branch[b] >= kActionBranches[b]) {
        problem(line, "action branch " + std::to_string(b) + " out of range");
      }
    }
    if (!std::isfinite(s.rew)) problem(line, "non-finite reward");
    // The time-fraction entry restarts at every round boundary, so a drop
    // without a preceding done (or a done without a drop) is misplaced.
    if (h.obs_layout == kObsLayout && s.obs.size() > static_cast<std::size_t>(obs_index::kTimeFraction)) {
      const double tf = s.obs[obs_index::kTimeFraction];
      if (i > 0) {
        if (tf < prev_time_fraction && !prev_done) problem(line, "round restarted without a done on the previous step");
        if (prev_done && tf > prev_time_fraction) problem(line - 1, "done placed before the end of the round");
      }
      prev_time_fraction = tf;
    }
    prev_done = s.done;
    if (s.done) ++report.rounds;
  }
  report.steps = static_cast<std::int64_t>(traj.steps.size());
  report.duration_s = static_cast<double>(report.steps) * h.tick_dt;
  report.ok = report.problems.empty();
  return report;
}

std::vector<std::filesystem::path> list_demo_files(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_directory(path)) {
    for (const auto& e : std::filesystem::directory_iterator(path)) {
      const std::string name = e.path().filename().string();
      if (e.is_regular_file() && name.size() > std::string(kDemoExtension).size() &&
          name.ends_with(kDemoExtension)) {
        out.push_back(e.path());
      }
    }
    std::sort(out.begin(), out.end());
  } else {
    out.push_back(path);
  }
  return out;
}

}  // namespace ctf
