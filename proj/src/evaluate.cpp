#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ctf/arena.hpp"

namespace ctf {

PolicySource PolicySource::expert() { return {PolicyKind::Expert, "expert", nullptr}; }

PolicySource PolicySource::random() { return {PolicyKind::Random, "random", nullptr}; }

PolicySource PolicySource::from_checkpoint(std::shared_ptr<const nn::Checkpoint> ckpt, std::string label) {
  if (!ckpt) throw ContractError("from_checkpoint: null checkpoint");
  return {PolicyKind::Checkpoint, std::move(label), std::move(ckpt)};
}

PolicySource PolicySource::parse(const std::string& spec) {
  if (spec == "expert" || spec == "scripted") return expert();
  if (spec == "random") return random();
  const std::string path = spec.rfind("ckpt:", 0) == 0 ? spec.substr(5) : spec;
  auto ckpt = std::make_shared<const nn::Checkpoint>(nn::load_checkpoint(path));
  return from_checkpoint(std::move(ckpt), path);
}

void check_compatible(const PolicySource& src, const ArenaConfig& arena) {
  if (src.kind != PolicyKind::Checkpoint) return;
  const nn::Checkpoint& c = *src.checkpoint;
  if (c.obs_layout != kObsLayout) {
    throw FormatError(src.label + ": observation layout '" + c.obs_layout + "' is not " + kObsLayout);
  }
  const int want = obs_dim(arena, c.rays);
  if (c.policy.obs_dim() != want) {
    throw FormatError(src.label + ": checkpoint expects " + std::to_string(c.policy.obs_dim()) +
                      " observation values, arena gives " + std::to_string(want));
  }
}

Intent act(const PolicySource& src, const WorldState& w, int agent, Rng& rng) {
  switch (src.kind) {
    case PolicyKind::Expert: return scripted_expert_intent(w, agent);
    case PolicyKind::Random: {
      Action a;
      for (int b = 0; b < kNumBranches; ++b) {
        a.branch[b] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(kActionBranches[b])));
      }
      return decode_action(a);
    }
    case PolicyKind::Checkpoint: {
      PerceptionConfig pc;
      pc.rays = src.checkpoint->rays;
      thread_local Observation obs;
      obs.resize(static_cast<std::size_t>(obs_dim(w.config(), pc.rays)));
      observe_into(w, agent, pc, obs);
      const nn::PolicyOutput out = nn::policy_forward(src.checkpoint->policy, obs);
      const nn::SampledAction s = nn::sample_action(out.logits, rng, /*greedy=*/true);
      return to_world_intent(s.action, team_of(agent), pc);
    }
  }
  return {};
}

Metrics compute_metrics(std::span<const EpisodeRecord> log, double draw_time) {
  Metrics m;
  m.episodes = static_cast<int>(log.size());
  m.log.assign(log.begin(), log.end());
  if (log.empty()) {
    m.mean_round_time_s = m.mean_win_time_blue_s = m.mean_win_time_white_s = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  int draws = 0;
  int wins[2] = {0, 0};
  double win_time[2] = {0.0, 0.0};
  double total = 0.0;
  for (const EpisodeRecord& e : log) {
    if (e.outcome.kind == OutcomeKind::Won) {
      const int t = index(e.outcome.winner);
      ++wins[t];
      win_time[t] += e.outcome.time_s;
      total += e.outcome.time_s;
    } else {
      ++draws;
      total += draw_time;
    }
  }
  const double n = static_cast<double>(log.size());
  m.mean_round_time_s = total / n;
  m.win_rate_blue = wins[0] / n;
  m.win_rate_white = wins[1] / n;
  m.draw_rate = draws / n;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.mean_win_time_blue_s = wins[0] > 0 ? win_time[0] / wins[0] : nan;
  m.mean_win_time_white_s = wins[1] > 0 ? win_time[1] / wins[1] : nan;
  return m;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::string outcome_label(const Outcome& o) {
  if (o.kind == OutcomeKind::Draw) return "draw";
  if (o.kind == OutcomeKind::Won) return team_name(o.winner);
  return "ongoing";
}

}  // namespace

nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j;
  j["episodes"] = m.episodes;
  j["mean_round_time_s"] = number_or_null(m.mean_round_time_s);
  j["draw_rate"] = m.draw_rate;
  j["win_rate_blue"] = m.win_rate_blue;
  j["win_rate_white"] = m.win_rate_white;
  j["mean_win_time_blue_s"] = number_or_null(m.mean_win_time_blue_s);
  j["mean_win_time_white_s"] = number_or_null(m.mean_win_time_white_s);
  nlohmann::json log = nlohmann::json::array();
  for (const EpisodeRecord& e : m.log) {
    log.push_back({{"episode", e.episode}, {"outcome", outcome_label(e.outcome)}, {"duration_s", e.duration_s}});
  }
  j["log"] = std::move(log);
  return j;
}

std::string metrics_table(const Metrics& m) {
  std::ostringstream os;
  auto row = [&os](const std::string& k, const std::string& v) { os << std::left << std::setw(24) << k << v << '\n'; };
  auto num = [](double v, int prec) {
    if (!std::isfinite(v)) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  row("episodes", std::to_string(m.episodes));
  row("mean_round_time_s", num(m.mean_round_time_s, 2));
  row("draw_rate", num(m.draw_rate, 3));
  row("win_rate_blue", num(m.win_rate_blue, 3));
  row("win_rate_white", num(m.win_rate_white, 3));
  row("mean_win_time_blue_s", num(m.mean_win_time_blue_s, 2));
  row("mean_win_time_white_s", num(m.mean_win_time_white_s, 2));
  return os.str();
}

void write_episode_csv(const std::filesystem::path& path, const Metrics& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "episode,outcome,duration_s\n";
  out << std::setprecision(17);
  for (const EpisodeRecord& e : m.log) out << e.episode << ',' << outcome_label(e.outcome) << ',' << e.duration_s << '\n';
}

EpisodeRecord play_episode(const PolicySource& blue, const PolicySource& white, const ArenaConfig& arena,
                           std::uint64_t seed, int episode) {
  const auto ep = static_cast<std::uint64_t>(episode);
  WorldState w = new_world(arena, derive_seed(seed, 2 * ep));
  Rng rng(derive_seed(seed, 2 * ep + 1));
  std::array<Intent, kNumPlayers> intents{};
  while (w.outcome.kind == OutcomeKind::Ongoing) {
    for (int id = 0; id < kNumPlayers; ++id) {
      intents[id] = w.players[id].active ? act(team_of(id) == Team::Blue ? blue : white, w, id, rng) : Intent{};
    }
    step(w, intents);
  }
  return {episode, w.outcome, w.outcome.time_s};
}

Metrics evaluate(const PolicySource& blue, const PolicySource& white, const EvalOptions& opt) {
  if (opt.episodes < 1) throw ContractError("evaluate: episodes must be >= 1");
  opt.arena.validate();
  check_compatible(blue, opt.arena);
  check_compatible(white, opt.arena);
  std::vector<EpisodeRecord> log(static_cast<std::size_t>(opt.episodes));
#pragma omp parallel for schedule(dynamic, 1)
  for (int e = 0; e < opt.episodes; ++e) log[e] = play_episode(blue, white, opt.arena, opt.seed, e);
  return compute_metrics(log, opt.arena.draw_time);
}

Metrics evaluate_serial(const PolicySource& blue, const PolicySource& white, const EvalOptions& opt) {
  if (opt.episodes < 1) throw ContractError("evaluate: episodes must be >= 1");
  opt.arena.validate();
  check_compatible(blue, opt.arena);
  check_compatible(white, opt.arena);
  std::vector<EpisodeRecord> log;
  for (int e = 0; e < opt.episodes; ++e) log.push_back(play_episode(blue, white, opt.arena, opt.seed, e));
  return compute_metrics(log, opt.arena.draw_time);
}

}  // namespace ctf
