#include <cstdio>
#include <memory>

#include "ctf/arena.hpp"
#include "ctf/demos.hpp"

namespace ctf {

std::vector<std::filesystem::path> generate_expert_demos(int n_sessions, std::uint64_t seed,
                                                         const std::filesystem::path& out_dir,
                                                         const ArenaConfig& arena) {
  if (n_sessions < 1) throw ContractError("generate_expert_demos: n_sessions must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create demo directory " + out_dir.string());
  }
  const PerceptionConfig pc;
  std::vector<std::filesystem::path> files;
  for (int s = 0; s < n_sessions; ++s) {
    const std::uint64_t world_seed = derive_seed(seed, static_cast<std::uint64_t>(s));
    const std::string session_id = "expert-" + std::to_string(seed) + "-" + std::to_string(s);
    std::vector<std::unique_ptr<DemoRecorder>> recs;
    for (int id = 0; id < kNumPlayers; ++id) {
      char name[64];
      std::snprintf(name, sizeof name, "session%03d_agent%d%s", s, id, kDemoExtension);
      const auto path = out_dir / name;
      recs.push_back(std::make_unique<DemoRecorder>(
          path, make_demo_header(arena, pc.rays, session_id, id, {DemoSourceKind::Scripted, ""}, world_seed)));
      files.push_back(path);
    }
    WorldState w = new_world(arena, world_seed);
    std::array<Intent, kNumPlayers> intents{};
    std::array<Action, kNumPlayers> actions{};
    std::vector<Observation> obs(kNumPlayers);
    for (int round = 0; round < kRoundsPerSession; ++round) {
      if (round > 0) w = reset_round(w);
      while (w.outcome.kind == OutcomeKind::Ongoing) {
        for (int id = 0; id < kNumPlayers; ++id) {
          obs[id] = observe(w, id, pc);
          intents[id] = scripted_expert_intent(w, id);
          actions[id] = from_world_intent(intents[id], team_of(id), pc);
        }
        const auto events = step(w, intents);
        const auto rew = compute_rewards(events);
        const bool done = w.outcome.kind != OutcomeKind::Ongoing;
        for (int id = 0; id < kNumPlayers; ++id) recs[id]->record_step(obs[id], actions[id], rew[id], done);
      }
    }
  }
  return files;
}

}  // namespace ctf
