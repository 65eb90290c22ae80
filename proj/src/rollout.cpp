#include <algorithm>
#include <cmath>

#include "ctf/arena.hpp"
#include "ctf/training.hpp"

namespace ctf {

RolloutWorker make_worker(const ArenaConfig& arena, std::uint64_t seed) {
  RolloutWorker w{new_world(arena, derive_seed(seed, 0)), Rng(derive_seed(seed, 1))};
  w.best_dist.fill(-1.0);
  return w;
}

std::vector<int> learner_slots(const ArenaConfig& arena, bool alternate) {
  std::vector<int> slots;
  for (int s = 0; s < kPlayersPerTeam; ++s) {
    const bool blue = arena.is_active(s);
    if (alternate && blue != arena.is_active(s + kPlayersPerTeam)) {
      throw ConfigError("learner slot " + std::to_string(s) + " is active on one team only");
    }
    if (blue) slots.push_back(s);
  }
  if (slots.empty()) throw ConfigError("arena has no active learner slot");
  return slots;
}

namespace {

int agent_id(Team learner, int slot) { return learner == Team::Blue ? slot : slot + kPlayersPerTeam; }

// Distance to what the player should reach next, or a negative value when
// there is nothing sensible to approach.
double objective_distance(const WorldState& w, const PlayerState& p) {
  const ArenaConfig& a = w.config();
  if (p.carried_flag) {
    const double edge = a.half_width() - a.base_depth;
    return std::max(0.0, p.team == Team::Blue ? p.pos.x + edge : edge - p.pos.x);
  }
  const FlagState& f = w.flag(other(p.team));
  if (f.mode == FlagMode::Carried) return -1.0;
  return distance(p.pos, f.pos);
}

Intent random_intent(Rng& rng) {
  Action a;
  for (int b = 0; b < kNumBranches; ++b) {
    a.branch[b] = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(kActionBranches[b])));
  }
  return decode_action(a);
}

void run_worker(RolloutWorker& wk, int n_workers, const nn::PolicyParams& policy,
                const Opponent& opponent, int horizon, const RolloutOptions& opt, std::int64_t step_offset,
                std::span<const int> slots, std::span<RolloutStream> streams, std::vector<EpisodeStat>& episodes) {
  const bool alternate = opponent.kind != OpponentKind::None;
  const int dim = obs_dim(opt.arena, opt.perception.rays);
  std::array<Intent, kNumPlayers> intents{};
  Observation scratch(static_cast<std::size_t>(dim));
  for (int t = 0; t < horizon; ++t) {
    WorldState& w = wk.world;
    intents.fill(Intent{});
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const int id = agent_id(wk.learner, slots[k]);
      RolloutStream& s = streams[k];
      const std::span<double> row(s.obs.data() + static_cast<std::size_t>(t) * dim, static_cast<std::size_t>(dim));
      observe_into(w, id, opt.perception, row);
      const nn::PolicyOutput out = nn::policy_forward(policy, row);
      const nn::SampledAction a = nn::sample_action(out.logits, wk.rng);
      s.act[t] = a.action;
      s.logprob[t] = a.logprob;
      s.value[t] = out.value;
      intents[id] = to_world_intent(a.action, wk.learner, opt.perception);
    }
    const Team opp = other(wk.learner);
    for (int slot = 0; slot < kPlayersPerTeam; ++slot) {
      const int id = agent_id(opp, slot);
      if (!w.players[id].active) continue;
      switch (opponent.kind) {
        case OpponentKind::SelfPlay: {
          observe_into(w, id, opt.perception, scratch);
          const nn::PolicyOutput out = nn::policy_forward(*opponent.params, scratch);
          intents[id] = to_world_intent(nn::sample_action(out.logits, wk.rng).action, opp, opt.perception);
          break;
        }
        case OpponentKind::Expert: intents[id] = scripted_expert_intent(w, id); break;
        case OpponentKind::Random: intents[id] = random_intent(wk.rng); break;
        case OpponentKind::None: break;
      }
    }
    const auto events = step(w, intents);
    const auto rew = compute_rewards(events, opt.rewards);
    const bool done = w.outcome.kind != OutcomeKind::Ongoing;
    ++wk.episode_len;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const int slot = slots[k];
      const int id = agent_id(wk.learner, slot);
      double r = rew[id];
      if (opt.progress_reward > 0.0) {
        const PlayerState& p = w.players[id];
        const double d = objective_distance(w, p);
        const bool has_flag = p.carried_flag.has_value();
        if (d < 0.0 || wk.best_dist[slot] < 0.0 || has_flag != wk.had_flag[slot]) {
          wk.best_dist[slot] = d;
        } else if (d < wk.best_dist[slot]) {
          r += opt.progress_reward * (wk.best_dist[slot] - d);
          wk.best_dist[slot] = d;
        }
        wk.had_flag[slot] = has_flag;
      }
      streams[k].env_reward[t] = r;
      streams[k].done[t] = done ? 1 : 0;
      wk.episode_return[slot] += r;
    }
    if (done) {
      EpisodeStat e;
      e.end_step = step_offset + static_cast<std::int64_t>(t + 1) * n_workers;
      double sum = 0.0;
      for (int slot : slots) sum += wk.episode_return[slot];
      e.ret = sum / static_cast<double>(slots.size());
      e.length = wk.episode_len;
      e.outcome = w.outcome;
      e.learner = wk.learner;
      episodes.push_back(e);
      wk.world = reset_round(w);
      wk.episode_len = 0;
      wk.episode_return.fill(0.0);
      wk.best_dist.fill(-1.0);
      wk.had_flag.fill(false);
      if (alternate) wk.learner = other(wk.learner);
    }
  }
  for (std::size_t k = 0; k < slots.size(); ++k) {
    observe_into(wk.world, agent_id(wk.learner, slots[k]), opt.perception, scratch);
    streams[k].bootstrap_value = nn::policy_forward(policy, scratch).value;
  }
}

}  // namespace

RolloutBuffer collect_rollouts(std::vector<RolloutWorker>& workers, const nn::PolicyParams& policy,
                               const Opponent& opponent, int horizon, const RolloutOptions& opt,
                               std::int64_t step_offset) {
  if (horizon <= 0) throw ContractError("collect_rollouts: horizon must be positive");
  if (workers.empty()) throw ContractError("collect_rollouts: no workers");
  if (opponent.kind == OpponentKind::SelfPlay && !opponent.params) {
    throw ContractError("collect_rollouts: self-play opponent without parameters");
  }
  const int dim = obs_dim(opt.arena, opt.perception.rays);
  if (policy.obs_dim() != dim) {
    throw FormatError("collect_rollouts: policy expects " + std::to_string(policy.obs_dim()) +
                      " observation values, arena gives " + std::to_string(dim));
  }
  const auto slots = learner_slots(opt.arena, opponent.kind != OpponentKind::None);
  const int n_workers = static_cast<int>(workers.size());
  RolloutBuffer buf;
  buf.horizon = horizon;
  buf.obs_dim = dim;
  for (int wi = 0; wi < n_workers; ++wi) {
    for (int slot : slots) {
      RolloutStream s;
      s.worker = wi;
      s.slot = slot;
      const auto h = static_cast<std::size_t>(horizon);
      s.obs.assign(h * static_cast<std::size_t>(dim), 0.0);
      s.act.resize(h);
      s.logprob.resize(h);
      s.value.resize(h);
      s.env_reward.resize(h);
      s.gail_reward.assign(h, 0.0);
      s.done.resize(h);
      buf.streams.push_back(std::move(s));
    }
  }
  std::vector<std::vector<EpisodeStat>> eps(static_cast<std::size_t>(n_workers));
  const std::size_t per = slots.size();
#pragma omp parallel for schedule(static, 1) if (n_workers > 1)
  for (int wi = 0; wi < n_workers; ++wi) {
    run_worker(workers[wi], n_workers, policy, opponent, horizon, opt, step_offset, slots,
               std::span<RolloutStream>(buf.streams.data() + wi * per, per), eps[wi]);
  }
  for (auto& e : eps) buf.episodes.insert(buf.episodes.end(), e.begin(), e.end());
  std::stable_sort(buf.episodes.begin(), buf.episodes.end(),
                   [](const EpisodeStat& a, const EpisodeStat& b) { return a.end_step < b.end_step; });
  buf.env_steps = static_cast<std::int64_t>(horizon) * n_workers;
  return buf;
}

RolloutBuffer collect_rollouts(const nn::PolicyParams& policy, const Opponent& opponent, int horizon,
                               std::uint64_t seed, const RolloutOptions& opt) {
  std::vector<RolloutWorker> workers{make_worker(opt.arena, seed)};
  return collect_rollouts(workers, policy, opponent, horizon, opt, 0);
}

}  // namespace ctf
