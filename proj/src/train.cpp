#include <cmath>
#include <fstream>
#include <ostream>

#include "ctf/arena.hpp"
#include "ctf/training.hpp"

namespace ctf {

using nlohmann::json;

namespace {

nn::Checkpoint make_checkpoint(const TrainConfig& cfg, const nn::PolicyParams& p, std::int64_t step,
                               const std::string& tag) {
  nn::Checkpoint c;
  c.policy = p;
  c.rays = cfg.rays;
  c.seed = cfg.seed;
  c.lineage = {cfg.run_id};
  if (!cfg.init_checkpoint.empty()) c.lineage.push_back(cfg.init_checkpoint);
  c.training_step = step;
  c.id = cfg.run_id + "-" + tag;
  return c;
}

void write_report(const std::filesystem::path& path, const json& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << report.dump(2) << '\n';
}

json outcome_json(const Outcome& o) {
  if (o.kind == OutcomeKind::Draw) return "draw";
  if (o.kind == OutcomeKind::Won) return team_name(o.winner);
  return "ongoing";
}

// Fills every stream's gail_reward from the discriminator.
void label_gail_rewards(RolloutBuffer& buf, const nn::DiscriminatorParams& d, double scale) {
  for (RolloutStream& s : buf.streams) {
    const int n = static_cast<int>(s.act.size());
    nn::Matrix obs(n, buf.obs_dim);
    std::copy(s.obs.begin(), s.obs.end(), obs.data.begin());
    nn::BatchCache cache;
    nn::forward_batch(d.net, discriminator_inputs(obs, s.act), cache);
    for (int r = 0; r < n; ++r) {
      s.gail_reward[r] = gail_reward_from_prob(nn::clamped_sigmoid(cache.output()(r, 0)), scale);
    }
  }
}

nn::Matrix sample_rows(const nn::Matrix& src, std::span<const Action> acts, int n, Rng& rng) {
  nn::Matrix obs(n, src.cols);
  std::vector<Action> a(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const auto k = uniform_index(rng, static_cast<std::uint64_t>(src.rows));
    std::copy_n(src.row(static_cast<int>(k)), src.cols, obs.row(r));
    a[r] = acts[k];
  }
  return discriminator_inputs(obs, a);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, std::ostream* log) {
  cfg.validate();
  const ArenaConfig arena = cfg.effective_arena();
  PerceptionConfig pc;
  pc.rays = cfg.rays;
  const int dim = obs_dim(arena, cfg.rays);
  const std::filesystem::path dir(cfg.checkpoint_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create checkpoint directory " + dir.string());

  DemoDataset demos;
  if (cfg.algorithm != Algorithm::PPO) demos = load_demo_dataset(cfg.demo_paths, dim);

  nn::PolicyParams policy;
  if (!cfg.init_checkpoint.empty()) {
    policy = nn::load_checkpoint(cfg.init_checkpoint).policy;
    if (policy.obs_dim() != dim) {
      throw FormatError(cfg.init_checkpoint + ": checkpoint expects " + std::to_string(policy.obs_dim()) +
                        " observation values, arena gives " + std::to_string(dim));
    }
  } else {
    policy = nn::init_params(dim, derive_seed(cfg.seed, 1), cfg.hidden);
  }

  json report{{"run_id", cfg.run_id},
              {"algorithm", algorithm_name(cfg.algorithm)},
              {"seed", cfg.seed},
              {"config", to_json(cfg)},
              {"iterations", json::array()},
              {"episodes", json::array()},
              {"snapshots", json::array()},
              {"checkpoints", json::array()},
              {"evaluations", json::array()}};

  auto save = [&](std::int64_t step, const std::string& tag) {
    const nn::Checkpoint c = make_checkpoint(cfg, policy, step, tag);
    const auto path = dir / (tag + ".ckpt");
    nn::save_checkpoint(path.string(), c);
    report["checkpoints"].push_back({{"step", step}, {"path", path.string()}, {"id", c.id}});
    if (cfg.eval_episodes > 0) {
      EvalOptions eo;
      eo.arena = arena;
      eo.episodes = cfg.eval_episodes;
      eo.seed = derive_seed(cfg.seed, 9);
      const auto src = PolicySource::from_checkpoint(std::make_shared<const nn::Checkpoint>(c), c.id);
      const Metrics m = evaluate(src, PolicySource::expert(), eo);
      json mj = metrics_json(m);
      mj.erase("log");
      report["evaluations"].push_back({{"step", step}, {"vs", "expert"}, {"metrics", mj}});
    }
    return c;
  };

  if (cfg.algorithm == Algorithm::BC) {
    BcResult r = train_bc(cfg, demos, &policy);
    policy = std::move(r.policy);
    report["bc_loss_curve"] = r.loss_curve;
    report["train_agreement"] = branch_agreement(policy, demos);
    if (log) *log << "bc: " << cfg.bc.epochs << " epochs, final loss " << r.loss_curve.back() << '\n';
  } else {
    std::vector<RolloutWorker> workers;
    for (int i = 0; i < cfg.ppo.num_envs; ++i) {
      workers.push_back(make_worker(arena, derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(i))));
    }
    nn::AdamState opt = nn::make_adam(policy.net.params.size(), cfg.ppo.lr);
    Rng ppo_rng(derive_seed(cfg.seed, 3));
    Rng bc_rng(derive_seed(cfg.seed, 4));
    Rng gail_rng(derive_seed(cfg.seed, 5));
    Rng sp_rng(derive_seed(cfg.seed, 6));
    nn::DiscriminatorParams disc = nn::init_discriminator(dim, derive_seed(cfg.seed, 7));
    nn::AdamState disc_opt = nn::make_adam(disc.net.params.size(), cfg.gail.lr);
    const bool use_gail = cfg.algorithm == Algorithm::GAIL_PPO ||
                          (cfg.algorithm == Algorithm::Combo && cfg.combo.gail_strength > 0.0);
    const bool use_bc = cfg.algorithm == Algorithm::Combo && cfg.combo.bc_strength > 0.0;
    if (use_bc) {
      // Warm start on the demonstrations before any environment interaction.
      BcResult warm = train_bc(cfg, demos, &policy);
      policy = std::move(warm.policy);
      report["bc_loss_curve"] = warm.loss_curve;
    }
    SnapshotPool pool(cfg.selfplay.pool_size);
    RolloutOptions ro;
    ro.arena = arena;
    ro.perception = pc;
    ro.progress_reward = cfg.progress_reward;

    std::int64_t steps = 0;
    int iteration = 0;
    while (steps < cfg.max_env_steps) {
      auto current = std::make_shared<const nn::PolicyParams>(policy);
      Opponent opp;
      opp.kind = cfg.opponent;
      if (opp.kind == OpponentKind::SelfPlay) {
        opp.params = selfplay_pick(pool, current, cfg.selfplay.opponent_latest_prob, sp_rng);
      }
      RolloutBuffer buf = collect_rollouts(workers, policy, opp, cfg.ppo.horizon, ro, steps);

      json it{{"iteration", iteration}};
      double gail_coef = 0.0;
      if (use_gail) {
        gail_coef = cfg.algorithm == Algorithm::GAIL_PPO ? 1.0 : anneal(cfg.combo.gail_strength, steps, cfg.max_env_steps);
        const PpoData flat = flatten(buf, compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda));
        GailStats gs;
        for (int u = 0; u < cfg.gail.updates_per_iter; ++u) {
          const nn::Matrix ex = sample_rows(demos.obs, demos.acts, cfg.gail.batch, gail_rng);
          const nn::Matrix po = sample_rows(flat.obs, flat.acts, cfg.gail.batch, gail_rng);
          gs = gail_update(disc, disc_opt, ex, po);
        }
        label_gail_rewards(buf, disc, cfg.gail.reward_scale);
        it["gail_loss"] = gs.loss;
        it["gail_accuracy"] = gs.accuracy;
        it["gail_coef"] = gail_coef;
      }
      const double bc_strength = use_bc ? anneal(cfg.combo.bc_strength, steps, cfg.max_env_steps) : 0.0;
      const GaeResult gae = compute_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda, gail_coef);
      const PpoData data = flatten(buf, gae);
      BcAux aux;
      if (use_bc) aux = BcAux{&demos, bc_strength, cfg.bc.batch, &bc_rng};
      const PpoStats ps = ppo_update(policy, opt, data, cfg.ppo, ppo_rng, aux);

      const std::int64_t before = steps;
      steps += buf.env_steps;
      double reward_sum = 0.0;
      for (const RolloutStream& s : buf.streams) {
        for (double r : s.env_reward) reward_sum += r;
      }
      it["env_steps"] = steps;
      it["mean_env_reward"] = reward_sum / static_cast<double>(data.acts.size());
      it["surrogate"] = ps.surrogate;
      it["value_loss"] = ps.value;
      it["entropy"] = ps.entropy;
      it["approx_kl"] = ps.approx_kl;
      it["clip_fraction"] = ps.clip_fraction;
      it["max_ratio_error_first"] = ps.max_ratio_error_first;
      if (use_bc) {
        it["bc_loss"] = ps.bc_loss;
        it["bc_strength"] = bc_strength;
      }
      it["episodes"] = buf.episodes.size();
      report["iterations"].push_back(it);
      for (const EpisodeStat& e : buf.episodes) {
        report["episodes"].push_back({{"end_step", e.end_step},
                                      {"return", e.ret},
                                      {"length", e.length},
                                      {"outcome", outcome_json(e.outcome)},
                                      {"learner", team_name(e.learner)}});
      }
      if (cfg.opponent == OpponentKind::SelfPlay && snapshot_due(before, steps, cfg.selfplay.snapshot_every)) {
        Snapshot s{cfg.run_id + "@" + std::to_string(steps), steps, std::make_shared<const nn::PolicyParams>(policy)};
        report["snapshots"].push_back({{"id", s.id}, {"step", steps}});
        pool.push(std::move(s));
      }
      if (snapshot_due(before, steps, cfg.eval_every) && steps < cfg.max_env_steps) {
        save(steps, "step" + std::to_string(steps));
      }
      if (log) {
        *log << "iter " << iteration << " steps " << steps << " reward/step " << it["mean_env_reward"].get<double>()
             << " episodes " << buf.episodes.size() << " entropy " << ps.entropy << '\n';
      }
      ++iteration;
    }
    report["env_steps"] = steps;
  }

  TrainResult res;
  const std::int64_t final_step = report.value("env_steps", std::int64_t{0});
  res.checkpoint = save(final_step, "final");
  res.checkpoint_path = dir / "final.ckpt";
  res.report_path = dir / "report.json";
  write_report(res.report_path, report);
  res.report = std::move(report);
  return res;
}

double mean_return(const json& report, std::int64_t from, std::int64_t to) {
  double sum = 0.0;
  int n = 0;
  for (const json& e : report.at("episodes")) {
    const auto s = e.at("end_step").get<std::int64_t>();
    if (s > from && s <= to) {
      sum += e.at("return").get<double>();
      ++n;
    }
  }
  return n > 0 ? sum / n : std::nan("");
}

}  // namespace ctf
