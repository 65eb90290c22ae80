#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "ctf/arena.hpp"
#include "ctf/training.hpp"

using namespace ctf;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("ctf_train_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

// Zero weights give uniform action probabilities.
nn::PolicyParams uniform_policy(int dim, int hidden = 8) {
  nn::PolicyParams p = nn::init_params(dim, 1, hidden);
  std::fill(p.net.params.begin(), p.net.params.end(), 0.0);
  return p;
}

// Independent O(T^2) definition: A_t = sum_l (gamma lambda)^l delta_{t+l},
// cut at the first terminal step.
void brute_gae(const std::vector<double>& r, const std::vector<double>& v, const std::vector<std::uint8_t>& d,
               double boot, double g, double l, std::vector<double>& adv) {
  const std::size_t n = r.size();
  adv.assign(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double sum = 0.0;
    double w = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      const double next_v = k + 1 < n ? v[k + 1] : boot;
      const double delta = r[k] + g * next_v * (d[k] ? 0.0 : 1.0) - v[k];
      sum += w * delta;
      if (d[k]) break;
      w *= g * l;
    }
    adv[t] = sum;
  }
}

std::vector<std::string> expert_demo_files(const std::filesystem::path& dir, std::uint64_t seed) {
  std::vector<std::string> out;
  for (const auto& f : generate_expert_demos(1, seed, dir)) out.push_back(f.string());
  return out;
}

TrainConfig tiny_config(const std::string& dir) {
  TrainConfig c;
  c.run_id = "tiny";
  c.algorithm = Algorithm::PPO;
  c.max_env_steps = 512;
  c.ppo.horizon = 128;
  c.ppo.minibatch = 64;
  c.ppo.epochs = 2;
  c.hidden = 16;
  c.bc.epochs = 1;
  c.gail.batch = 32;
  c.bc.batch = 32;
  c.selfplay.snapshot_every = 256;
  c.eval_every = 256;
  c.checkpoint_dir = dir;
  return c;
}

}  // namespace

// ---- configuration ------------------------------------------------------------

TEST_CASE("config defaults survive a JSON round trip") {
  TrainConfig c;
  c.demo_paths = {"a", "b"};
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.ppo.lr == 3e-4);
  CHECK(back.ppo.horizon == 2048);
  CHECK(back.gail.lr == 1e-4);
  CHECK(back.selfplay.pool_size == 10);
  CHECK(back.selfplay.snapshot_every == 50'000);
}

TEST_CASE("partial config keeps defaults and rejects unknown keys") {
  const TrainConfig c = train_config_from_json(json{{"algorithm", "PPO"}, {"ppo", {{"lr", 1e-3}}}});
  CHECK(c.algorithm == Algorithm::PPO);
  CHECK(c.ppo.lr == 1e-3);
  CHECK(c.ppo.gamma == 0.99);
  CHECK_THROWS_WITH_AS(train_config_from_json(json{{"algorithm", "PPO"}, {"ppo", {{"lrr", 1.0}}}}),
                       doctest::Contains("ppo.lrr"), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(json{{"algorithm", "SAC"}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(json{{"algorithm", "PPO"}, {"seed", "x"}}), ConfigError);
}

TEST_CASE("config validation") {
  auto bad = [](json j, const char* needle) {
    CHECK_THROWS_WITH_AS(train_config_from_json(j), doctest::Contains(needle), ConfigError);
  };
  bad(json{{"algorithm", "BC"}}, "demo_paths");
  bad(json{{"algorithm", "GAIL_PPO"}}, "demo_paths");
  bad(json{{"algorithm", "Combo"}}, "demo_paths");
  bad(json{{"algorithm", "PPO"}, {"ppo", {{"clip_eps", 1.0}}}}, "clip_eps");
  bad(json{{"algorithm", "PPO"}, {"ppo", {{"clip_eps", 0.0}}}}, "clip_eps");
  bad(json{{"algorithm", "PPO"}, {"ppo", {{"lr", -1.0}}}}, "ppo.lr");
  bad(json{{"algorithm", "PPO"}, {"gail", {{"lr", 0.0}}}}, "gail.lr");
  bad(json{{"algorithm", "PPO"}, {"selfplay", {{"opponent_latest_prob", 1.5}}}}, "opponent_latest_prob");
  bad(json{{"algorithm", "PPO"}, {"curriculum", "fetch_flag"}}, "opponent");
  bad(json{{"algorithm", "PPO"}, {"arena", {{"width", -3.0}}}}, "width");
  CHECK_NOTHROW(train_config_from_json(
      json{{"algorithm", "Combo"}, {"demo_paths", {"x"}}, {"combo", {{"bc_strength", 0.0}, {"gail_strength", 0.0}}}}));
}

TEST_CASE("dotted overrides") {
  json j = to_json(TrainConfig{});
  apply_override(j, "ppo.lr=0.001");
  apply_override(j, "run_id=abc");
  apply_override(j, "algorithm=PPO");
  apply_override(j, "demo_paths=[\"d1\",\"d2\"]");
  apply_override(j, "selfplay.pool_size=3");
  const TrainConfig c = train_config_from_json(j);
  CHECK(c.ppo.lr == 0.001);
  CHECK(c.run_id == "abc");
  CHECK(c.algorithm == Algorithm::PPO);
  CHECK(c.demo_paths == std::vector<std::string>{"d1", "d2"});
  CHECK(c.selfplay.pool_size == 3);
  CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "run_id.x=1"), ConfigError);
  apply_override(j, "ppo.bogus=1");
  CHECK_THROWS_AS(train_config_from_json(j), ConfigError);
}

TEST_CASE("loading a config file") {
  const auto dir = temp_dir("cfg");
  std::filesystem::create_directories(dir);
  CHECK_THROWS_WITH_AS(load_train_config(dir / "missing.json"), doctest::Contains("missing.json"), ConfigError);
  {
    std::ofstream(dir / "broken.json") << "{ not json";
  }
  CHECK_THROWS_WITH_AS(load_train_config(dir / "broken.json"), doctest::Contains("broken.json"), ConfigError);
  {
    std::ofstream(dir / "ok.json") << R"({"algorithm": "PPO", "seed": 9})";
  }
  const std::vector<std::string> ov{"seed=11", "ppo.epochs=4"};
  const TrainConfig c = load_train_config(dir / "ok.json", ov);
  CHECK(c.seed == 11);
  CHECK(c.ppo.epochs == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fetch-flag curriculum arena") {
  const ArenaConfig a = fetch_flag_arena();
  CHECK_NOTHROW(a.validate());
  const WorldState w = new_world(a, 1);
  int active = 0;
  for (const PlayerState& p : w.players) active += p.active ? 1 : 0;
  CHECK(active == 1);
  CHECK(w.players[0].active);
  CHECK(learner_slots(a, false) == std::vector<int>{0});
  CHECK_THROWS_AS(learner_slots(a, true), ConfigError);
}

// ---- GAIL --------------------------------------------------------------------

TEST_CASE("gail reward formula") {
  CHECK(gail_reward_from_prob(0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(gail_reward_from_prob(1.0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
  CHECK(std::abs(gail_reward_from_prob(1.0) - 16.118) < 1e-3);
  CHECK(gail_reward_from_prob(0.0) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(gail_reward_from_prob(0.5, 2.0) == doctest::Approx(2.0 * std::log(2.0)));
  double prev = -1.0;
  for (double d = 0.0; d <= 1.0; d += 0.001) {
    const double r = gail_reward_from_prob(d);
    REQUIRE(std::isfinite(r));
    REQUIRE(r >= 0.0);
    REQUIRE(r >= prev);
    prev = r;
  }
}

TEST_CASE("fresh discriminator outputs one half and BCE ln 2") {
  const int dim = 10;
  const nn::DiscriminatorParams d = nn::init_discriminator(dim, 3);
  Rng rng(1);
  nn::Matrix a(16, dim + kActionOneHotDim), b(16, dim + kActionOneHotDim);
  for (double& x : a.data) x = uniform01(rng) * 2 - 1;
  for (double& x : b.data) x = uniform01(rng) * 2 - 1;
  const GailStats s = discriminator_eval(d, a, b);
  CHECK(std::abs(s.loss - std::log(2.0)) < 1e-9);
  const std::vector<double> obs(dim, 0.3);
  CHECK(discriminator_prob(d, obs, Action{}) == 0.5);
  CHECK(gail_reward(d, obs, Action{}) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("discriminator separates disjoint clusters") {
  const int dim = 6;
  nn::DiscriminatorParams d = nn::init_discriminator(dim, 5, 32);
  nn::AdamState opt = nn::make_adam(d.net.params.size(), 1e-3);
  Rng rng(9);
  auto batch = [&](double centre) {
    nn::Matrix m(64, dim + kActionOneHotDim);
    for (int r = 0; r < m.rows; ++r) {
      for (int c = 0; c < dim; ++c) m(r, c) = centre + 0.2 * (uniform01(rng) - 0.5);
      m(r, dim + 1) = 1.0;
      m(r, dim + 4) = 1.0;
      m(r, dim + 6) = 1.0;
    }
    return m;
  };
  double acc = 0.0;
  int updates = 0;
  while (updates < 500) {
    gail_update(d, opt, batch(0.5), batch(-0.5));
    ++updates;
    acc = discriminator_eval(d, batch(0.5), batch(-0.5)).accuracy;
    if (acc >= 0.99) break;
  }
  CHECK(acc >= 0.99);
  CHECK(updates <= 500);
}

TEST_CASE("discriminator cannot separate identical data") {
  const int dim = 6;
  nn::DiscriminatorParams d = nn::init_discriminator(dim, 5, 32);
  nn::AdamState opt = nn::make_adam(d.net.params.size(), 1e-4);
  Rng rng(10);
  nn::Matrix m(128, dim + kActionOneHotDim);
  for (double& x : m.data) x = uniform01(rng);
  double sum = 0.0;
  for (int i = 0; i < 200; ++i) sum += gail_update(d, opt, m, m).accuracy;
  CHECK(std::abs(sum / 200 - 0.5) < 0.05);
  CHECK(std::abs(discriminator_eval(d, m, m).accuracy - 0.5) < 0.05);
}

TEST_CASE("gail_update rejects mismatched input") {
  nn::DiscriminatorParams d = nn::init_discriminator(4, 1, 8);
  nn::AdamState opt = nn::make_adam(d.net.params.size(), 1e-3);
  nn::Matrix ok(3, 4 + kActionOneHotDim), wrong(3, 5 + kActionOneHotDim), empty(0, 4 + kActionOneHotDim);
  CHECK_THROWS_AS(gail_update(d, opt, ok, wrong), ContractError);
  CHECK_THROWS_AS(gail_update(d, opt, empty, ok), ContractError);
  CHECK_THROWS_AS(discriminator_prob(d, std::vector<double>(3), Action{}), ContractError);
}

// ---- GAE -----------------------------------------------------------------------

TEST_CASE("gae trivial cases") {
  std::vector<double> zeros(7, 0.0), adv(7), ret(7);
  std::vector<std::uint8_t> dones(7, 0);
  compute_gae(zeros, zeros, dones, 0.0, 0.99, 0.95, adv, ret);
  for (double a : adv) CHECK(a == 0.0);
  std::vector<double> r{1.0}, v{0.0}, a1(1), r1(1);
  std::vector<std::uint8_t> d{1};
  compute_gae(r, v, d, 5.0, 0.99, 0.95, a1, r1);
  CHECK(a1[0] == 1.0);
  CHECK(r1[0] == 1.0);
  CHECK_THROWS_AS(compute_gae(r, zeros, d, 0.0, 0.99, 0.95, a1, r1), ContractError);
}

TEST_CASE("gae matches the brute-force definition") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 100;
    std::vector<double> r(n), v(n), adv(n), ret(n), want;
    std::vector<std::uint8_t> d(n);
    for (std::size_t k = 0; k < n; ++k) {
      r[k] = 2.0 * uniform01(rng) - 1.0;
      v[k] = 2.0 * uniform01(rng) - 1.0;
      d[k] = uniform01(rng) < 0.05 ? 1 : 0;
    }
    const double boot = uniform01(rng);
    const double g = 0.9 + 0.1 * uniform01(rng);
    const double l = uniform01(rng);
    compute_gae(r, v, d, boot, g, l, adv, ret);
    brute_gae(r, v, d, boot, g, l, want);
    for (std::size_t k = 0; k < n; ++k) {
      REQUIRE(std::abs(adv[k] - want[k]) <= 1e-12);
      REQUIRE(ret[k] == adv[k] + v[k]);
    }
  }
}

// ---- rollouts --------------------------------------------------------------------

TEST_CASE("rollout buffer has exactly horizon steps per learner") {
  const ArenaConfig arena;
  const nn::PolicyParams p = nn::init_params(obs_dim(arena, kDefaultRays), 3, 16);
  RolloutOptions opt;
  const RolloutBuffer b = collect_rollouts(p, {OpponentKind::Random, nullptr}, 2048, 5, opt);
  REQUIRE(b.streams.size() == 3);
  for (const RolloutStream& s : b.streams) {
    CHECK(s.act.size() == 2048);
    CHECK(s.obs.size() == 2048u * static_cast<std::size_t>(b.obs_dim));
    for (double r : s.env_reward) REQUIRE(std::isfinite(r));
    for (double lp : s.logprob) REQUIRE(lp <= 0.0);
  }
  CHECK(b.env_steps == 2048);
  CHECK_THROWS_AS(collect_rollouts(p, {OpponentKind::Random, nullptr}, 0, 5, opt), ContractError);
  CHECK_THROWS_AS(collect_rollouts(p, {OpponentKind::SelfPlay, nullptr}, 8, 5, opt), ContractError);
}

TEST_CASE("rollouts are deterministic per seed and independent of worker threads") {
  const ArenaConfig arena;
  const auto p = std::make_shared<const nn::PolicyParams>(nn::init_params(obs_dim(arena, kDefaultRays), 3, 16));
  RolloutOptions opt;
  auto run = [&] {
    std::vector<RolloutWorker> ws{make_worker(arena, 1), make_worker(arena, 2)};
    collect_rollouts(ws, *p, {OpponentKind::SelfPlay, p}, 300, opt);
    return collect_rollouts(ws, *p, {OpponentKind::SelfPlay, p}, 300, opt, 600);
  };
  const RolloutBuffer a = run();
  const RolloutBuffer b = run();
  REQUIRE(a.streams.size() == 6);
  for (std::size_t i = 0; i < a.streams.size(); ++i) {
    CHECK(std::memcmp(a.streams[i].obs.data(), b.streams[i].obs.data(), a.streams[i].obs.size() * 8) == 0);
    CHECK(a.streams[i].act == b.streams[i].act);
    CHECK(a.streams[i].logprob == b.streams[i].logprob);
    CHECK(a.streams[i].env_reward == b.streams[i].env_reward);
    CHECK(a.streams[i].bootstrap_value == b.streams[i].bootstrap_value);
  }
}

TEST_CASE("random vs random mostly ends in draws at the cap") {
  const ArenaConfig arena;
  const nn::PolicyParams p = uniform_policy(obs_dim(arena, kDefaultRays));
  const RolloutBuffer b = collect_rollouts(p, {OpponentKind::Random, nullptr}, 5 * 20'000, 3);
  REQUIRE(b.episodes.size() >= 5);
  int draws = 0;
  for (const EpisodeStat& e : b.episodes) {
    if (e.outcome.kind == OutcomeKind::Draw) {
      ++draws;
      CHECK(e.length == 20'000);
      CHECK(e.outcome.time_s == 1000.0);
    }
  }
  CHECK(draws * 5 >= static_cast<int>(b.episodes.size()) * 4);
  // The learner team alternates between episodes.
  for (std::size_t i = 1; i < b.episodes.size(); ++i) CHECK(b.episodes[i].learner != b.episodes[i - 1].learner);
}

TEST_CASE("progress reward on the fetch-flag curriculum") {
  const ArenaConfig arena = fetch_flag_arena();
  const nn::PolicyParams p = uniform_policy(obs_dim(arena, kDefaultRays));
  RolloutOptions opt;
  opt.arena = arena;
  opt.progress_reward = 0.1;
  const RolloutBuffer b = collect_rollouts(p, {}, 2000, 4, opt);
  REQUIRE(b.streams.size() == 1);
  double positive = 0.0;
  for (double r : b.streams[0].env_reward) {
    if (r > 0.0) positive += r;
  }
  CHECK(positive > 0.0);
  CHECK(b.episodes.size() >= 4);
  for (const EpisodeStat& e : b.episodes) CHECK(e.learner == Team::Blue);
}

// ---- PPO ---------------------------------------------------------------------------

TEST_CASE("first PPO minibatch sees probability ratios of exactly one") {
  const ArenaConfig arena;
  nn::PolicyParams p = nn::init_params(obs_dim(arena, kDefaultRays), 3, 16);
  const RolloutBuffer b = collect_rollouts(p, {OpponentKind::Random, nullptr}, 256, 8);
  const PpoData data = flatten(b, compute_gae(b, 0.99, 0.95));
  CHECK(data.acts.size() == 768);
  // Every minibatch evaluated at the collection parameters has unit ratios.
  PpoConfig cfg;
  cfg.minibatch = 64;
  for (std::size_t start = 0; start < data.acts.size(); start += 64) {
    nn::Matrix obs(64, data.obs.cols);
    std::copy_n(data.obs.row(static_cast<int>(start)), 64 * data.obs.cols, obs.data.begin());
    nn::BatchCache cache;
    nn::forward_batch(p.net, obs, cache);
    nn::Matrix d_out;
    const std::span<const Action> acts(data.acts.data() + start, 64);
    const std::span<const double> lp(data.old_logprob.data() + start, 64);
    const std::span<const double> adv(data.advantages.data() + start, 64);
    const std::span<const double> ret(data.returns.data() + start, 64);
    const nn::PpoLossParts parts = nn::ppo_loss(cache.output(), {acts, lp, adv, ret}, 0.2, 0.5, 0.01, d_out);
    REQUIRE(parts.max_ratio_error <= 1e-12);
    REQUIRE(parts.clip_fraction == 0.0);
  }
  nn::AdamState opt = nn::make_adam(p.net.params.size(), 3e-4);
  Rng rng(1);
  const PpoStats st = ppo_update(p, opt, data, cfg, rng);
  CHECK(st.max_ratio_error_first <= 1e-12);
  CHECK(st.minibatches == 3 * 12);
  CHECK(std::isfinite(st.surrogate));
}

// ---- behavioural cloning ----------------------------------------------------------

TEST_CASE("BC memorises a repeated step") {
  DemoDataset d;
  d.obs_dim = 5;
  d.obs = nn::Matrix(64, 5);
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 5; ++c) d.obs(r, c) = 0.1 * (c + 1);
  }
  d.acts.assign(64, Action{{2, 0, 1}});
  TrainConfig cfg;
  cfg.hidden = 16;
  cfg.bc.epochs = 300;
  cfg.bc.lr = 1e-2;
  cfg.bc.batch = 64;
  const BcResult r = train_bc(cfg, d);
  CHECK(r.loss_curve.back() < 1e-3);
  const auto agree = branch_agreement(r.policy, d);
  for (double a : agree) CHECK(a == 1.0);
}

TEST_CASE("BC on conflicting labels converges to the empirical split") {
  DemoDataset d;
  d.obs_dim = 3;
  d.obs = nn::Matrix(200, 3);
  for (double& x : d.obs.data) x = 0.25;
  for (int r = 0; r < 200; ++r) d.acts.push_back(Action{{r % 2 == 0 ? 0 : 2, 1, 0}});
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.bc.epochs = 400;
  cfg.bc.lr = 1e-2;
  cfg.bc.batch = 200;
  const BcResult r = train_bc(cfg, d);
  const auto out = nn::policy_forward(r.policy, std::vector<double>(3, 0.25));
  const auto p = nn::softmax(std::span<const double>(out.logits.data(), 3));
  CHECK(p[0] == doctest::Approx(0.5).epsilon(0.01));
  CHECK(p[2] == doctest::Approx(0.5).epsilon(0.01));
  CHECK(p[1] < 0.01);
}

TEST_CASE("full-batch BC loss is non-increasing at a small learning rate") {
  Rng rng(4);
  const int n = 128;
  const int dim = 8;
  nn::Matrix obs(n, dim);
  for (double& x : obs.data) x = 2.0 * uniform01(rng) - 1.0;
  std::vector<Action> acts(n);
  for (Action& a : acts) {
    for (int b = 0; b < kNumBranches; ++b) a.branch[b] = static_cast<int>(uniform_index(rng, kActionBranches[b]));
  }
  nn::PolicyParams p = nn::init_params(dim, 2, 16);
  nn::AdamState opt = nn::make_adam(p.net.params.size(), 1e-4);
  double prev = bc_step(p, opt, obs, acts);
  for (int i = 0; i < 100; ++i) {
    const double l = bc_step(p, opt, obs, acts);
    REQUIRE(l <= prev + 1e-12);
    prev = l;
  }
}

TEST_CASE("dataset split and layout checks") {
  const auto dir = temp_dir("ds");
  const auto files = expert_demo_files(dir, 3);
  const int dim = obs_dim(ArenaConfig{}, kDefaultRays);
  const DemoDataset d = load_demo_dataset(files, dim);
  CHECK(d.size() > 1000);
  const auto [tr, ho] = split_dataset(d, 0.1, 1);
  CHECK(tr.size() + ho.size() == d.size());
  CHECK(ho.size() == static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(d.size()))));
  const auto [tr2, ho2] = split_dataset(d, 0.1, 1);
  CHECK(ho2.acts == ho.acts);
  CHECK_THROWS_WITH_AS(load_demo_dataset(files, dim + 1), doctest::Contains(files[0].c_str()), FormatError);
  const std::vector<std::string> none{(dir / "nothing_here").string()};
  CHECK_THROWS_AS(load_demo_dataset(none, dim), IoError);
  std::filesystem::remove_all(dir);
}

// ---- self-play ------------------------------------------------------------------------

TEST_CASE("snapshot pool and opponent picks") {
  auto cur = std::make_shared<const nn::PolicyParams>(nn::init_params(4, 1, 4));
  SnapshotPool pool(10);
  Rng rng(1);
  CHECK(selfplay_pick(pool, cur, 0.0, rng) == cur);
  for (int i = 0; i < 15; ++i) {
    pool.push({"s" + std::to_string(i), i, std::make_shared<const nn::PolicyParams>(nn::init_params(4, i + 2, 4))});
  }
  REQUIRE(pool.size() == 10);
  CHECK(pool.snapshots().front().id == "s5");
  CHECK(pool.snapshots().back().id == "s14");
  for (int i = 0; i < 1000; ++i) REQUIRE(selfplay_pick(pool, cur, 1.0, rng) == cur);

  auto picks = [&](std::uint64_t seed) {
    Rng r(seed);
    std::vector<const nn::PolicyParams*> out;
    for (int i = 0; i < 200; ++i) out.push_back(selfplay_pick(pool, cur, 0.5, r).get());
    return out;
  };
  CHECK(picks(3) == picks(3));
  CHECK(picks(3) != picks(4));
  int current = 0;
  std::set<const nn::PolicyParams*> seen;
  for (const auto* p : picks(5)) {
    if (p == cur.get()) {
      ++current;
    } else {
      seen.insert(p);
    }
  }
  CHECK(current > 70);
  CHECK(current < 130);
  CHECK(seen.size() >= 8);
  CHECK_THROWS_AS(SnapshotPool(0), ContractError);
}

TEST_CASE("snapshot schedule and annealing") {
  CHECK(snapshot_due(0, 2048, 2048));
  CHECK_FALSE(snapshot_due(2048, 4000, 2048));
  CHECK(snapshot_due(49'000, 51'000, 50'000));
  CHECK(anneal(1.0, 0, 1000) == 1.0);
  CHECK(anneal(1.0, 250, 1000) == 0.5);
  CHECK(anneal(1.0, 500, 1000) == 0.0);
  CHECK(anneal(1.0, 900, 1000) == 0.0);
}

// ---- the training loop ---------------------------------------------------------------

TEST_CASE("PPO training run writes checkpoints and a deterministic report") {
  const auto dir = temp_dir("ppo");
  TrainConfig c = tiny_config(dir.string());
  const TrainResult a = train(c);
  CHECK(std::filesystem::exists(a.checkpoint_path));
  CHECK(std::filesystem::exists(a.report_path));
  CHECK(a.report["iterations"].size() == 4);
  CHECK(a.report["snapshots"].size() == 2);
  CHECK(a.report["checkpoints"].size() == 2);  // step256 and final
  CHECK(a.checkpoint.training_step == 512);
  const nn::Checkpoint back = nn::load_checkpoint(a.checkpoint_path.string());
  CHECK(back.policy == a.checkpoint.policy);
  const TrainResult b = train(c);
  CHECK(a.report.dump() == b.report.dump());
  CHECK(a.checkpoint.policy == b.checkpoint.policy);
  for (const json& it : a.report["iterations"]) CHECK(it["max_ratio_error_first"].get<double>() <= 1e-12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("Combo with zero strengths follows PPO step for step") {
  const auto dir = temp_dir("combo0");
  const auto demos = expert_demo_files(dir / "demos", 2);
  TrainConfig ppo = tiny_config((dir / "ppo").string());
  TrainConfig combo = ppo;
  combo.checkpoint_dir = (dir / "combo").string();
  combo.algorithm = Algorithm::Combo;
  combo.demo_paths = demos;
  combo.combo = {0.0, 0.0};
  const TrainResult a = train(ppo);
  const TrainResult b = train(combo);
  CHECK(a.checkpoint.policy == b.checkpoint.policy);
  CHECK(a.report["episodes"] == b.report["episodes"]);
  CHECK(a.report["iterations"] == b.report["iterations"]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("Combo, GAIL_PPO and BC modes run end to end") {
  const auto dir = temp_dir("modes");
  const auto demos = expert_demo_files(dir / "demos", 4);
  for (Algorithm alg : {Algorithm::Combo, Algorithm::GAIL_PPO, Algorithm::BC}) {
    TrainConfig c = tiny_config((dir / algorithm_name(alg)).string());
    c.algorithm = alg;
    c.demo_paths = demos;
    const TrainResult r = train(c);
    CHECK(std::filesystem::exists(r.checkpoint_path));
    if (alg != Algorithm::BC) {
      CHECK(r.report["iterations"][0].contains("gail_accuracy"));
    } else {
      CHECK(r.report["bc_loss_curve"].size() == 1);
    }
    if (alg == Algorithm::Combo) {
      CHECK(r.report["iterations"][0]["bc_strength"].get<double>() == c.combo.bc_strength);
      CHECK(r.report["iterations"].back()["bc_strength"].get<double>() == 0.0);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("training refuses missing demos") {
  const auto dir = temp_dir("missing");
  TrainConfig c = tiny_config(dir.string());
  c.algorithm = Algorithm::BC;
  CHECK_THROWS_AS(train(c), ConfigError);
  c.demo_paths = {(dir / "none").string()};
  CHECK_THROWS_AS(train(c), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("mean_return windows") {
  const json r{{"episodes",
                {{{"end_step", 5}, {"return", 1.0}},
                 {{"end_step", 10}, {"return", 3.0}},
                 {{"end_step", 11}, {"return", 10.0}}}}};
  CHECK(mean_return(r, 0, 10) == 2.0);
  CHECK(mean_return(r, 10, 20) == 10.0);
  CHECK(std::isnan(mean_return(r, 20, 30)));
}
