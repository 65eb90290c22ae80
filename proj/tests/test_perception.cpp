#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ctf/perception.hpp"
#include "scenario.hpp"

using namespace ctf;
using namespace ctf::testing;

namespace {

int ray_base(int k) { return kStateValues + k * kRayFeatures; }

void check_ray_block(const Observation& o, int rays) {
  for (int k = 0; k < rays; ++k) {
    const int b = ray_base(k);
    int ones = 0;
    for (int t = 0; t < kNumHitTags; ++t) {
      const double v = o[b + 1 + t];
      CHECK((v == 0.0 || v == 1.0));
      ones += v == 1.0;
    }
    CHECK(ones <= 1);
    if (ones == 0) CHECK(o[b] == 1.0);
  }
}

}  // namespace

TEST_CASE("obs_dim follows the layout arithmetic") {
  CHECK(obs_dim(ArenaConfig{}, 24) == 196);
  CHECK(obs_dim(ArenaConfig{}, 1) == 35);
  CHECK_THROWS_AS(obs_dim(ArenaConfig{}, 0), ContractError);
}

TEST_CASE("fresh world observation basics") {
  const WorldState w = new_world(ArenaConfig{}, 3);
  const Observation o = observe(w, 0);
  REQUIRE(o.size() == 196u);
  CHECK(o[obs_index::kTimeFraction] == 0.0);
  CHECK(o[obs_index::kStunFraction] == 0.0);
  CHECK(o[obs_index::kHoldingBall] == 0.0);
  // Own flag AtSpawn one-hot.
  CHECK(o[obs_index::kOwnFlag + 2] == 1.0);
  CHECK(o[obs_index::kEnemyFlag + 2] == 1.0);
  check_ray_block(o, 24);
}

TEST_CASE("centre agent sees the right boundary 20 away on ray 0") {
  ArenaConfig a = ArenaConfig::open();
  a.ball_count = 0;
  WorldState w = new_world(a, 1);
  park_players(w);
  // The White flag would sit on the ray; a parked Blue carrier takes it off.
  give_flag(w, 2);
  w.players[0].pos = {0.0, 0.0};
  const Observation o = observe(w, 0);
  const RayHit h = raycast(w, {0.0, 0.0}, {1.0, 0.0}, 30.0, 0);
  REQUIRE(h.tag == HitTag::Wall);
  CHECK(o[ray_base(0)] == doctest::Approx(h.dist / 30.0));
  CHECK(o[ray_base(0)] == doctest::Approx(20.0 / 30.0));
  CHECK(o[ray_base(0) + 1 + static_cast<int>(HitTag::Wall)] == 1.0);
}

TEST_CASE("observe is pure and matches observe_into") {
  WorldState w = new_world(ArenaConfig{}, 9);
  Rng rng(1);
  for (int t = 0; t < 200; ++t) step(w, random_intents(rng));
  for (int id = 0; id < kNumPlayers; ++id) {
    const Observation a = observe(w, id);
    const Observation b = observe(w, id);
    CHECK(a == b);
    Observation c(a.size(), 7.0);
    observe_into(w, id, {}, c);
    CHECK(a == c);
  }
}

TEST_CASE("mirror-paired agents see identical observations") {
  for (std::uint64_t seed : {1ULL, 2ULL}) {
    WorldState w = new_world(ArenaConfig{}, seed);
    Rng rng(seed + 100);
    for (int t = 0; t < 600 && w.outcome.kind == OutcomeKind::Ongoing; ++t) {
      step(w, random_intents(rng));
      if (t % 20 != 0) continue;
      const WorldState m = mirror_world(w);
      for (int id = 0; id < kNumPlayers; ++id) {
        const Observation a = observe(w, id);
        const Observation b = observe(m, mirror_id(id));
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("disabling the team frame makes White see raw world x") {
  const WorldState w = new_world(ArenaConfig{}, 1);
  PerceptionConfig raw;
  raw.team_frame = false;
  const Observation framed = observe(w, 3);
  const Observation plain = observe(w, 3, raw);
  CHECK(framed[obs_index::kSelfPos] == doctest::Approx(-plain[obs_index::kSelfPos]));
  CHECK(plain[obs_index::kSelfPos] > 0.0);
  CHECK(framed[obs_index::kSelfPos] < 0.0);
}

TEST_CASE("fuzzed observations stay inside [-1, 1] with well-formed ray blocks") {
  ArenaConfig a;
  a.draw_time = 50.0;
  WorldState w = new_world(a, 42);
  Rng rng(43);
  long checked = 0;
  while (checked < 100'000) {
    step(w, random_intents(rng));
    if (w.outcome.kind != OutcomeKind::Ongoing) w = reset_round(w);
    for (int id = 0; id < kNumPlayers; ++id) {
      const Observation o = observe(w, id);
      for (double v : o) REQUIRE((std::isfinite(v) && v >= -1.0 && v <= 1.0));
      if (checked % 997 == 0) check_ray_block(o, kDefaultRays);
      ++checked;
    }
  }
}

TEST_CASE("stun and time fractions track the world") {
  WorldState w = new_world(ArenaConfig{}, 1);
  w.players[2].stun_ticks = w.config().stun_ticks() / 2;
  w.tick = w.config().draw_ticks() / 4;
  const Observation o = observe(w, 2);
  CHECK(o[obs_index::kStunFraction] == doctest::Approx(0.5));
  CHECK(o[obs_index::kTimeFraction] == doctest::Approx(0.25));
}

TEST_CASE("decode_action examples and errors") {
  CHECK(decode_action(Action{{1, 1, 0}}) == Intent{0, 0, false});
  CHECK(decode_action(Action{{2, 1, 1}}) == Intent{1, 0, true});
  CHECK(decode_action(Action{{0, 2, 0}}) == Intent{-1, 1, false});
  CHECK_THROWS_AS(decode_action(Action{{3, 1, 0}}), ContractError);
  CHECK_THROWS_AS(decode_action(Action{{1, -1, 0}}), ContractError);
  CHECK_THROWS_AS(decode_action(Action{{1, 1, 2}}), ContractError);
}

TEST_CASE("decode/encode is a bijection over all 18 actions") {
  int count = 0;
  for (int x = 0; x < 3; ++x) {
    for (int y = 0; y < 3; ++y) {
      for (int t = 0; t < 2; ++t) {
        const Action a{{x, y, t}};
        CHECK(encode_intent(decode_action(a)) == a);
        for (Team team : {Team::Blue, Team::White}) {
          CHECK(from_world_intent(to_world_intent(a, team), team) == a);
        }
        const auto oh = action_one_hot(a);
        CHECK(std::accumulate(oh.begin(), oh.end(), 0.0) == 3.0);
        CHECK(oh[x] == 1.0);
        CHECK(oh[3 + y] == 1.0);
        CHECK(oh[6 + t] == 1.0);
        ++count;
      }
    }
  }
  CHECK(count == 18);
  CHECK(to_world_intent(Action{{2, 1, 0}}, Team::White).move_x == -1);
  CHECK(to_world_intent(Action{{2, 1, 0}}, Team::Blue).move_x == 1);
}

TEST_CASE("reward examples") {
  const RewardSpec spec;
  auto r = compute_rewards({}, spec);
  for (double v : r) CHECK(v == -0.0005);

  const Outcome won{OutcomeKind::Won, Team::Blue, 10.0};
  const std::vector<GameEvent> delivered{{200, EventKind::FlagDelivered, 1, -1, Team::Blue},
                                         {200, EventKind::RoundEnd, -1, -1, Team::Blue, won}};
  r = compute_rewards(delivered, spec);
  for (int id = 0; id < kNumPlayers; ++id) CHECK(r[id] == (id < 3 ? 1.0 : -1.0));
  CHECK(std::accumulate(r.begin(), r.end(), 0.0) == 0.0);

  const std::vector<GameEvent> hit{{5, EventKind::BallHit, 0, 3}};
  r = compute_rewards(hit, spec);
  CHECK(r[0] == 0.1 - 0.0005);
  CHECK(r[3] == -0.1 - 0.0005);
  CHECK(r[1] == -0.0005);

  const std::vector<GameEvent> misc{{5, EventKind::FlagPickup, 4, -1, Team::Blue},
                                    {5, EventKind::FlagReturned, 2, -1, Team::Blue}};
  r = compute_rewards(misc, spec);
  CHECK(r[4] == 0.3 - 0.0005);
  CHECK(r[2] == 0.2 - 0.0005);

  const Outcome draw{OutcomeKind::Draw, Team::Blue, 1000.0};
  const std::vector<GameEvent> drawn{{20000, EventKind::RoundEnd, -1, -1, Team::Blue, draw}};
  r = compute_rewards(drawn, spec);
  for (double v : r) CHECK(v == 0.0);
}
