#include <cmath>
#include <fstream>

#include "ctf/training.hpp"

namespace ctf {

using nlohmann::json;

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::BC: return "BC";
    case Algorithm::GAIL_PPO: return "GAIL_PPO";
    case Algorithm::PPO: return "PPO";
    case Algorithm::Combo: return "Combo";
  }
  return "?";
}

const char* opponent_name(OpponentKind k) {
  switch (k) {
    case OpponentKind::SelfPlay: return "selfplay";
    case OpponentKind::Expert: return "expert";
    case OpponentKind::Random: return "random";
    case OpponentKind::None: return "none";
  }
  return "?";
}

const char* curriculum_name(Curriculum c) { return c == Curriculum::FetchFlag ? "fetch_flag" : "none"; }

namespace {

Algorithm parse_algorithm(const std::string& s) {
  for (Algorithm a : {Algorithm::BC, Algorithm::GAIL_PPO, Algorithm::PPO, Algorithm::Combo}) {
    if (s == algorithm_name(a)) return a;
  }
  throw ConfigError("algorithm: unknown value '" + s + "' (expected BC, GAIL_PPO, PPO or Combo)");
}

OpponentKind parse_opponent(const std::string& s) {
  for (OpponentKind k : {OpponentKind::SelfPlay, OpponentKind::Expert, OpponentKind::Random, OpponentKind::None}) {
    if (s == opponent_name(k)) return k;
  }
  throw ConfigError("opponent: unknown value '" + s + "' (expected selfplay, expert, random or none)");
}

Curriculum parse_curriculum(const std::string& s) {
  if (s == "none") return Curriculum::None;
  if (s == "fetch_flag") return Curriculum::FetchFlag;
  throw ConfigError("curriculum: unknown value '" + s + "' (expected none or fetch_flag)");
}

// Overlays `src` onto `dst`, refusing keys that dst does not have. The arena
// object is merged the same way.
void merge_known(json& dst, const json& src, const std::string& prefix) {
  if (!src.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + " must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& d = dst[it.key()];
    if (d.is_object() && it.value().is_object()) {
      merge_known(d, it.value(), key);
    } else {
      d = it.value();
    }
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  const json& v = section ? j.at(section).at(key) : j.at(key);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + (section ? std::string(section) + "." : "") + key +
                      "' has the wrong type");
  }
}

}  // namespace

json to_json(const TrainConfig& c) {
  json arena;
  to_json(arena, c.arena);
  return json{
      {"run_id", c.run_id},
      {"seed", c.seed},
      {"algorithm", algorithm_name(c.algorithm)},
      {"combo", {{"bc_strength", c.combo.bc_strength}, {"gail_strength", c.combo.gail_strength}}},
      {"demo_paths", c.demo_paths},
      {"max_env_steps", c.max_env_steps},
      {"ppo",
       {{"lr", c.ppo.lr},
        {"gamma", c.ppo.gamma},
        {"gae_lambda", c.ppo.gae_lambda},
        {"clip_eps", c.ppo.clip_eps},
        {"epochs", c.ppo.epochs},
        {"minibatch", c.ppo.minibatch},
        {"horizon", c.ppo.horizon},
        {"entropy_coef", c.ppo.entropy_coef},
        {"value_coef", c.ppo.value_coef},
        {"max_grad_norm", c.ppo.max_grad_norm},
        {"num_envs", c.ppo.num_envs}}},
      {"bc", {{"lr", c.bc.lr}, {"batch", c.bc.batch}, {"epochs", c.bc.epochs}}},
      {"gail",
       {{"lr", c.gail.lr},
        {"batch", c.gail.batch},
        {"reward_scale", c.gail.reward_scale},
        {"updates_per_iter", c.gail.updates_per_iter}}},
      {"selfplay",
       {{"snapshot_every", c.selfplay.snapshot_every},
        {"pool_size", c.selfplay.pool_size},
        {"opponent_latest_prob", c.selfplay.opponent_latest_prob}}},
      {"eval_every", c.eval_every},
      {"eval_episodes", c.eval_episodes},
      {"checkpoint_dir", c.checkpoint_dir},
      {"opponent", opponent_name(c.opponent)},
      {"curriculum", curriculum_name(c.curriculum)},
      {"arena", arena},
      {"rays", c.rays},
      {"hidden", c.hidden},
      {"progress_reward", c.progress_reward},
      {"init_checkpoint", c.init_checkpoint},
  };
}

TrainConfig train_config_from_json(const json& in) {
  json j = to_json(TrainConfig{});
  merge_known(j, in, "");
  TrainConfig c;
  c.run_id = get<std::string>(j, nullptr, "run_id");
  c.seed = get<std::uint64_t>(j, nullptr, "seed");
  c.algorithm = parse_algorithm(get<std::string>(j, nullptr, "algorithm"));
  c.combo.bc_strength = get<double>(j, "combo", "bc_strength");
  c.combo.gail_strength = get<double>(j, "combo", "gail_strength");
  c.demo_paths = get<std::vector<std::string>>(j, nullptr, "demo_paths");
  c.max_env_steps = get<std::int64_t>(j, nullptr, "max_env_steps");
  c.ppo.lr = get<double>(j, "ppo", "lr");
  c.ppo.gamma = get<double>(j, "ppo", "gamma");
  c.ppo.gae_lambda = get<double>(j, "ppo", "gae_lambda");
  c.ppo.clip_eps = get<double>(j, "ppo", "clip_eps");
  c.ppo.epochs = get<int>(j, "ppo", "epochs");
  c.ppo.minibatch = get<int>(j, "ppo", "minibatch");
  c.ppo.horizon = get<int>(j, "ppo", "horizon");
  c.ppo.entropy_coef = get<double>(j, "ppo", "entropy_coef");
  c.ppo.value_coef = get<double>(j, "ppo", "value_coef");
  c.ppo.max_grad_norm = get<double>(j, "ppo", "max_grad_norm");
  c.ppo.num_envs = get<int>(j, "ppo", "num_envs");
  c.bc.lr = get<double>(j, "bc", "lr");
  c.bc.batch = get<int>(j, "bc", "batch");
  c.bc.epochs = get<int>(j, "bc", "epochs");
  c.gail.lr = get<double>(j, "gail", "lr");
  c.gail.batch = get<int>(j, "gail", "batch");
  c.gail.reward_scale = get<double>(j, "gail", "reward_scale");
  c.gail.updates_per_iter = get<int>(j, "gail", "updates_per_iter");
  c.selfplay.snapshot_every = get<std::int64_t>(j, "selfplay", "snapshot_every");
  c.selfplay.pool_size = get<int>(j, "selfplay", "pool_size");
  c.selfplay.opponent_latest_prob = get<double>(j, "selfplay", "opponent_latest_prob");
  c.eval_every = get<std::int64_t>(j, nullptr, "eval_every");
  c.eval_episodes = get<int>(j, nullptr, "eval_episodes");
  c.checkpoint_dir = get<std::string>(j, nullptr, "checkpoint_dir");
  c.opponent = parse_opponent(get<std::string>(j, nullptr, "opponent"));
  c.curriculum = parse_curriculum(get<std::string>(j, nullptr, "curriculum"));
  try {
    from_json(j.at("arena"), c.arena);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("arena: ") + e.what());
  }
  c.rays = get<int>(j, nullptr, "rays");
  c.hidden = get<int>(j, nullptr, "hidden");
  c.progress_reward = get<double>(j, nullptr, "progress_reward");
  c.init_checkpoint = get<std::string>(j, nullptr, "init_checkpoint");
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  auto positive = [](double v, const std::string& key) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key + " must be positive");
  };
  auto non_negative = [](double v, const std::string& key) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(key + " must be non-negative");
  };
  if (run_id.empty()) throw ConfigError("run_id must not be empty");
  if (checkpoint_dir.empty()) throw ConfigError("checkpoint_dir must not be empty");
  if (algorithm != Algorithm::PPO && demo_paths.empty()) {
    throw ConfigError(std::string("algorithm ") + algorithm_name(algorithm) + " needs demo_paths");
  }
  positive(static_cast<double>(max_env_steps), "max_env_steps");
  positive(ppo.lr, "ppo.lr");
  if (!(ppo.gamma > 0.0 && ppo.gamma <= 1.0)) throw ConfigError("ppo.gamma must lie in (0, 1]");
  if (!(ppo.gae_lambda >= 0.0 && ppo.gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda must lie in [0, 1]");
  if (!(ppo.clip_eps > 0.0 && ppo.clip_eps < 1.0)) throw ConfigError("ppo.clip_eps must lie in (0, 1)");
  positive(ppo.epochs, "ppo.epochs");
  positive(ppo.minibatch, "ppo.minibatch");
  positive(ppo.horizon, "ppo.horizon");
  non_negative(ppo.entropy_coef, "ppo.entropy_coef");
  positive(ppo.value_coef, "ppo.value_coef");
  non_negative(ppo.max_grad_norm, "ppo.max_grad_norm");
  positive(ppo.num_envs, "ppo.num_envs");
  positive(bc.lr, "bc.lr");
  positive(bc.batch, "bc.batch");
  positive(bc.epochs, "bc.epochs");
  positive(gail.lr, "gail.lr");
  positive(gail.batch, "gail.batch");
  positive(gail.reward_scale, "gail.reward_scale");
  positive(gail.updates_per_iter, "gail.updates_per_iter");
  positive(static_cast<double>(selfplay.snapshot_every), "selfplay.snapshot_every");
  positive(selfplay.pool_size, "selfplay.pool_size");
  if (!(selfplay.opponent_latest_prob >= 0.0 && selfplay.opponent_latest_prob <= 1.0)) {
    throw ConfigError("selfplay.opponent_latest_prob must lie in [0, 1]");
  }
  non_negative(combo.bc_strength, "combo.bc_strength");
  non_negative(combo.gail_strength, "combo.gail_strength");
  positive(static_cast<double>(eval_every), "eval_every");
  non_negative(eval_episodes, "eval_episodes");
  positive(rays, "rays");
  positive(hidden, "hidden");
  non_negative(progress_reward, "progress_reward");
  effective_arena().validate();
  if (curriculum == Curriculum::FetchFlag && opponent != OpponentKind::None) {
    throw ConfigError("curriculum fetch_flag has no opponents; set opponent to none");
  }
}

ArenaConfig TrainConfig::effective_arena() const { return curriculum == Curriculum::FetchFlag ? fetch_flag_arena() : arena; }

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) throw ConfigError("override '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

TrainConfig load_train_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  for (const std::string& o : overrides) apply_override(j, o);
  try {
    return train_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ArenaConfig fetch_flag_arena() {
  ArenaConfig a;
  a.width = 16.0;
  a.height = 8.0;
  a.walls.clear();
  a.base_depth = 3.0;
  a.flag_spawns = {{{-6.5, 0.0}, {6.5, 0.0}}};
  a.player_spawns = {{{-5.0, 1.5}, {-6.0, -2.0}, {-5.0, -3.0}}};
  a.ball_count = 0;
  a.draw_time = 20.0;
  a.inactive_players = {1, 2, 3, 4, 5};
  return a;
}

}  // namespace ctf
