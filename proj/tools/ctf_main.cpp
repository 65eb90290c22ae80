#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "ctf/arena.hpp"
#include "ctf/demos.hpp"
#include "ctf/server.hpp"
#include "ctf/training.hpp"

using namespace ctf;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;

std::vector<std::filesystem::path> expand(const std::vector<std::string>& paths) {
  std::vector<std::filesystem::path> out;
  for (const auto& p : paths) {
    if (std::filesystem::is_directory(p)) {
      for (auto& f : list_demo_files(p)) out.push_back(f);
    } else {
      out.emplace_back(p);
    }
  }
  return out;
}

int demo_validate(const std::vector<std::string>& paths) {
  int bad = 0;
  for (const auto& f : expand(paths)) {
    const DemoReport r = validate_demo(f);
    if (r.ok) {
      std::cout << "OK   " << f.string() << " (" << r.steps << " steps, " << r.rounds << " rounds)\n";
    } else {
      ++bad;
      std::cout << "FAIL " << f.string() << '\n';
      for (const auto& p : r.problems) std::cout << "     " << p << '\n';
    }
  }
  return bad == 0 ? kOk : kFailed;
}

int demo_stats(const std::vector<std::string>& paths, bool as_json) {
  json all = json::array();
  int bad = 0;
  for (const auto& f : expand(paths)) {
    const DemoReport r = validate_demo(f);
    json entry{{"path", f.string()}, {"valid", r.ok}, {"steps", r.steps}, {"rounds", r.rounds},
               {"duration_s", r.duration_s}};
    if (r.ok) {
      const Trajectory t = read_demo(f);
      json hist = json::array();
      for (int b = 0; b < kNumBranches; ++b) {
        std::vector<std::int64_t> counts(static_cast<std::size_t>(kActionBranches[b]), 0);
        for (const DemoStep& s : t.steps) ++counts[static_cast<std::size_t>(s.act.branch[b])];
        hist.push_back(counts);
      }
      entry["action_histogram"] = hist;
      entry["source"] = to_string(t.header.source);
      entry["agent_id"] = t.header.agent_id;
    } else {
      ++bad;
      entry["problems"] = r.problems;
    }
    all.push_back(entry);
  }
  if (as_json) {
    std::cout << all.dump(2) << '\n';
  } else {
    static const char* names[] = {"move_x", "move_y", "act"};
    for (const json& e : all) {
      std::cout << e["path"].get<std::string>() << '\n';
      if (!e["valid"]) {
        std::cout << "  invalid\n";
        continue;
      }
      std::cout << "  source " << e["source"].get<std::string>() << ", agent " << e["agent_id"] << ", steps "
                << e["steps"] << ", rounds " << e["rounds"] << ", duration " << e["duration_s"].get<double>()
                << " s\n";
      for (int b = 0; b < kNumBranches; ++b) std::cout << "  " << names[b] << " " << e["action_histogram"][b].dump() << '\n';
    }
  }
  return bad == 0 ? kOk : kFailed;
}

ArenaConfig load_arena(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read arena file " + path);
  ArenaConfig a;
  try {
    from_json(json::parse(in), a);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  a.validate();
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Capture-the-flag simulator, demonstration recorder and trainer"};
  app.require_subcommand(1);

  std::string serve_config, serve_bots, serve_address = "0.0.0.0";
  int serve_port = 8765;
  auto* serve = app.add_subcommand("serve", "Run a play session over WebSocket");
  serve->add_option("--config", serve_config, "Session config JSON");
  serve->add_option("--port", serve_port, "Listen port")->check(CLI::Range(0, 65535));
  serve->add_option("--bots", serve_bots, "Checkpoint driving the empty seats (default: scripted expert)");
  serve->add_option("--address", serve_address, "Listen address");

  int demo_sessions = 1;
  std::uint64_t demo_seed = 1;
  std::string demo_out;
  auto* expert = app.add_subcommand("expert-demos", "Record scripted expert sessions");
  expert->add_option("--sessions", demo_sessions)->required()->check(CLI::PositiveNumber);
  expert->add_option("--seed", demo_seed)->required();
  expert->add_option("--out", demo_out)->required();

  auto* demo = app.add_subcommand("demo", "Inspect demonstration files");
  demo->require_subcommand(1);
  std::vector<std::string> validate_paths, stats_paths;
  bool stats_json = false;
  auto* validate = demo->add_subcommand("validate", "Check demo files");
  validate->add_option("paths", validate_paths)->required();
  auto* stats = demo->add_subcommand("stats", "Steps, rounds, duration and action histogram");
  stats->add_option("paths", stats_paths)->required();
  stats->add_flag("--json", stats_json);

  std::string train_config;
  std::vector<std::string> overrides;
  bool train_quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train a policy from a config file");
  train_cmd->add_option("--config", train_config)->required();
  train_cmd->add_option("--override", overrides, "key.path=value (repeatable)");
  train_cmd->add_flag("--quiet", train_quiet, "No progress lines");

  std::string eval_blue, eval_white, eval_arena, eval_csv;
  int eval_episodes = 100;
  std::uint64_t eval_seed = 1;
  bool eval_json = false;
  auto* eval = app.add_subcommand("eval", "Play two policy sources against each other");
  eval->add_option("--blue", eval_blue, "expert, random or a checkpoint path")->required();
  eval->add_option("--white", eval_white, "expert, random or a checkpoint path")->required();
  eval->add_option("--episodes", eval_episodes)->required()->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed)->required();
  eval->add_option("--arena", eval_arena, "Arena JSON (default arena otherwise)");
  eval->add_option("--csv", eval_csv, "Write the per-episode log here");
  eval->add_flag("--json", eval_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kUsage;
  }

  try {
    if (*serve) {
      SessionConfig cfg = serve_config.empty() ? SessionConfig{} : load_session_config(serve_config);
      std::optional<PolicySource> bot;
      if (!serve_bots.empty()) {
        bot = PolicySource::from_checkpoint(
            std::make_shared<const nn::Checkpoint>(nn::load_checkpoint(serve_bots)), serve_bots);
      }
      SessionServer server(cfg, static_cast<unsigned short>(serve_port), bot, serve_address);
      std::cerr << "serving session " << cfg.session_id << " on " << serve_address << ':' << server.port()
                << ", demos in " << cfg.demo_dir << '\n';
      server.run();
      return kOk;
    }
    if (*expert) {
      const auto files = generate_expert_demos(demo_sessions, demo_seed, demo_out);
      for (const auto& f : files) std::cout << f.string() << '\n';
      return kOk;
    }
    if (*validate) return demo_validate(validate_paths);
    if (*stats) return demo_stats(stats_paths, stats_json);
    if (*train_cmd) {
      const TrainConfig cfg = load_train_config(train_config, overrides);
      const TrainResult r = train(cfg, train_quiet ? nullptr : &std::cerr);
      std::cout << r.checkpoint_path.string() << '\n' << r.report_path.string() << '\n';
      return kOk;
    }
    if (*eval) {
      EvalOptions opt;
      opt.arena = load_arena(eval_arena);
      opt.episodes = eval_episodes;
      opt.seed = eval_seed;
      const Metrics m = evaluate(PolicySource::parse(eval_blue), PolicySource::parse(eval_white), opt);
      if (!eval_csv.empty()) write_episode_csv(eval_csv, m);
      if (eval_json) {
        std::cout << metrics_json(m).dump(2) << '\n';
      } else {
        std::cout << metrics_table(m);
      }
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kUsage;
}
