#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ctf/nn.hpp"

namespace ctf::nn {

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const MlpShape& s = c.policy.net.shape;
  nlohmann::ordered_json j;
  j["format"] = "ckptv1";
  j["id"] = c.id;
  j["obs_layout"] = c.obs_layout;
  j["rays"] = c.rays;
  j["shape"] = {{"input", s.input}, {"hidden", s.hidden}, {"output", s.output}, {"heads", s.output_heads}};
  j["action_branches"] = kActionBranches;
  j["seed"] = c.seed;
  j["lineage"] = c.lineage;
  j["training_step"] = c.training_step;
  j["params"] = c.policy.net.params;
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::out | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path);
  Checkpoint c;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.at("format").get<std::string>() != "ckptv1") throw FormatError(path + ": unknown checkpoint format");
    c.id = j.value("id", std::string{});
    c.obs_layout = j.at("obs_layout").get<std::string>();
    c.rays = j.at("rays").get<int>();
    MlpShape s;
    s.input = j.at("shape").at("input").get<int>();
    s.hidden = j.at("shape").at("hidden").get<std::vector<int>>();
    s.output = j.at("shape").at("output").get<int>();
    s.output_heads = j.at("shape").at("heads").get<std::vector<int>>();
    if (s.output != kPolicyOutput) throw FormatError(path + ": policy output width must be 9");
    if (j.at("action_branches").get<std::array<int, kNumBranches>>() != kActionBranches) {
      throw FormatError(path + ": action branches mismatch");
    }
    c.seed = j.at("seed").get<std::uint64_t>();
    c.lineage = j.at("lineage").get<std::vector<std::string>>();
    c.training_step = j.at("training_step").get<std::int64_t>();
    c.policy.net.shape = s;
    c.policy.net.params = j.at("params").get<std::vector<double>>();
    if (c.policy.net.params.size() != param_count(s)) throw FormatError(path + ": parameter count mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return c;
}

}  // namespace ctf::nn
