#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctf/engine.hpp"
#include "ctf/perception.hpp"

namespace ctf {

inline constexpr const char* kDemoMagic = "CTFDEMO";
inline constexpr int kDemoVersion = 1;
inline constexpr const char* kDemoExtension = ".ctfdemo.jsonl";

enum class DemoSourceKind { Human, Scripted, Policy };

struct DemoSource {
  DemoSourceKind kind = DemoSourceKind::Scripted;
  std::string checkpoint;  // Policy only
  bool operator==(const DemoSource&) const = default;
};

std::string to_string(const DemoSource& s);
DemoSource parse_demo_source(const std::string& s);

struct DemoHeader {
  std::string magic = kDemoMagic;
  int version = kDemoVersion;
  std::string obs_layout = kObsLayout;
  int obs_dim = 0;
  std::array<int, kNumBranches> action_branches = kActionBranches;
  double tick_dt = 0.05;
  ArenaConfig arena;
  std::string session_id;
  int agent_id = 0;
  Team team = Team::Blue;
  DemoSource source;
  // World seed of the recorded session, for replay. Optional.
  std::optional<std::uint64_t> seed;
  bool operator==(const DemoHeader&) const = default;
};

struct DemoStep {
  std::int64_t t = 0;
  std::vector<double> obs;
  Action act;
  double rew = 0.0;
  bool done = false;
  bool operator==(const DemoStep&) const = default;
};

struct Trajectory {
  DemoHeader header;
  std::vector<DemoStep> steps;
  bool operator==(const Trajectory&) const = default;
};

// Equality on the bit patterns of every number (distinguishes -0.0 and 0.0).
bool bitwise_equal(const Trajectory& a, const Trajectory& b);

DemoHeader make_demo_header(const ArenaConfig& arena, int rays, std::string session_id, int agent_id,
                            DemoSource source, std::optional<std::uint64_t> seed = std::nullopt);

// Appends steps to a demo file. Every step is flushed as soon as it is
// written, so a crash loses at most the step in progress. Step times are
// assigned consecutively from 0.
class DemoRecorder {
 public:
  DemoRecorder(const std::filesystem::path& path, DemoHeader header);

  void record_step(std::span<const double> obs, const Action& act, double rew, bool done);

  const DemoHeader& header() const { return header_; }
  const std::filesystem::path& path() const { return path_; }
  std::int64_t steps() const { return next_t_; }

 private:
  std::filesystem::path path_;
  DemoHeader header_;
  std::ofstream out_;
  std::int64_t next_t_ = 0;
};

void write_demo(const std::filesystem::path& path, const Trajectory& traj);

// Throws FormatError on a bad header or a corrupt interior line. A truncated
// final line is skipped and reported through `warnings`.
Trajectory read_demo(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);

struct DemoReport {
  bool ok = false;
  std::int64_t steps = 0;
  double duration_s = 0.0;
  int rounds = 0;
  std::vector<std::string> problems;
};

// Never throws; every defect becomes an entry in problems.
DemoReport validate_demo(const std::filesystem::path& path);

// Lists demo files under a path (a file is returned as-is; directories are
// scanned for *.ctfdemo.jsonl in sorted order).
std::vector<std::filesystem::path> list_demo_files(const std::filesystem::path& path);

}  // namespace ctf
