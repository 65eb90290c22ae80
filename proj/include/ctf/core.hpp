#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace ctf {

// Error categories. Every public operation reports failures by throwing one of
// these; callers that need exit codes (the CLI) map them.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr bool operator==(const Vec2&) const = default;

  constexpr double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::sqrt(x * x + y * y); }
  // 0.0 - x keeps +0 canonical so mirroring twice is bit-exact.
  constexpr Vec2 mirrored() const { return {0.0 - x, y}; }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

enum class Team : std::uint8_t { Blue = 0, White = 1 };

constexpr Team other(Team t) { return t == Team::Blue ? Team::White : Team::Blue; }
constexpr int index(Team t) { return static_cast<int>(t); }
inline const char* team_name(Team t) { return t == Team::Blue ? "blue" : "white"; }
Team parse_team(const std::string& s);

// mt19937_64 is fully specified by the C++ standard, so streams are
// reproducible across toolchains. The std distributions are not, hence the
// helpers below.
using Rng = std::mt19937_64;

// Uniform in [0, 1) using the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Uniform integer in [0, n) without modulo bias.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Derives an independent seed for a named sub-stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ctf
