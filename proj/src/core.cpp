#include "ctf/core.hpp"

namespace ctf {

Team parse_team(const std::string& s) {
  if (s == "blue" || s == "Blue") return Team::Blue;
  if (s == "white" || s == "White") return Team::White;
  throw ContractError("unknown team '" + s + "'");
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw ContractError("uniform_index: empty range");
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t v = rng();
  while (v >= limit) v = rng();
  return v % n;
}

// SplitMix64 finaliser over (seed, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace ctf
