#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ssnocc {

using Rng = std::mt19937_64;

// Independent stream for (seed, tags...). Distinct tag tuples give
// decorrelated engines through seed_seq mixing.
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq mixed(words.begin(), words.end());
  return Rng(mixed);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace ssnocc
