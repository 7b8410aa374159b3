#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace surgagg {

using Rng = std::mt19937_64;

/// Independent, reproducible stream keyed by a seed and a list of tags
/// (purpose, client id, attempt, ...).
inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Stream purposes.
namespace stream {
inline constexpr std::uint64_t truth = 1;
inline constexpr std::uint64_t features = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t shift = 4;
inline constexpr std::uint64_t init_feature = 10;
inline constexpr std::uint64_t init_head = 11;
inline constexpr std::uint64_t shuffle = 20;
}  // namespace stream

}  // namespace surgagg
