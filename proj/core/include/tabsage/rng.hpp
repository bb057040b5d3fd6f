#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tabsage {

// Deterministic random source used everywhere randomness enters the pipeline.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. Distributions are implemented here rather than taken from
// <random>, because the standard distributions are implementation-defined
// and would make results depend on the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer on [0, bound), bound > 0. Rejection sampling, unbiased.
  std::size_t below(std::size_t bound);

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Seed for a named sub-stream (e.g. model init vs. dropout) of a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept;

// Fisher–Yates shuffle: for i = n-1 .. 1, swap(i, below(i + 1)).
void shuffle(std::span<std::size_t> values, Rng& rng);

// Identity permutation of size n, shuffled.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

namespace streams {
inline constexpr std::uint64_t split = 0x73706c6974ULL;
inline constexpr std::uint64_t init = 0x696e6974ULL;
inline constexpr std::uint64_t dropout = 0x64726f70ULL;
inline constexpr std::uint64_t folds = 0x666f6c6473ULL;
inline constexpr std::uint64_t forest = 0x666f72657374ULL;
}  // namespace streams

}  // namespace tabsage
