#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <random>
#include <stdexcept>
#include <vector>

#include "tabsage/error.hpp"
#include "tabsage/parallel.hpp"
#include "tabsage/rng.hpp"

using namespace tabsage;

TEST_CASE("rng: engine sequence is the standard mt19937_64") {
  Rng rng(5489);
  std::mt19937_64 reference(5489);
  for (int i = 0; i < 9999; ++i) rng.next(), reference();
  CHECK(rng.next() == 9981545732273789042ULL);  // 10000th output fixed by the standard
}

TEST_CASE("rng: uniform range, below bounds and coverage") {
  Rng rng(1);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    ++counts[rng.below(7)];
  }
  for (int c : counts) CHECK(c > 850);
  CHECK(rng.below(1) == 0);
}

TEST_CASE("rng: permutations and derived seeds") {
  Rng a(3);
  Rng b(3);
  const auto p = permutation(100, a);
  CHECK(p == permutation(100, b));
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
  CHECK(derive_seed(42, streams::init) != derive_seed(42, streams::dropout));
  CHECK(derive_seed(42, streams::init) == derive_seed(42, streams::init));
  CHECK(derive_seed(42, streams::init) != derive_seed(43, streams::init));
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  for (std::size_t workers : {1U, 3U, 8U}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(50, [&](std::size_t i) { ++hits[i]; }, workers);
    for (const auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(
                        20,
                        [](std::size_t i) {
                          if (i == 7) throw Error(ErrorCode::IoError, "boom");
                        },
                        workers),
                    Error);
  }
  parallel_for(0, [](std::size_t) { FAIL("no work expected"); });
  CHECK(worker_count() >= 1);
}
