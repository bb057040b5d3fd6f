#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "tabsage/error.hpp"
#include "tabsage/knn_graph.hpp"
#include "tabsage/rng.hpp"
#include "knn_oracle.hpp"
#include "test_support.hpp"

using namespace tabsage;
using testing::random_points;

namespace {

RowMatrix points_1d(std::vector<double> xs) {
  const std::size_t n = xs.size();
  return RowMatrix(n, 1, std::move(xs));
}

}  // namespace

TEST_CASE("1-D example: directed picks, symmetrized edges and degrees") {
  const auto x = points_1d({0, 1, 3});
  const auto directed = directed_knn(x, 1);
  CHECK(directed == std::vector<std::vector<std::size_t>>{{1}, {0}, {1}});
  const auto g = build_knn_graph(x, 1);
  CHECK(g.edges() == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 2}});
  CHECK(g.degree(0) == 1);
  CHECK(g.degree(1) == 2);
  CHECK(g.degree(2) == 1);
  CHECK(g.edge_count() == 2);
}

TEST_CASE("identical points resolve ties to the lowest index") {
  const auto x = points_1d({5, 5, 5});
  CHECK(directed_knn(x, 1) == std::vector<std::vector<std::size_t>>{{1}, {0}, {0}});
  const auto g = build_knn_graph(x, 1);
  CHECK(g.edges() == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {0, 2}});
}

TEST_CASE("k bounds") {
  RowMatrix five(5, 2, 0.0);
  for (std::size_t r = 0; r < 5; ++r) five(r, 0) = static_cast<double>(r);
  CHECK_THROWS_WITH_AS(build_knn_graph(five, 5), doctest::Contains("KTooLarge"), Error);
  CHECK_THROWS_WITH_AS(build_knn_graph(five, 0), doctest::Contains("KTooLarge"), Error);
  CHECK_NOTHROW(build_knn_graph(five, 4));
  CHECK_THROWS_WITH_AS(build_knn_graph(RowMatrix(), 1), doctest::Contains("EmptyFeatures"), Error);
}

TEST_CASE("oracle: 200 random 8-D points with duplicated rows") {
  const auto x = testing::tied_points();
  for (std::size_t k : {1U, 3U, 5U}) {
    CAPTURE(k);
    CHECK(directed_knn(x, k) == testing::brute_force(x, k));
  }
}

TEST_CASE("graph invariants: symmetric, no self loops, sorted, degree >= k, monotone in k") {
  Rng rng(3);
  const auto x = random_points(150, 4, rng);
  std::size_t previous_edges = 0;
  for (std::size_t k = 1; k <= 12; ++k) {
    const auto g = build_knn_graph(x, k);
    CHECK(g.node_count() == 150);
    for (std::size_t i = 0; i < 150; ++i) {
      const auto nb = g.neighbors(i);
      CHECK(nb.size() >= k);
      CHECK(std::is_sorted(nb.begin(), nb.end()));
      CHECK(std::adjacent_find(nb.begin(), nb.end()) == nb.end());
      for (auto j : nb) {
        CHECK(j != i);
        const auto back = g.neighbors(j);
        CHECK(std::binary_search(back.begin(), back.end(), i));
      }
    }
    CHECK(g.edge_count() >= previous_edges);
    previous_edges = g.edge_count();
  }
}

TEST_CASE("relabeling the rows relabels the graph") {
  Rng rng(11);
  const auto x = random_points(80, 3, rng);
  auto perm = permutation(80, rng);
  const auto y = x.select_rows(perm);  // row t of y is row perm[t] of x
  const auto gx = build_knn_graph(x, 4);
  const auto gy = build_knn_graph(y, 4);
  for (std::size_t t = 0; t < 80; ++t) {
    std::set<std::size_t> mapped;
    for (auto u : gy.neighbors(t)) mapped.insert(perm[u]);
    const auto nb = gx.neighbors(perm[t]);
    CHECK(mapped == std::set<std::size_t>(nb.begin(), nb.end()));
  }
}

TEST_CASE("ego subgraph") {
  const auto g = build_knn_graph(points_1d({0, 1, 3}), 1);
  const auto ego = ego_subgraph(g, 1);
  CHECK(ego.parent_index == std::vector<std::size_t>{0, 1, 2});
  CHECK(ego.center == 1);
  CHECK(ego.adjacency.entry_count() == 4);
  CHECK(ego.adjacency.degree(1) == 2);
  CHECK(ego.adjacency.degree(0) == 1);

  const auto leaf = ego_subgraph(g, 0);
  CHECK(leaf.parent_index == std::vector<std::size_t>{0, 1});
  CHECK(leaf.center == 0);

  Rng rng(5);
  const auto big = build_knn_graph(random_points(60, 3, rng), 3);
  for (std::size_t i = 0; i < 60; ++i) {
    const auto e = ego_subgraph(big, i);
    CHECK(e.parent_index.size() == big.degree(i) + 1);
    CHECK(e.parent_index.size() >= 2);
    CHECK(e.parent_index[e.center] == i);
    // Induced edges are exactly the parent edges between included nodes.
    for (std::size_t a = 0; a < e.parent_index.size(); ++a) {
      const auto parent_nb = big.neighbors(e.parent_index[a]);
      std::size_t induced = 0;
      for (auto b : e.parent_index) induced += std::binary_search(parent_nb.begin(), parent_nb.end(), b) ? 1 : 0;
      CHECK(e.adjacency.degree(a) == induced);
    }
  }
  CHECK_THROWS_WITH_AS(ego_subgraph(g, 3), doctest::Contains("IndexOutOfRange"), Error);
}

TEST_CASE("edge list dump") {
  const auto g = build_knn_graph(points_1d({0, 1, 3, 7}), 1);
  const auto dir = testing::scratch_dir("edges");
  write_edge_list(g, dir / "g.edges");
  CHECK(testing::slurp(dir / "g.edges") == "0 1\n1 2\n2 3\n");
}
