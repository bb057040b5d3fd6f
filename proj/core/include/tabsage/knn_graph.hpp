#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "tabsage/dataset.hpp"

namespace tabsage {

// Compressed neighbor lists. Lists are sorted ascending and contain no self
// entries; symmetry is a property of how the owner built it.
class Adjacency {
 public:
  Adjacency() : offsets_{0} {}
  explicit Adjacency(const std::vector<std::vector<std::size_t>>& lists);

  std::size_t node_count() const noexcept { return offsets_.size() - 1; }
  std::size_t degree(std::size_t node) const { return offsets_[node + 1] - offsets_[node]; }
  std::span<const std::size_t> neighbors(std::size_t node) const {
    return {indices_.data() + offsets_[node], degree(node)};
  }
  // Number of (directed) list entries; twice the undirected edge count when symmetric.
  std::size_t entry_count() const noexcept { return indices_.size(); }
  std::size_t min_degree() const;

  bool operator==(const Adjacency&) const = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> indices_;
};

// Undirected k-NN graph over the rows of a feature matrix.
class KnnGraph {
 public:
  KnnGraph(std::size_t k, Adjacency adjacency) : k_(k), adjacency_(std::move(adjacency)) {}

  std::size_t node_count() const noexcept { return adjacency_.node_count(); }
  std::size_t k() const noexcept { return k_; }
  std::size_t edge_count() const noexcept { return adjacency_.entry_count() / 2; }
  std::size_t degree(std::size_t node) const { return adjacency_.degree(node); }
  std::span<const std::size_t> neighbors(std::size_t node) const { return adjacency_.neighbors(node); }
  const Adjacency& adjacency() const noexcept { return adjacency_; }

  // Undirected edges (i, j), i < j, sorted lexicographically.
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;

  bool operator==(const KnnGraph&) const = default;

 private:
  std::size_t k_;
  Adjacency adjacency_;
};

// Per-row k nearest other rows by Euclidean distance, nearest first; equal
// distances resolve to the lower row index. Row order within each list is the
// selection order.
std::vector<std::vector<std::size_t>> directed_knn(const RowMatrix& features, std::size_t k);

// directed_knn plus reciprocal edges. Requires 1 <= k < n.
KnnGraph build_knn_graph(const RowMatrix& features, std::size_t k);

struct EgoSubgraph {
  std::size_t center = 0;  // local index of the center node
  Adjacency adjacency;     // local indices
  std::vector<std::size_t> parent_index;  // local -> parent node, ascending
};

// Induced subgraph on {center} ∪ N(center).
EgoSubgraph ego_subgraph(const KnnGraph& graph, std::size_t center);

// One `i j` line per undirected edge, i < j, sorted.
void write_edge_list(const KnnGraph& graph, const std::filesystem::path& path);

}  // namespace tabsage
