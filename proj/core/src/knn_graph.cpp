#include "tabsage/knn_graph.hpp"

#include <algorithm>
#include <fstream>

#include "tabsage/error.hpp"

namespace tabsage {

Adjacency::Adjacency(const std::vector<std::vector<std::size_t>>& lists) {
  offsets_.reserve(lists.size() + 1);
  offsets_.push_back(0);
  for (const auto& list : lists) {
    indices_.insert(indices_.end(), list.begin(), list.end());
    offsets_.push_back(indices_.size());
  }
}

std::size_t Adjacency::min_degree() const {
  std::size_t lowest = node_count() == 0 ? 0 : degree(0);
  for (std::size_t i = 1; i < node_count(); ++i) lowest = std::min(lowest, degree(i));
  return lowest;
}

std::vector<std::pair<std::size_t, std::size_t>> KnnGraph::edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(edge_count());
  for (std::size_t i = 0; i < node_count(); ++i) {
    for (auto j : neighbors(i)) {
      if (i < j) out.emplace_back(i, j);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> directed_knn(const RowMatrix& features, std::size_t k) {
  const std::size_t n = features.rows();
  if (n == 0 || features.cols() == 0) throw Error(ErrorCode::EmptyFeatures, "feature matrix is empty");
  if (k < 1 || k >= n) {
    throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " must satisfy 1 <= k < n=" + std::to_string(n));
  }

  std::vector<std::vector<std::size_t>> result(n);
  std::vector<std::pair<double, std::size_t>> candidates(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = features.row(i);
    std::size_t slot = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto xj = features.row(j);
      double d2 = 0.0;
      for (std::size_t c = 0; c < xi.size(); ++c) {
        const double diff = xi[c] - xj[c];
        d2 += diff * diff;
      }
      candidates[slot++] = {d2, j};
    }
    // Pair ordering is (distance, index), which is the tie rule.
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end());
    auto& out = result[i];
    out.reserve(k);
    for (std::size_t m = 0; m < k; ++m) out.push_back(candidates[m].second);
  }
  return result;
}

KnnGraph build_knn_graph(const RowMatrix& features, std::size_t k) {
  const auto directed = directed_knn(features, k);
  std::vector<std::vector<std::size_t>> lists(directed.size());
  for (std::size_t i = 0; i < directed.size(); ++i) {
    for (auto j : directed[i]) {
      lists[i].push_back(j);
      lists[j].push_back(i);
    }
  }
  for (auto& list : lists) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return KnnGraph(k, Adjacency(lists));
}

EgoSubgraph ego_subgraph(const KnnGraph& graph, std::size_t center) {
  if (center >= graph.node_count()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "node " + std::to_string(center) + " of " + std::to_string(graph.node_count()));
  }
  EgoSubgraph ego;
  const auto nbrs = graph.neighbors(center);
  ego.parent_index.reserve(nbrs.size() + 1);
  std::merge(nbrs.begin(), nbrs.end(), &center, &center + 1, std::back_inserter(ego.parent_index));
  ego.center = static_cast<std::size_t>(std::lower_bound(ego.parent_index.begin(), ego.parent_index.end(), center) -
                                        ego.parent_index.begin());

  std::vector<std::vector<std::size_t>> lists(ego.parent_index.size());
  for (std::size_t a = 0; a < ego.parent_index.size(); ++a) {
    const auto parent_nbrs = graph.neighbors(ego.parent_index[a]);
    // Both sequences are sorted, so the intersection comes out sorted in local order.
    std::size_t b = 0;
    for (auto p : parent_nbrs) {
      while (b < ego.parent_index.size() && ego.parent_index[b] < p) ++b;
      if (b == ego.parent_index.size()) break;
      if (ego.parent_index[b] == p) lists[a].push_back(b);
    }
  }
  ego.adjacency = Adjacency(lists);
  return ego;
}

void write_edge_list(const KnnGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& [i, j] : graph.edges()) out << i << ' ' << j << '\n';
}

}  // namespace tabsage
