#include "tabsage/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tabsage/error.hpp"
#include "tabsage/metrics.hpp"
#include "tabsage/parallel.hpp"

namespace tabsage {

namespace {

struct Split {
  std::size_t feature = RegressionTree::Node::kLeaf;
  double threshold = 0.0;
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const RowMatrix& x, std::span<const double> y, std::size_t m, Rng& rng,
              std::vector<RegressionTree::Node>& nodes)
      : x_(x), y_(y), m_(m), rng_(rng), nodes_(nodes), features_(x.cols()) {
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  std::size_t build(std::vector<std::size_t> rows) {
    const std::size_t id = nodes_.size();
    nodes_.emplace_back();
    double total = 0.0;
    for (auto r : rows) total += y_[r];
    nodes_[id].samples = rows.size();
    nodes_[id].value = total / static_cast<double>(rows.size());

    if (rows.size() < 2 || constant_target(rows)) return id;
    const auto split = best_split(rows, total);
    if (split.feature == RegressionTree::Node::kLeaf) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (auto r : rows) (x_(r, split.feature) <= split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();

    nodes_[id].feature = split.feature;
    nodes_[id].threshold = split.threshold;
    nodes_[id].sse_decrease = split.gain;
    const std::size_t l = build(std::move(left));
    const std::size_t r = build(std::move(right));
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

 private:
  bool constant_target(const std::vector<std::size_t>& rows) const {
    const double first = y_[rows.front()];
    return std::all_of(rows.begin(), rows.end(), [&](std::size_t r) { return y_[r] == first; });
  }

  // Sampled features in ascending order, so that strict improvement keeps the
  // lower feature index (and the lower threshold) on ties.
  std::vector<std::size_t> sample_features() {
    for (std::size_t i = 0; i < m_; ++i) std::swap(features_[i], features_[i + rng_.below(features_.size() - i)]);
    std::vector<std::size_t> chosen(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(m_));
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }

  Split best_split(const std::vector<std::size_t>& rows, double total) {
    const std::size_t n = rows.size();
    double parent_sse = 0.0;
    const double mean = total / static_cast<double>(n);
    for (auto r : rows) parent_sse += (y_[r] - mean) * (y_[r] - mean);
    // Gains within rounding noise of each other (or of zero) count as equal.
    const double tolerance = 1e-12 * parent_sse;

    Split best;
    std::vector<std::pair<double, double>> column(n);
    for (auto f : sample_features()) {
      for (std::size_t i = 0; i < n; ++i) column[i] = {x_(rows[i], f), y_[rows[i]]};
      std::sort(column.begin(), column.end());
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += column[i].second;
        if (column[i].first == column[i + 1].first) continue;
        const double n_left = static_cast<double>(i + 1);
        const double n_right = static_cast<double>(n - i - 1);
        const double diff = left_sum / n_left - (total - left_sum) / n_right;
        // SSE(parent) - SSE(left) - SSE(right) = n_l n_r / n (mean_l - mean_r)^2
        const double gain = n_left * n_right / static_cast<double>(n) * diff * diff;
        if (gain > tolerance && gain > best.gain + tolerance) {
          best.feature = f;
          best.threshold = 0.5 * (column[i].first + column[i + 1].first);
          best.gain = gain;
        }
      }
    }
    return best;
  }

  const RowMatrix& x_;
  std::span<const double> y_;
  std::size_t m_;
  Rng& rng_;
  std::vector<RegressionTree::Node>& nodes_;
  std::vector<std::size_t> features_;
};

void check_dim(std::span<const double> row, std::size_t dim) {
  if (row.size() != dim) {
    throw Error(ErrorCode::DimensionMismatch, "row has " + std::to_string(row.size()) + " features, forest expects " +
                                                  std::to_string(dim));
  }
}

}  // namespace

RegressionTree RegressionTree::fit(const RowMatrix& x, std::span<const double> y, std::span<const std::size_t> sample,
                                   std::size_t features_per_split, Rng& rng) {
  if (sample.empty()) throw Error(ErrorCode::EmptyTrainSet, "tree sample is empty");
  if (features_per_split < 1 || features_per_split > x.cols()) {
    throw Error(ErrorCode::InvalidConfig, "features per split must lie in [1, " + std::to_string(x.cols()) + "]");
  }
  RegressionTree tree;
  TreeBuilder builder(x, y, features_per_split, rng, tree.nodes_);
  builder.build(std::vector<std::size_t>(sample.begin(), sample.end()));
  return tree;
}

double RegressionTree::predict(std::span<const double> row) const {
  std::size_t id = 0;
  while (!nodes_[id].is_leaf()) id = row[nodes_[id].feature] <= nodes_[id].threshold ? nodes_[id].left : nodes_[id].right;
  return nodes_[id].value;
}

std::size_t RegressionTree::depth() const {
  std::vector<std::size_t> level(nodes_.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    deepest = std::max(deepest, level[id]);
    if (!nodes_[id].is_leaf()) {
      level[nodes_[id].left] = level[id] + 1;
      level[nodes_[id].right] = level[id] + 1;
    }
  }
  return deepest;
}

std::vector<double> RegressionTree::impurity_decrease(std::size_t dim) const {
  std::vector<double> out(dim, 0.0);
  const double n = static_cast<double>(sample_count());
  for (const auto& node : nodes_) {
    if (!node.is_leaf()) out[node.feature] += node.sse_decrease / n;
  }
  return out;
}

double Forest::predict(std::span<const double> row) const { return predict(row, trees_.size()); }

double Forest::predict(std::span<const double> row, std::size_t tree_count) const {
  if (!fitted()) throw Error(ErrorCode::UnfittedForest, "predict on an unfitted forest");
  check_dim(row, dim_);
  tree_count = std::min(tree_count, trees_.size());
  double total = 0.0;
  for (std::size_t t = 0; t < tree_count; ++t) total += trees_[t].predict(row);
  return total / static_cast<double>(tree_count);
}

std::uint64_t tree_seed(std::uint64_t master, std::size_t index) noexcept {
  return derive_seed(derive_seed(master, streams::forest), static_cast<std::uint64_t>(index));
}

Forest fit_forest(const RowMatrix& x, std::span<const double> y, const ForestConfig& config) {
  if (x.rows() < 2 || y.size() != x.rows()) {
    throw Error(ErrorCode::EmptyTrainSet, "forest needs >= 2 training rows with matching targets");
  }
  if (config.n_trees < 1) throw Error(ErrorCode::InvalidConfig, "n_trees must be >= 1");
  if (config.features_per_split < 1 || config.features_per_split > x.cols()) {
    throw Error(ErrorCode::InvalidConfig, "features per split must lie in [1, " + std::to_string(x.cols()) + "]");
  }
  std::vector<RegressionTree> trees(config.n_trees);
  const std::size_t n = x.rows();
  parallel_for(config.n_trees, [&](std::size_t t) {
    Rng rng(tree_seed(config.seed, t));
    std::vector<std::size_t> sample(n);
    if (config.bootstrap) {
      for (auto& s : sample) s = rng.below(n);
    } else {
      std::iota(sample.begin(), sample.end(), std::size_t{0});
    }
    trees[t] = RegressionTree::fit(x, y, sample, config.features_per_split, rng);
  });
  return Forest(config, x.cols(), std::move(trees));
}

std::vector<double> predict_forest(const Forest& forest, const RowMatrix& rows) {
  std::vector<double> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) out[r] = forest.predict(rows.row(r));
  return out;
}

std::vector<double> importance(const Forest& forest) {
  if (!forest.fitted()) throw Error(ErrorCode::UnfittedForest, "importance of an unfitted forest");
  std::vector<double> scores(forest.dim(), 0.0);
  for (const auto& tree : forest.trees()) {
    const auto per_tree = tree.impurity_decrease(forest.dim());
    for (std::size_t f = 0; f < scores.size(); ++f) scores[f] += per_tree[f];
  }
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  if (total > 0.0) {
    for (auto& s : scores) s /= total;
  }
  return scores;
}

void write_importance_csv(std::span<const std::string> names, std::span<const double> scores,
                          const std::filesystem::path& path) {
  if (names.size() != scores.size()) throw Error(ErrorCode::LengthMismatch, "importance names and scores differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "feature,score\n";
  char buf[64];
  for (auto i : order) {
    std::snprintf(buf, sizeof buf, "%.17g", scores[i]);
    out << names[i] << ',' << buf << '\n';
  }
}

std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2 || n < folds) {
    throw Error(ErrorCode::TooFewRows, std::to_string(n) + " rows cannot form " + std::to_string(folds) + " folds");
  }
  Rng rng(derive_seed(seed, streams::folds));
  const auto order = permutation(n, rng);
  std::vector<std::vector<std::size_t>> out(folds);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t size = n / folds + (f < n % folds ? 1 : 0);
    out[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(out[f].begin(), out[f].end());
    pos += size;
  }
  return out;
}

CvResult cross_validate(const RowMatrix& x, std::span<const double> y, std::span<const ForestConfig> grid,
                        std::size_t folds, std::uint64_t seed) {
  if (grid.empty()) throw Error(ErrorCode::InvalidConfig, "empty hyperparameter grid");
  const auto fold_rows = kfold(x.rows(), folds, seed);

  std::vector<double> r2_sum(grid.size(), 0.0);
  // Configs differing only in tree count share one forest: the first t trees
  // of a larger forest are exactly the forest of t trees.
  std::vector<bool> done(grid.size(), false);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (done[g]) continue;
    std::vector<std::size_t> family;
    std::size_t max_trees = 0;
    for (std::size_t h = g; h < grid.size(); ++h) {
      if (!done[h] && grid[h].features_per_split == grid[g].features_per_split && grid[h].seed == grid[g].seed &&
          grid[h].bootstrap == grid[g].bootstrap) {
        family.push_back(h);
        done[h] = true;
        max_trees = std::max(max_trees, grid[h].n_trees);
      }
    }
    ForestConfig big = grid[g];
    big.n_trees = max_trees;

    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<std::size_t> train_rows;
      for (std::size_t o = 0; o < folds; ++o) {
        if (o != f) train_rows.insert(train_rows.end(), fold_rows[o].begin(), fold_rows[o].end());
      }
      std::sort(train_rows.begin(), train_rows.end());
      std::vector<double> train_y;
      for (auto r : train_rows) train_y.push_back(y[r]);
      const auto forest = fit_forest(x.select_rows(train_rows), train_y, big);

      std::vector<double> actual;
      for (auto r : fold_rows[f]) actual.push_back(y[r]);
      for (auto h : family) {
        std::vector<double> pred;
        for (auto r : fold_rows[f]) pred.push_back(forest.predict(x.row(r), grid[h].n_trees));
        r2_sum[h] += r_squared(pred, actual);
      }
    }
  }

  CvResult result;
  std::size_t best = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    result.scores.push_back({grid[g], r2_sum[g] / static_cast<double>(folds)});
    if (result.scores[g].mean_r2 > result.scores[best].mean_r2) best = g;
  }
  result.best = grid[best];
  return result;
}

std::vector<ForestConfig> default_grid(std::size_t dim, std::uint64_t seed) {
  std::vector<std::size_t> ms;
  for (std::size_t m : {static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(dim)))), (dim + 2) / 3, dim}) {
    m = std::clamp<std::size_t>(m, 1, dim);
    if (std::find(ms.begin(), ms.end(), m) == ms.end()) ms.push_back(m);
  }
  std::vector<ForestConfig> grid;
  for (auto m : ms) {
    for (std::size_t trees : {100u, 200u, 500u}) grid.push_back({trees, m, seed, true});
  }
  return grid;
}

}  // namespace tabsage
