#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tabsage/dataset.hpp"
#include "tabsage/rng.hpp"

namespace tabsage {

struct ForestConfig {
  std::size_t n_trees = 200;
  std::size_t features_per_split = 3;  // m
  std::uint64_t seed = 42;
  // Test hook: train every tree on the full sample instead of a bootstrap.
  bool bootstrap = true;

  bool operator==(const ForestConfig&) const = default;
};

// Full-depth CART regression tree. Splits maximize the reduction of the sum of
// squared errors; candidate thresholds are midpoints between consecutive
// distinct values of a feature.
class RegressionTree {
 public:
  struct Node {
    static constexpr std::size_t kLeaf = static_cast<std::size_t>(-1);

    std::size_t feature = kLeaf;
    double threshold = 0.0;  // go left when x[feature] <= threshold
    std::size_t left = 0;
    std::size_t right = 0;
    double value = 0.0;          // mean target of the node's samples
    std::size_t samples = 0;
    double sse_decrease = 0.0;   // parent SSE minus children SSE; 0 for leaves

    bool is_leaf() const noexcept { return feature == kLeaf; }
  };

  // `sample` lists training rows, repetitions allowed (a bootstrap draw).
  // At every node `features_per_split` features are drawn without replacement.
  static RegressionTree fit(const RowMatrix& x, std::span<const double> y, std::span<const std::size_t> sample,
                            std::size_t features_per_split, Rng& rng);

  double predict(std::span<const double> row) const;
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t depth() const;
  std::size_t sample_count() const noexcept { return nodes_.empty() ? 0 : nodes_.front().samples; }

  // Per feature, the SSE decrease of its splits divided by the root sample count.
  std::vector<double> impurity_decrease(std::size_t dim) const;

 private:
  std::vector<Node> nodes_;
};

class Forest {
 public:
  Forest() = default;
  Forest(ForestConfig config, std::size_t dim, std::vector<RegressionTree> trees)
      : config_(config), dim_(dim), trees_(std::move(trees)) {}

  const ForestConfig& config() const noexcept { return config_; }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<RegressionTree>& trees() const noexcept { return trees_; }
  bool fitted() const noexcept { return !trees_.empty(); }

  double predict(std::span<const double> row) const;
  // Mean over the first `tree_count` trees only.
  double predict(std::span<const double> row, std::size_t tree_count) const;

 private:
  ForestConfig config_;
  std::size_t dim_ = 0;
  std::vector<RegressionTree> trees_;
};

// Seed of tree `index`; trees never depend on how many others are grown.
std::uint64_t tree_seed(std::uint64_t master, std::size_t index) noexcept;

// Builds trees in parallel (worker_count() threads); the result is independent
// of the thread count.
Forest fit_forest(const RowMatrix& x, std::span<const double> y, const ForestConfig& config);
std::vector<double> predict_forest(const Forest& forest, const RowMatrix& rows);

// Mean decrease in impurity (variance), averaged over trees, normalized to sum 1.
std::vector<double> importance(const Forest& forest);

// Writes `feature,score` rows sorted by descending score.
void write_importance_csv(std::span<const std::string> names, std::span<const double> scores,
                          const std::filesystem::path& path);

// Fold index sets of a shuffled 0..n-1; the first n % folds folds get one extra row.
std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t folds, std::uint64_t seed);

struct CvScore {
  ForestConfig config;
  double mean_r2 = 0.0;

  bool operator==(const CvScore&) const = default;
};

struct CvResult {
  ForestConfig best;
  std::vector<CvScore> scores;  // grid order
};

// Mean validation R² per grid entry; the highest wins, ties go to the earlier entry.
CvResult cross_validate(const RowMatrix& x, std::span<const double> y, std::span<const ForestConfig> grid,
                        std::size_t folds, std::uint64_t seed);

// m ∈ {ceil(sqrt d), ceil(d/3), d} (duplicates dropped) × n_trees ∈ {100, 200, 500}.
std::vector<ForestConfig> default_grid(std::size_t dim, std::uint64_t seed);

}  // namespace tabsage
