#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tabsage/dataset.hpp"
#include "tabsage/forest.hpp"
#include "tabsage/knn_graph.hpp"
#include "tabsage/metrics.hpp"
#include "tabsage/sage_model.hpp"
#include "tabsage/trainer.hpp"

// Batch experiments behind the command-line tool: GNN training, the
// neighborhood sweep, the forest baseline and the combined comparison. Every
// run is reproducible from the configuration echoed in its results JSON.
namespace tabsage {

inline constexpr int kResultsSchemaVersion = 1;

struct ExperimentConfig {
  std::string model = "gnn";  // "gnn" or "rf"
  std::string data;
  char feature_group = 'A';
  std::uint64_t seed = 42;  // split seed; also the default model seed

  // gnn
  std::string task = "node";
  std::size_t k = 3;
  std::uint64_t model_seed = 42;  // init and dropout streams
  double learning_rate = 1e-3;
  std::size_t max_epochs = 2000;
  std::size_t patience = 30;
  double min_delta = 1e-4;
  std::size_t hidden = 128;
  std::size_t depth = 3;
  double dropout = 0.25;

  // rf
  std::size_t n_trees = 0;
  std::size_t features_per_split = 0;
  std::size_t cv_folds = 10;

  bool operator==(const ExperimentConfig&) const = default;
};

struct ExperimentResult {
  int schema_version = kResultsSchemaVersion;
  ExperimentConfig config;
  // keys: train, validation, test, holdout (validation ∪ test)
  std::map<std::string, MetricsReport> metrics;

  // gnn
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;
  std::string stop_reason;
  std::string history_file;
  std::string checkpoint_file;

  // rf
  std::vector<CvScore> cv_scores;
  std::string importance_file;

  std::string predictions_file;
  double seconds = 0.0;  // wall time; the only field that varies between identical runs

  bool operator==(const ExperimentResult&) const = default;
};

std::string result_to_json(const ExperimentResult& result);
ExperimentResult result_from_json(std::string_view text);
ExperimentResult load_result(const std::filesystem::path& path);

// Short row label such as "node-A-k3" or "rf-A".
std::string result_label(const ExperimentResult& result);

struct TrainRequest {
  std::filesystem::path data;
  ColumnMapping mapping = ColumnMapping::defaults();
  char feature_group = 'A';
  std::size_t k = 3;
  Task task = Task::node;
  std::uint64_t seed = 42;
  std::optional<std::uint64_t> model_seed;  // defaults to seed
  TrainConfig train;
  SageConfig model;
  bool dump_graph = false;
  TrainHooks hooks;
};

// In-memory outcome of one GNN run.
struct GnnRun {
  ExperimentResult result;
  TrainResult trained;
  std::vector<double> predictions;  // MPa, every node
  SplitMasks masks;
};

// Loads, builds the graph, trains and evaluates; writes nothing.
GnnRun run_gnn(const TrainRequest& request);
// Same, on an already prepared table.
GnnRun run_gnn(const TrainRequest& request, const FeatureTable& table, const RawDataset& raw);

// Writes results.json, history.csv, checkpoint.json, predictions.csv (and
// graph.edges with dump_graph) into out_dir.
ExperimentResult cmd_train(const TrainRequest& request, const std::filesystem::path& out_dir);

struct SweepRequest {
  TrainRequest base;
  std::size_t k_min = 2;
  std::size_t k_max = 30;
};

struct SweepRow {
  std::size_t k = 0;
  std::uint64_t model_seed = 0;
  MetricsReport test;
  std::size_t stop_epoch = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ascending k
  std::size_t best_k = 0;      // argmax test R²; the smaller k on ties
};

// One run per k in [k_min, k_max]; the split uses the base seed, the model
// seed of point k is seed XOR k. Points run concurrently; output is ordered by k.
SweepResult run_sweep(const SweepRequest& request);
// Also writes sweep.csv and sweep.json into out_dir.
SweepResult cmd_sweep(const SweepRequest& request, const std::filesystem::path& out_dir);

struct RfRequest {
  std::filesystem::path data;
  ColumnMapping mapping = ColumnMapping::defaults();
  char feature_group = 'A';
  std::uint64_t seed = 42;
  std::vector<ForestConfig> grid;  // empty: default_grid
  std::size_t folds = 10;
};

struct RfRun {
  ExperimentResult result;
  Forest forest;
  std::vector<std::string> feature_names;
  std::vector<double> importance;
  std::vector<double> predictions;  // MPa, every record
  std::vector<double> actual;       // MPa, every record
  SplitMasks masks;
};

// Tunes on the 70% training split by k-fold CV, refits the best config and
// scores the 30% holdout. Uses raw (unnormalized) group features.
RfRun run_rf(const RfRequest& request);
// Writes results.json, importance.csv and predictions.csv into out_dir.
ExperimentResult cmd_rf(const RfRequest& request, const std::filesystem::path& out_dir);

// Reads a grid file: a JSON array of {"n_trees": N, "features_per_split": M}.
std::vector<ForestConfig> load_grid(const std::filesystem::path& path, std::uint64_t seed);

struct CompareReport {
  std::vector<ExperimentResult> results;  // sorted by label
  std::string best_gnn_label;             // highest test R² among GNN runs
};

// |predicted - actual| <= 10% of |actual|, boundary included.
bool within_ten_percent(double predicted, double actual) noexcept;

// Scans results_dir recursively for results.json files (at least 2); writes
// comparison.csv and holdout_predictions.csv into out_dir.
CompareReport cmd_compare(const std::filesystem::path& results_dir, const std::filesystem::path& out_dir);

// Writes `content` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace tabsage
