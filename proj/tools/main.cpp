#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tabsage/error.hpp"
#include "tabsage/experiment.hpp"

namespace {

using namespace tabsage;

struct Common {
  std::string data = "data/concrete.csv";
  std::string config;
  std::string group = "A";
  std::uint64_t seed = 42;
  bool seed_given = false;
  std::string out = "out";
};

// Settings from --config: {"seed": 42, "columns": {"header in file": "canonical"}}.
struct FileConfig {
  ColumnMapping mapping = ColumnMapping::defaults();
  std::optional<std::uint64_t> seed;
};

FileConfig read_config(const std::string& path) {
  FileConfig config;
  if (path.empty()) return config;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  try {
    const auto j = nlohmann::json::parse(text.str());
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("columns")) {
      for (const auto& [alias, canonical] : j.at("columns").items()) {
        config.mapping.add(alias, canonical.get<std::string>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
  }
  return config;
}

void add_common(CLI::App* cmd, Common& c, bool with_group = true) {
  cmd->add_option("--data", c.data, "Concrete CSV file")->capture_default_str();
  cmd->add_option("--config", c.config, "JSON config with column mapping and seed");
  if (with_group) {
    cmd->add_option("--feature-group", c.group, "Feature group A..E")
        ->check(CLI::IsMember({"A", "B", "C", "D", "E"}))
        ->capture_default_str();
  }
  cmd->add_option_function<std::uint64_t>(
         "--seed", [&c](std::uint64_t s) { c.seed = s, c.seed_given = true; }, "Split and model seed (default 42)");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

std::uint64_t effective_seed(const Common& c, const FileConfig& f) {
  if (c.seed_given) return c.seed;
  return f.seed.value_or(c.seed);
}

void print_metrics(const char* name, const MetricsReport& m) {
  std::printf("%-10s R2=%.4f MAE=%.3f RMSE=%.3f MAPE=%.2f%% (n=%zu)\n", name, m.r2, m.mae, m.rmse, m.mape, m.n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GraphSAGE and random-forest regressors for concrete compressive strength"};
  app.require_subcommand(1);

  Common common;
  std::size_t k = 3;
  std::string task = "node";
  std::size_t max_epochs = 2000;
  bool dump_graph = false;
  std::size_t k_min = 2;
  std::size_t k_max = 30;
  std::string grid_file;
  std::size_t folds = 10;
  std::string results_dir;

  auto* train = app.add_subcommand("train", "Train one GraphSAGE model");
  add_common(train, common);
  train->add_option("--k", k, "Neighbors per node")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--task", task, "node or graph")->check(CLI::IsMember({"node", "graph"}))->capture_default_str();
  train->add_option("--max-epochs", max_epochs, "Epoch limit")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_flag("--dump-graph", dump_graph, "Also write the k-NN edge list");

  auto* sweep = app.add_subcommand("sweep", "Train one model per neighborhood size");
  add_common(sweep, common);
  sweep->add_option("--k-min", k_min, "Smallest k")->check(CLI::PositiveNumber)->capture_default_str();
  sweep->add_option("--k-max", k_max, "Largest k")->check(CLI::PositiveNumber)->capture_default_str();
  sweep->add_option("--task", task, "node or graph")->check(CLI::IsMember({"node", "graph"}))->capture_default_str();
  sweep->add_option("--max-epochs", max_epochs, "Epoch limit")->check(CLI::PositiveNumber)->capture_default_str();

  auto* rf = app.add_subcommand("rf", "Tune and evaluate the random-forest baseline");
  add_common(rf, common);
  rf->add_option("--grid-file", grid_file, "JSON array of {n_trees, features_per_split}")->check(CLI::ExistingFile);
  rf->add_option("--folds", folds, "Cross-validation folds")->check(CLI::Range(2, 1000))->capture_default_str();

  auto* compare = app.add_subcommand("compare", "Combine results.json files into one table");
  compare->add_option("--results", results_dir, "Directory searched recursively for results.json")->required();
  compare->add_option("--out", common.out, "Output directory (default: the results directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed() || sweep->parsed()) {
      const auto file = read_config(common.config);
      TrainRequest request;
      request.data = common.data;
      request.mapping = file.mapping;
      request.feature_group = common.group[0];
      request.k = k;
      request.task = parse_task(task);
      request.seed = effective_seed(common, file);
      request.train.max_epochs = max_epochs;
      request.dump_graph = dump_graph;
      if (train->parsed()) {
        const auto r = cmd_train(request, common.out);
        std::printf("%s: best epoch %zu, stopped at %zu (%s), %.1f s\n", result_label(r).c_str(), r.best_epoch,
                    r.stop_epoch, r.stop_reason.c_str(), r.seconds);
        for (const char* split : {"train", "validation", "test"}) print_metrics(split, r.metrics.at(split));
      } else {
        SweepRequest sweep_request{request, k_min, k_max};
        const auto result = cmd_sweep(sweep_request, common.out);
        for (const auto& row : result.rows) {
          std::printf("k=%-3zu R2=%.4f MAE=%.3f RMSE=%.3f MAPE=%.2f%%\n", row.k, row.test.r2, row.test.mae,
                      row.test.rmse, row.test.mape);
        }
        std::printf("best k: %zu\n", result.best_k);
      }
    } else if (rf->parsed()) {
      const auto file = read_config(common.config);
      RfRequest request;
      request.data = common.data;
      request.mapping = file.mapping;
      request.feature_group = common.group[0];
      request.seed = effective_seed(common, file);
      request.folds = folds;
      if (!grid_file.empty()) request.grid = load_grid(grid_file, request.seed);
      const auto r = cmd_rf(request, common.out);
      std::printf("%s: n_trees=%zu features_per_split=%zu, %.1f s\n", result_label(r).c_str(), r.config.n_trees,
                  r.config.features_per_split, r.seconds);
      print_metrics("train", r.metrics.at("train"));
      print_metrics("test", r.metrics.at("test"));
    } else if (compare->parsed()) {
      const std::string out = compare->count("--out") ? common.out : results_dir;
      const auto report = cmd_compare(results_dir, out);
      for (const auto& r : report.results) {
        const auto& m = r.metrics.at("test");
        std::printf("%-14s R2=%.4f MAE=%.3f RMSE=%.3f MAPE=%.2f%%\n", result_label(r).c_str(), m.r2, m.mae, m.rmse,
                    m.mape);
      }
      if (!report.best_gnn_label.empty()) std::printf("best GNN run: %s\n", report.best_gnn_label.c_str());
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "tabsage: error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tabsage: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
