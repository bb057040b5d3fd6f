#include "tabsage/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "tabsage/error.hpp"
#include "tabsage/parallel.hpp"

namespace tabsage {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kResultsFormat = "tabsage.results";

json metrics_to_json(const MetricsReport& m) {
  return {{"r2", m.r2}, {"mae", m.mae}, {"rmse", m.rmse}, {"mape", m.mape}, {"n", m.n}};
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport m;
  m.r2 = j.at("r2").get<double>();
  m.mae = j.at("mae").get<double>();
  m.rmse = j.at("rmse").get<double>();
  m.mape = j.at("mape").get<double>();
  m.n = j.at("n").get<std::size_t>();
  return m;
}

json config_to_json(const ExperimentConfig& c) {
  json j = {{"model", c.model}, {"data", c.data}, {"feature_group", std::string(1, c.feature_group)}, {"seed", c.seed}};
  if (c.model == "gnn") {
    j["task"] = c.task;
    j["k"] = c.k;
    j["model_seed"] = c.model_seed;
    j["learning_rate"] = c.learning_rate;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["min_delta"] = c.min_delta;
    j["hidden"] = c.hidden;
    j["depth"] = c.depth;
    j["dropout"] = c.dropout;
  } else {
    j["n_trees"] = c.n_trees;
    j["features_per_split"] = c.features_per_split;
    j["cv_folds"] = c.cv_folds;
  }
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.model = j.at("model").get<std::string>();
  c.data = j.at("data").get<std::string>();
  const auto group = j.at("feature_group").get<std::string>();
  if (group.size() != 1) throw Error(ErrorCode::CheckpointFormat, "feature_group must be one letter");
  c.feature_group = group[0];
  c.seed = j.at("seed").get<std::uint64_t>();
  if (c.model == "gnn") {
    c.task = j.at("task").get<std::string>();
    c.k = j.at("k").get<std::size_t>();
    c.model_seed = j.at("model_seed").get<std::uint64_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.min_delta = j.at("min_delta").get<double>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.depth = j.at("depth").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
  } else if (c.model == "rf") {
    c.n_trees = j.at("n_trees").get<std::size_t>();
    c.features_per_split = j.at("features_per_split").get<std::size_t>();
    c.cv_folds = j.at("cv_folds").get<std::size_t>();
  } else {
    throw Error(ErrorCode::CheckpointFormat, "unknown model kind '" + c.model + "'");
  }
  return c;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string split_name(const SplitMasks& masks, std::size_t i) {
  if (std::binary_search(masks.train.begin(), masks.train.end(), i)) return "train";
  if (std::binary_search(masks.validation.begin(), masks.validation.end(), i)) return "validation";
  return "test";
}

std::string predictions_csv(const SplitMasks& masks, std::span<const double> actual, std::span<const double> predicted) {
  std::string out = "index,split,actual_mpa,predicted_mpa\n";
  for (std::size_t i = 0; i < actual.size(); ++i) {
    out += std::to_string(i) + ',' + split_name(masks, i) + ',' + format_double(actual[i]) + ',' +
           format_double(predicted[i]) + '\n';
  }
  return out;
}

MetricsReport metrics_on(std::span<const double> predicted, std::span<const double> actual,
                         std::span<const std::size_t> mask) {
  std::vector<double> p;
  std::vector<double> a;
  p.reserve(mask.size());
  a.reserve(mask.size());
  for (auto i : mask) {
    p.push_back(predicted[i]);
    a.push_back(actual[i]);
  }
  return compute_metrics(p, a);
}

std::map<std::string, MetricsReport> split_metrics(const SplitMasks& masks, std::span<const double> predicted,
                                                   std::span<const double> actual) {
  return {{"train", metrics_on(predicted, actual, masks.train)},
          {"validation", metrics_on(predicted, actual, masks.validation)},
          {"test", metrics_on(predicted, actual, masks.test)},
          {"holdout", metrics_on(predicted, actual, masks.holdout())}};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create directory " + dir.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs a file writer against a temporary sibling, then renames it into place.
template <class Writer>
void write_atomic_with(const fs::path& path, Writer&& writer) {
  fs::path tmp = path;
  tmp += ".tmp";
  writer(tmp);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void check_k(std::size_t k, std::size_t n) {
  if (k < 1 || k >= n) {
    throw Error(ErrorCode::KTooLarge, "k must satisfy 1 <= k < " + std::to_string(n) + ", got " + std::to_string(k));
  }
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view content) {
  write_atomic_with(path, [&](const fs::path& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
  });
}

std::string result_to_json(const ExperimentResult& r) {
  json metrics = json::object();
  for (const auto& [name, m] : r.metrics) metrics[name] = metrics_to_json(m);
  json j = {{"format", kResultsFormat},
            {"schema_version", r.schema_version},
            {"config", config_to_json(r.config)},
            {"metrics", metrics},
            {"predictions_file", r.predictions_file}};
  if (r.config.model == "gnn") {
    j["history"] = {{"file", r.history_file},
                    {"best_epoch", r.best_epoch},
                    {"stop_epoch", r.stop_epoch},
                    {"stop_reason", r.stop_reason}};
    j["checkpoint_file"] = r.checkpoint_file;
  } else {
    json cv = json::array();
    for (const auto& s : r.cv_scores) {
      cv.push_back({{"n_trees", s.config.n_trees},
                    {"features_per_split", s.config.features_per_split},
                    {"mean_r2", s.mean_r2}});
    }
    j["cv"] = cv;
    j["importance_file"] = r.importance_file;
  }
  j["timing"] = {{"seconds", r.seconds}};
  return j.dump(2) + "\n";
}

ExperimentResult result_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    if (j.at("format").get<std::string>() != kResultsFormat) {
      throw Error(ErrorCode::CheckpointFormat, "not a results document");
    }
    ExperimentResult r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kResultsSchemaVersion) {
      throw Error(ErrorCode::CheckpointFormat, "unsupported results schema_version " + std::to_string(r.schema_version));
    }
    r.config = config_from_json(j.at("config"));
    for (const auto& [name, m] : j.at("metrics").items()) r.metrics[name] = metrics_from_json(m);
    r.predictions_file = j.at("predictions_file").get<std::string>();
    if (r.config.model == "gnn") {
      const auto& h = j.at("history");
      r.history_file = h.at("file").get<std::string>();
      r.best_epoch = h.at("best_epoch").get<std::size_t>();
      r.stop_epoch = h.at("stop_epoch").get<std::size_t>();
      r.stop_reason = h.at("stop_reason").get<std::string>();
      r.checkpoint_file = j.at("checkpoint_file").get<std::string>();
    } else {
      for (const auto& s : j.at("cv")) {
        CvScore score;
        score.config.n_trees = s.at("n_trees").get<std::size_t>();
        score.config.features_per_split = s.at("features_per_split").get<std::size_t>();
        score.config.seed = r.config.seed;
        score.mean_r2 = s.at("mean_r2").get<double>();
        r.cv_scores.push_back(score);
      }
      r.importance_file = j.at("importance_file").get<std::string>();
    }
    r.seconds = j.at("timing").at("seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CheckpointFormat, std::string("malformed results JSON: ") + e.what());
  }
}

ExperimentResult load_result(const fs::path& path) {
  try {
    return result_from_json(read_text(path));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string result_label(const ExperimentResult& r) {
  const std::string group(1, r.config.feature_group);
  if (r.config.model == "rf") return "rf-" + group;
  return r.config.task + "-" + group + "-k" + std::to_string(r.config.k);
}

GnnRun run_gnn(const TrainRequest& request) {
  const auto raw = load_csv(request.data, request.mapping);
  const auto table = make_feature_table(raw, request.feature_group);
  return run_gnn(request, table, raw);
}

GnnRun run_gnn(const TrainRequest& request, const FeatureTable& table, const RawDataset&) {
  const auto start = std::chrono::steady_clock::now();
  check_k(request.k, table.size());
  const std::uint64_t model_seed = request.model_seed.value_or(request.seed);

  TrainConfig train_config = request.train;
  train_config.seed = model_seed;
  train_config.validate();

  GnnRun run;
  run.masks = split(table.size(), request.seed);
  const auto graph = build_knn_graph(table.features, request.k);
  const auto input = GraphInput::make(request.task, graph, table.features);

  auto model = init_model(table.dim(), request.model, model_seed);
  const TrainData data{input, table.target, table.strength, run.masks, table.normalizer};
  run.trained = train(std::move(model), data, train_config, request.hooks);
  run.predictions = table.normalizer.denormalize_target(predict(run.trained.model, input));

  auto& r = run.result;
  r.config.model = "gnn";
  r.config.data = request.data.string();
  r.config.feature_group = table.group;
  r.config.seed = request.seed;
  r.config.task = std::string(to_string(request.task));
  r.config.k = request.k;
  r.config.model_seed = model_seed;
  r.config.learning_rate = train_config.adam.learning_rate;
  r.config.max_epochs = train_config.max_epochs;
  r.config.patience = train_config.patience;
  r.config.min_delta = train_config.min_delta;
  r.config.hidden = request.model.hidden;
  r.config.depth = request.model.depth;
  r.config.dropout = request.model.dropout;
  r.metrics = split_metrics(run.masks, run.predictions, table.strength);
  r.best_epoch = run.trained.history.best_epoch;
  r.stop_epoch = run.trained.history.stop_epoch;
  r.stop_reason = std::string(to_string(run.trained.history.stop_reason));
  r.seconds = seconds_since(start);
  return run;
}

ExperimentResult cmd_train(const TrainRequest& request, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  const auto raw = load_csv(request.data, request.mapping);
  const auto table = make_feature_table(raw, request.feature_group);
  check_k(request.k, table.size());
  auto run = run_gnn(request, table, raw);

  ensure_dir(out_dir);
  auto& r = run.result;
  r.history_file = "history.csv";
  r.checkpoint_file = "checkpoint.json";
  r.predictions_file = "predictions.csv";

  write_atomic_with(out_dir / r.history_file,
                    [&](const fs::path& tmp) { write_history_csv(run.trained.history, tmp); });
  const Checkpoint checkpoint{run.trained.model.clone(), table.normalizer,
                              RunRecord{table.group, request.k, request.task, r.config.model_seed}};
  write_file_atomic(out_dir / r.checkpoint_file, checkpoint_to_json(checkpoint));
  write_file_atomic(out_dir / r.predictions_file, predictions_csv(run.masks, table.strength, run.predictions));
  if (request.dump_graph) {
    const auto graph = build_knn_graph(table.features, request.k);
    write_atomic_with(out_dir / "graph.edges", [&](const fs::path& tmp) { write_edge_list(graph, tmp); });
  }
  r.seconds = seconds_since(start);
  write_file_atomic(out_dir / "results.json", result_to_json(r));
  return r;
}

SweepResult run_sweep(const SweepRequest& request) {
  if (request.k_min < 1 || request.k_min > request.k_max) {
    throw Error(ErrorCode::InvalidConfig, "sweep needs 1 <= k-min <= k-max, got " + std::to_string(request.k_min) +
                                              ".." + std::to_string(request.k_max));
  }
  const auto raw = load_csv(request.base.data, request.base.mapping);
  const auto table = make_feature_table(raw, request.base.feature_group);
  check_k(request.k_max, table.size());

  const std::size_t count = request.k_max - request.k_min + 1;
  SweepResult result;
  result.rows.resize(count);
  parallel_for(count, [&](std::size_t i) {
    TrainRequest point = request.base;
    point.k = request.k_min + i;
    point.model_seed = request.base.seed ^ static_cast<std::uint64_t>(point.k);
    point.hooks = {};
    const auto run = run_gnn(point, table, raw);
    auto& row = result.rows[i];
    row.k = point.k;
    row.model_seed = *point.model_seed;
    row.test = run.result.metrics.at("test");
    row.stop_epoch = run.result.stop_epoch;
  });

  double best = -std::numeric_limits<double>::infinity();
  for (const auto& row : result.rows) {
    if (row.test.r2 > best) {
      best = row.test.r2;
      result.best_k = row.k;
    }
  }
  return result;
}

SweepResult cmd_sweep(const SweepRequest& request, const fs::path& out_dir) {
  auto result = run_sweep(request);
  ensure_dir(out_dir);

  std::string csv = "k,r2,mae,rmse,mape\n";
  json rows = json::array();
  for (const auto& row : result.rows) {
    csv += std::to_string(row.k) + ',' + format_double(row.test.r2) + ',' + format_double(row.test.mae) + ',' +
           format_double(row.test.rmse) + ',' + format_double(row.test.mape) + '\n';
    rows.push_back({{"k", row.k}, {"model_seed", row.model_seed}, {"stop_epoch", row.stop_epoch},
                    {"test", metrics_to_json(row.test)}});
  }
  const json summary = {{"format", "tabsage.sweep"},
                        {"schema_version", kResultsSchemaVersion},
                        {"data", request.base.data.string()},
                        {"feature_group", std::string(1, request.base.feature_group)},
                        {"task", std::string(to_string(request.base.task))},
                        {"seed", request.base.seed},
                        {"k_min", request.k_min},
                        {"k_max", request.k_max},
                        {"best_k", result.best_k},
                        {"rows", rows}};
  write_file_atomic(out_dir / "sweep.csv", csv);
  write_file_atomic(out_dir / "sweep.json", summary.dump(2) + "\n");
  return result;
}

std::vector<ForestConfig> load_grid(const fs::path& path, std::uint64_t seed) {
  const auto text = read_text(path);
  std::vector<ForestConfig> grid;
  try {
    const auto j = json::parse(text);
    if (!j.is_array()) throw Error(ErrorCode::InvalidConfig, path.string() + ": grid must be a JSON array");
    for (const auto& entry : j) {
      ForestConfig c;
      c.n_trees = entry.at("n_trees").get<std::size_t>();
      c.features_per_split = entry.at("features_per_split").get<std::size_t>();
      c.seed = seed;
      grid.push_back(c);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  if (grid.empty()) throw Error(ErrorCode::InvalidConfig, path.string() + ": grid is empty");
  return grid;
}

RfRun run_rf(const RfRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  const auto raw = load_csv(request.data, request.mapping);
  const auto group = feature_group(request.feature_group);
  const auto engineered = apply_feature_group(raw, group);

  RfRun run;
  run.masks = split(raw.strength.size(), request.seed);
  run.feature_names = engineered.names;
  const auto& x = engineered.values;

  const auto x_train = x.select_rows(run.masks.train);
  std::vector<double> y_train;
  y_train.reserve(run.masks.train.size());
  for (auto i : run.masks.train) y_train.push_back(raw.strength[i]);

  auto grid = request.grid.empty() ? default_grid(x.cols(), request.seed) : request.grid;
  for (auto& c : grid) c.seed = request.seed;
  const auto cv = cross_validate(x_train, y_train, grid, request.folds, request.seed);

  run.forest = fit_forest(x_train, y_train, cv.best);
  run.importance = importance(run.forest);
  run.predictions = predict_forest(run.forest, x);
  run.actual = raw.strength;

  auto& r = run.result;
  r.config.model = "rf";
  r.config.data = request.data.string();
  r.config.feature_group = group.tag;
  r.config.seed = request.seed;
  r.config.n_trees = cv.best.n_trees;
  r.config.features_per_split = cv.best.features_per_split;
  r.config.cv_folds = request.folds;
  const auto holdout = run.masks.holdout();
  r.metrics = {{"train", metrics_on(run.predictions, raw.strength, run.masks.train)},
               {"test", metrics_on(run.predictions, raw.strength, holdout)},
               {"holdout", metrics_on(run.predictions, raw.strength, holdout)}};
  r.cv_scores = cv.scores;
  r.seconds = seconds_since(start);
  return run;
}

ExperimentResult cmd_rf(const RfRequest& request, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  auto run = run_rf(request);
  ensure_dir(out_dir);
  auto& r = run.result;
  r.importance_file = "importance.csv";
  r.predictions_file = "predictions.csv";
  write_atomic_with(out_dir / r.importance_file,
                    [&](const fs::path& tmp) { write_importance_csv(run.feature_names, run.importance, tmp); });

  write_file_atomic(out_dir / r.predictions_file, predictions_csv(run.masks, run.actual, run.predictions));
  r.seconds = seconds_since(start);
  write_file_atomic(out_dir / "results.json", result_to_json(r));
  return r;
}

bool within_ten_percent(double predicted, double actual) noexcept {
  return 10.0 * std::abs(predicted - actual) <= std::abs(actual);
}

namespace {

struct PredictionRow {
  std::size_t index = 0;
  std::string split;
  double actual = 0.0;
  double predicted = 0.0;
};

std::vector<PredictionRow> read_predictions(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("index,split,actual_mpa,predicted_mpa", 0) != 0) {
    throw Error(ErrorCode::SchemaMismatch, path.string() + ": unexpected predictions header");
  }
  std::vector<PredictionRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell[4];
    for (auto& c : cell) std::getline(fields, c, ',');
    try {
      rows.push_back({std::stoul(cell[0]), cell[1], std::stod(cell[2]), std::stod(cell[3])});
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, path.string() + ": bad row '" + line + "'");
    }
  }
  return rows;
}

}  // namespace

CompareReport cmd_compare(const fs::path& results_dir, const fs::path& out_dir) {
  std::vector<fs::path> files;
  std::error_code ec;
  if (fs::is_directory(results_dir, ec)) {
    for (const auto& entry : fs::recursive_directory_iterator(results_dir)) {
      if (entry.is_regular_file() && entry.path().filename() == "results.json") files.push_back(entry.path());
    }
  }
  if (files.size() < 2) {
    throw Error(ErrorCode::NoResultsFound, "need at least 2 results.json files under " + results_dir.string() +
                                               ", found " + std::to_string(files.size()));
  }
  std::sort(files.begin(), files.end());

  struct Loaded {
    ExperimentResult result;
    fs::path dir;
  };
  std::vector<Loaded> loaded;
  for (const auto& f : files) loaded.push_back({load_result(f), f.parent_path()});
  std::stable_sort(loaded.begin(), loaded.end(),
                   [](const Loaded& a, const Loaded& b) { return result_label(a.result) < result_label(b.result); });

  CompareReport report;
  double best = -std::numeric_limits<double>::infinity();
  std::string table =
      "label,model,task,feature_group,k,seed,test_r2,test_mae,test_rmse,test_mape,holdout_r2,holdout_mae,"
      "holdout_rmse,holdout_mape\n";
  std::string combined = "label,index,actual_mpa,predicted_mpa,within_10pct\n";
  for (const auto& [r, dir] : loaded) {
    const auto label = result_label(r);
    const auto& test = r.metrics.at("test");
    const auto& holdout = r.metrics.at("holdout");
    const bool gnn = r.config.model == "gnn";
    table += label + ',' + r.config.model + ',' + (gnn ? r.config.task : "") + ',' + r.config.feature_group + ',' +
             (gnn ? std::to_string(r.config.k) : "") + ',' + std::to_string(r.config.seed) + ',' +
             format_double(test.r2) + ',' + format_double(test.mae) + ',' + format_double(test.rmse) + ',' +
             format_double(test.mape) + ',' + format_double(holdout.r2) + ',' + format_double(holdout.mae) + ',' +
             format_double(holdout.rmse) + ',' + format_double(holdout.mape) + '\n';
    if (gnn && test.r2 > best) {
      best = test.r2;
      report.best_gnn_label = label;
    }
    if (!r.predictions_file.empty() && fs::exists(dir / r.predictions_file)) {
      for (const auto& row : read_predictions(dir / r.predictions_file)) {
        if (row.split == "train") continue;
        combined += label + ',' + std::to_string(row.index) + ',' + format_double(row.actual) + ',' +
                    format_double(row.predicted) + ',' + (within_ten_percent(row.predicted, row.actual) ? "1" : "0") +
                    '\n';
      }
    }
    report.results.push_back(r);
  }

  ensure_dir(out_dir);
  write_file_atomic(out_dir / "comparison.csv", table);
  write_file_atomic(out_dir / "holdout_predictions.csv", combined);
  return report;
}

}  // namespace tabsage
