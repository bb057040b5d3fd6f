#include <benchmark/benchmark.h>

#include <filesystem>
#include <vector>

#include "tabsage/dataset.hpp"
#include "tabsage/forest.hpp"
#include "tabsage/knn_graph.hpp"
#include "tabsage/sage_model.hpp"
#include "tabsage/trainer.hpp"

using namespace tabsage;

namespace {

const RawDataset& raw() {
  static const RawDataset data = load_csv(std::filesystem::path(TABSAGE_DATA_DIR) / "concrete.csv");
  return data;
}

const FeatureTable& table() {
  static const FeatureTable t = make_feature_table(raw(), 'A');
  return t;
}

void BM_KnnGraph(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(build_knn_graph(table().features, k));
}
BENCHMARK(BM_KnnGraph)->Arg(3)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto task = state.range(0) == 0 ? Task::node : Task::graph;
  const auto graph = build_knn_graph(table().features, 3);
  const auto input = GraphInput::make(task, graph, table().features);
  const auto masks = split(table().size(), 42);
  const auto target = ad::Tensor::column(table().target);
  auto model = init_model(table().dim(), {}, 42);
  auto params = model.parameters();
  auto adam = AdamState::for_parameters(params);
  Rng rng(1);
  for (auto _ : state) {
    for (auto& p : params) p.zero_grad();
    ad::Tape tape;
    const auto loss = ad::mse_loss(tape, forward(tape, model, input, ad::Mode::train, rng), target, masks.train);
    tape.backward(loss);
    adam_step(params, adam, {});
  }
  state.SetLabel(task == Task::node ? "node" : "graph");
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  const auto input = GraphInput::node_level(build_knn_graph(table().features, 3), table().features);
  const auto model = init_model(table().dim(), {}, 42);
  for (auto _ : state) benchmark::DoNotOptimize(predict(model, input));
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);

void BM_FitForest(benchmark::State& state) {
  const auto engineered = apply_feature_group(raw(), feature_group('A'));
  const auto masks = split(raw().size(), 42);
  const auto x = engineered.values.select_rows(masks.train);
  std::vector<double> y;
  for (auto i : masks.train) y.push_back(raw().strength[i]);
  const ForestConfig config{static_cast<std::size_t>(state.range(0)), 3, 42, true};
  for (auto _ : state) benchmark::DoNotOptimize(fit_forest(x, y, config));
}
BENCHMARK(BM_FitForest)->Arg(100)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
