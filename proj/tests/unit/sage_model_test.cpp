#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "tabsage/error.hpp"
#include "tabsage/sage_model.hpp"
#include "test_support.hpp"

using namespace tabsage;

namespace {

RowMatrix random_points(std::size_t n, std::size_t d, Rng& rng) {
  RowMatrix m(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) m(r, c) = rng.uniform();
  }
  return m;
}

// A trained-looking model: random weights plus non-trivial running statistics.
SageModel perturbed_model(std::size_t d, std::uint64_t seed, SageConfig config = {}) {
  auto model = init_model(d, config, seed);
  Rng rng(seed + 1000);
  for (auto& layer : model.layers) {
    for (auto& v : layer.bias.mutable_values()) v = 0.1 * (rng.uniform() - 0.5);
    for (auto& v : layer.norm.gamma.mutable_values()) v = 0.5 + rng.uniform();
    for (auto& v : layer.norm.beta.mutable_values()) v = rng.uniform() - 0.5;
    for (auto& m : layer.norm.running_mean) m = rng.uniform() - 0.5;
    for (auto& s : layer.norm.running_var) s = 0.5 + rng.uniform();
  }
  model.head_bias.mutable_values()[0] = 0.3;
  return model;
}

void zero_all(SageModel& model) {
  for (auto& layer : model.layers) {
    for (auto& v : layer.weight.mutable_values()) v = 0.0;
    for (auto& v : layer.bias.mutable_values()) v = 0.0;
  }
  for (auto& v : model.head_weight.mutable_values()) v = 0.0;
  for (auto& v : model.head_bias.mutable_values()) v = 0.0;
}

}  // namespace

TEST_CASE("init_model shapes and parameter count") {
  const auto model = init_model(8, {}, 42);
  REQUIRE(model.layers.size() == 3);
  CHECK(model.layers[0].weight.rows() == 128);
  CHECK(model.layers[0].weight.cols() == 16);
  CHECK(model.layers[1].weight.cols() == 256);
  CHECK(model.layers[2].weight.cols() == 256);
  CHECK(model.head_weight.rows() == 1);
  CHECK(model.head_weight.cols() == 128);
  const std::size_t closed_form = (128 * 16 + 128) + 2 * (128 * 256 + 128) + (128 + 1);
  CHECK(closed_form == 68097);
  CHECK(model.linear_parameter_count() == closed_form);
  CHECK(expected_linear_parameter_count(8, {}) == closed_form);
  CHECK(model.trainable_parameter_count() == closed_form + 3 * 2 * 128);
  for (std::size_t d = 1; d <= 9; ++d) CHECK(init_model(d, {}, 1).linear_parameter_count() == expected_linear_parameter_count(d, {}));
}

TEST_CASE("init_model: weight bounds, zero biases, batch-norm defaults") {
  const auto model = init_model(8, {}, 42);
  for (const auto& layer : model.layers) {
    const double fan_in = static_cast<double>(layer.weight.cols());
    const double fan_out = static_cast<double>(layer.weight.rows());
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    double largest = 0.0;
    for (double w : layer.weight.values()) largest = std::max(largest, std::abs(w));
    CHECK(largest <= bound);
    CHECK(largest > 0.9 * bound);  // actually spans the range
    for (double b : layer.bias.values()) CHECK(b == 0.0);
    for (double g : layer.norm.gamma.values()) CHECK(g == 1.0);
    for (double b : layer.norm.beta.values()) CHECK(b == 0.0);
    for (double m : layer.norm.running_mean) CHECK(m == 0.0);
    for (double v : layer.norm.running_var) CHECK(v == 1.0);
  }
  const double head_bound = 1.0 / std::sqrt(128.0);
  CHECK(head_bound <= std::sqrt(6.0 / 129.0));
  for (double w : model.head_weight.values()) CHECK(std::abs(w) <= head_bound);
  CHECK(model.head_bias.values()[0] == 0.0);
}

TEST_CASE("init_model is deterministic under its seed") {
  const auto a = init_model(8, {}, 42);
  const auto b = init_model(8, {}, 42);
  const auto c = init_model(8, {}, 43);
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  const auto pc = c.named_parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_difference = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(std::equal(pa[i].second.values().begin(), pa[i].second.values().end(), pb[i].second.values().begin()));
    if (!std::equal(pa[i].second.values().begin(), pa[i].second.values().end(), pc[i].second.values().begin())) {
      any_difference = true;
    }
  }
  CHECK(any_difference);
  CHECK(pa.front().first == "layers.0.weight");
  CHECK(pa.back().first == "head.bias");
}

TEST_CASE("init_model rejects bad configs") {
  CHECK_THROWS_WITH_AS(init_model(0, {}, 1), doctest::Contains("InvalidConfig"), Error);
  CHECK_THROWS_WITH_AS(init_model(8, {128, 3, 1.0}, 1), doctest::Contains("InvalidConfig"), Error);
}

TEST_CASE("clone shares no storage") {
  const auto model = init_model(4, {}, 3);
  const auto copy = model.clone();
  const auto a = model.parameters();
  const auto b = copy.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK_FALSE(a[i].shares_storage(b[i]));
}

TEST_CASE("layer hand example: concat of self and neighbor mean") {
  std::vector<std::vector<std::size_t>> lists = {{1}, {0}};
  Adjacency adjacency(lists);
  SageLayer layer{ad::Tensor(1, 2, {1.0, 1.0}, true), ad::Tensor(1, 1, true), ad::BatchNorm(1)};
  ad::Tensor h(2, 1, {1.0, 3.0});
  ad::Tape tape;
  Rng rng(0);
  const auto aggregated = ad::neighbor_mean(tape, h, adjacency);
  CHECK(aggregated.values()[0] == 3.0);
  CHECK(aggregated.values()[1] == 1.0);
  const auto z = ad::linear(tape, ad::concat_cols(tape, h, aggregated), layer.weight, layer.bias);
  CHECK(z.values()[0] == 4.0);
  CHECK(z.values()[1] == 4.0);
  // Eval mode with running statistics (0, 1): the layer output is relu(z / sqrt(1 + eps)).
  const auto out = sage_layer_forward(tape, layer, h, adjacency, ad::Mode::eval, 0.25, rng);
  CHECK(out.values()[0] == doctest::Approx(4.0 / std::sqrt(1.0 + ad::BatchNorm::kEpsilon)));
}

TEST_CASE("zero weights give zero predictions at both levels") {
  Rng rng(1);
  const auto x = random_points(30, 5, rng);
  const auto graph = build_knn_graph(x, 3);
  auto model = init_model(5, {}, 1);
  zero_all(model);
  for (Task task : {Task::node, Task::graph}) {
    const auto input = GraphInput::make(task, graph, x);
    const auto pred = predict(model, input);
    CHECK(pred.size() == 30);
    for (double p : pred) CHECK(p == 0.0);
    ad::Tape tape;
    Rng dropout_rng(2);
    const auto train = forward(tape, model, input, ad::Mode::train, dropout_rng);
    CHECK(train.rows() == 30);
    CHECK(train.cols() == 1);
    for (double p : train.values()) CHECK(p == 0.0);
  }
}

TEST_CASE("eval mode ignores dropout and is bitwise repeatable") {
  Rng rng(2);
  const auto x = random_points(40, 4, rng);
  const auto input = GraphInput::node_level(build_knn_graph(x, 3), x);
  auto model = perturbed_model(4, 9);
  const auto a = predict(model, input);
  ad::Tape tape(false);
  Rng r1(1);
  Rng r2(2);
  const auto b = forward(tape, model, input, ad::Mode::eval, r1);
  const auto c = forward(tape, model, input, ad::Mode::eval, r2);
  CHECK(std::equal(a.begin(), a.end(), b.values().begin()));
  CHECK(std::equal(a.begin(), a.end(), c.values().begin()));
  CHECK(predict(model, input) == a);
}

TEST_CASE("node level is permutation equivariant") {
  Rng rng(3);
  const auto x = random_points(60, 4, rng);
  const auto perm = permutation(60, rng);
  const auto y = x.select_rows(perm);  // row t of y is row perm[t] of x
  const auto model = perturbed_model(4, 5);
  const auto px = predict(model, GraphInput::node_level(build_knn_graph(x, 4), x));
  const auto py = predict(model, GraphInput::node_level(build_knn_graph(y, 4), y));
  for (std::size_t t = 0; t < 60; ++t) CHECK(py[t] == doctest::Approx(px[perm[t]]).epsilon(1e-12));
}

TEST_CASE("node level is 3-hop local in eval mode") {
  Rng rng(4);
  const auto x = random_points(120, 3, rng);
  const auto graph = build_knn_graph(x, 2);
  const auto model = perturbed_model(3, 6);
  const auto base = predict(model, GraphInput::node_level(graph, x));

  const std::size_t center = 0;
  std::set<std::size_t> within{center};
  for (int hop = 0; hop < 3; ++hop) {
    auto next = within;
    for (auto v : within) {
      for (auto u : graph.neighbors(v)) next.insert(u);
    }
    within = next;
  }
  std::size_t far = 0;
  while (within.count(far) != 0) ++far;
  REQUIRE(far < 120);

  auto changed = x;
  for (std::size_t c = 0; c < 3; ++c) changed(far, c) += 0.37;
  // The graph is kept fixed; only features move.
  const auto moved = predict(model, GraphInput::node_level(graph, changed));
  CHECK(moved[center] == base[center]);
  CHECK(moved[far] != base[far]);
}

TEST_CASE("graph level input is the union of ego subgraphs") {
  const RowMatrix x(3, 1, std::vector<double>{0, 1, 3});
  const auto graph = build_knn_graph(x, 1);
  const auto input = GraphInput::graph_level(graph, x);
  CHECK(input.sample_count == 3);
  CHECK(input.segments == std::vector<std::size_t>{0, 2, 5, 7});
  CHECK(input.features.rows() == 7);
  const std::vector<double> gathered = {0, 1, 0, 1, 3, 1, 3};
  CHECK(std::equal(gathered.begin(), gathered.end(), input.features.values().begin()));
  CHECK(input.adjacency.node_count() == 7);
}

TEST_CASE("graph level pooling of identical embeddings returns that embedding") {
  // All rows identical: every node embedding is the same, so pooling changes nothing
  // and both tasks predict the same value.
  const RowMatrix x(6, 2, std::vector<double>(12, 0.5));
  const auto graph = build_knn_graph(x, 2);
  const auto model = perturbed_model(2, 8);
  const auto node = predict(model, GraphInput::node_level(graph, x));
  const auto pooled = predict(model, GraphInput::graph_level(graph, x));
  REQUIRE(pooled.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(pooled[i] == doctest::Approx(node[i]).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip reproduces eval predictions") {
  Rng rng(10);
  const auto x = random_points(50, 8, rng);
  const auto input = GraphInput::node_level(build_knn_graph(x, 3), x);
  Checkpoint cp{perturbed_model(8, 11), Normalizer({{0, 1}, {0, 2}, {1, 3}, {0, 1}, {0, 1}, {0, 1}, {0, 1}, {1, 365}}, {35.8, 16.7}),
                RunRecord{'A', 3, Task::node, 42}};
  const auto dir = testing::scratch_dir("checkpoint");
  save_checkpoint(cp, dir / "cp.json");
  const auto loaded = load_checkpoint(dir / "cp.json");
  CHECK(loaded.record == cp.record);
  CHECK(loaded.normalizer == cp.normalizer);
  CHECK(loaded.model.config == cp.model.config);
  const auto before = predict(cp.model, input);
  const auto after = predict(loaded.model, input);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(std::abs(before[i] - after[i]) <= 1e-9);
  CHECK(checkpoint_to_json(loaded) == checkpoint_to_json(cp));
}

TEST_CASE("checkpoint format errors") {
  CHECK_THROWS_WITH_AS(checkpoint_from_json("{not json"), doctest::Contains("CheckpointFormat"), Error);
  CHECK_THROWS_WITH_AS(checkpoint_from_json("{\"format\": \"other\"}"), doctest::Contains("CheckpointFormat"), Error);
  CHECK_THROWS_WITH_AS(load_checkpoint("/nonexistent/cp.json"), doctest::Contains("MissingFile"), Error);
}

TEST_CASE("task names") {
  CHECK(parse_task("node") == Task::node);
  CHECK(parse_task("graph") == Task::graph);
  CHECK(to_string(Task::graph) == "graph");
  CHECK_THROWS_WITH_AS(parse_task("edge"), doctest::Contains("InvalidConfig"), Error);
}
