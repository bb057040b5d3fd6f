#include "tabsage/sage_model.hpp"

#include <cmath>
#include <type_traits>

#include "tabsage/error.hpp"

namespace tabsage {

std::string_view to_string(Task task) noexcept { return task == Task::node ? "node" : "graph"; }

Task parse_task(std::string_view text) {
  if (text == "node") return Task::node;
  if (text == "graph") return Task::graph;
  throw Error(ErrorCode::InvalidConfig, "task must be 'node' or 'graph', got '" + std::string(text) + "'");
}

std::vector<std::pair<std::string, ad::Tensor>> SageModel::named_parameters() const {
  std::vector<std::pair<std::string, ad::Tensor>> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    out.emplace_back(prefix + "weight", layers[l].weight);
    out.emplace_back(prefix + "bias", layers[l].bias);
    out.emplace_back(prefix + "norm.gamma", layers[l].norm.gamma);
    out.emplace_back(prefix + "norm.beta", layers[l].norm.beta);
  }
  out.emplace_back("head.weight", head_weight);
  out.emplace_back("head.bias", head_bias);
  return out;
}

std::vector<ad::Tensor> SageModel::parameters() const {
  std::vector<ad::Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t SageModel::linear_parameter_count() const {
  std::size_t count = head_weight.size() + head_bias.size();
  for (const auto& layer : layers) count += layer.weight.size() + layer.bias.size();
  return count;
}

std::size_t SageModel::trainable_parameter_count() const {
  std::size_t count = 0;
  for (const auto& t : parameters()) count += t.size();
  return count;
}

SageModel SageModel::clone() const {
  SageModel out;
  out.config = config;
  out.input_dim = input_dim;
  out.layers.reserve(layers.size());
  for (const auto& layer : layers) out.layers.push_back({layer.weight.clone(), layer.bias.clone(), layer.norm.clone()});
  out.head_weight = head_weight.clone();
  out.head_bias = head_bias.clone();
  return out;
}

std::size_t expected_linear_parameter_count(std::size_t input_dim, const SageConfig& config) {
  const std::size_t h = config.hidden;
  std::size_t count = h * 2 * input_dim + h;
  for (std::size_t l = 1; l < config.depth; ++l) count += h * 2 * h + h;
  return count + h + 1;
}

namespace {

ad::Tensor glorot(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(rows * cols);
  for (auto& v : values) v = (2.0 * rng.uniform() - 1.0) * bound;
  return ad::Tensor(rows, cols, std::move(values), true);
}

// PyTorch's Linear default scale, U(±1/sqrt(fan_in)).
ad::Tensor fan_in_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::vector<double> values(rows * cols);
  for (auto& v : values) v = (2.0 * rng.uniform() - 1.0) * bound;
  return ad::Tensor(rows, cols, std::move(values), true);
}

}  // namespace

SageModel init_model(std::size_t input_dim, const SageConfig& config, std::uint64_t seed) {
  if (input_dim < 1) throw Error(ErrorCode::InvalidConfig, "input dimension must be >= 1");
  if (config.hidden < 1 || config.depth < 1) throw Error(ErrorCode::InvalidConfig, "hidden width and depth must be >= 1");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw Error(ErrorCode::InvalidConfig, "dropout must lie in [0, 1)");

  Rng rng(derive_seed(seed, streams::init));
  SageModel model;
  model.config = config;
  model.input_dim = input_dim;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::size_t out = config.hidden;
    model.layers.push_back({glorot(out, 2 * in, 2 * in, out, rng), ad::Tensor(1, out, true), ad::BatchNorm(out)});
    in = out;
  }
  model.head_weight = fan_in_uniform(1, in, rng);
  model.head_bias = ad::Tensor(1, 1, true);
  return model;
}

GraphInput GraphInput::node_level(const KnnGraph& graph, const RowMatrix& features) {
  if (features.rows() != graph.node_count()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(features.rows()) + " feature rows for a " +
                                              std::to_string(graph.node_count()) + "-node graph");
  }
  GraphInput input;
  input.task = Task::node;
  input.adjacency = graph.adjacency();
  input.features = ad::Tensor::from_matrix(features);
  input.sample_count = graph.node_count();
  return input;
}

GraphInput GraphInput::graph_level(const KnnGraph& graph, const RowMatrix& features) {
  if (features.rows() != graph.node_count()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(features.rows()) + " feature rows for a " +
                                              std::to_string(graph.node_count()) + "-node graph");
  }
  const std::size_t n = graph.node_count();
  std::vector<std::vector<std::size_t>> lists;
  std::vector<std::size_t> rows;
  GraphInput input;
  input.task = Task::graph;
  input.segments.reserve(n + 1);
  input.segments.push_back(0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ego = ego_subgraph(graph, i);
    const std::size_t base = rows.size();
    for (std::size_t a = 0; a < ego.parent_index.size(); ++a) {
      rows.push_back(ego.parent_index[a]);
      auto& list = lists.emplace_back();
      for (auto b : ego.adjacency.neighbors(a)) list.push_back(base + b);
    }
    input.segments.push_back(rows.size());
  }
  input.adjacency = Adjacency(lists);
  input.features = ad::Tensor::from_matrix(features.select_rows(rows));
  input.sample_count = n;
  return input;
}

GraphInput GraphInput::make(Task task, const KnnGraph& graph, const RowMatrix& features) {
  return task == Task::node ? node_level(graph, features) : graph_level(graph, features);
}

namespace {

ad::Tensor normalize(ad::Tape& tape, const ad::Tensor& z, ad::BatchNorm& norm, ad::Mode mode) {
  return ad::batch_norm(tape, z, norm, mode);
}

ad::Tensor normalize(ad::Tape& tape, const ad::Tensor& z, const ad::BatchNorm& norm, ad::Mode) {
  return ad::batch_norm(tape, z, norm);
}

template <class Layer>
ad::Tensor layer_forward(ad::Tape& tape, Layer& layer, const ad::Tensor& h, const Adjacency& adjacency, ad::Mode mode,
                         double dropout, Rng& rng) {
  if (h.cols() != layer.in_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "layer expects width " + std::to_string(layer.in_dim()) + ", got " +
                                              std::to_string(h.cols()));
  }
  const auto aggregated = ad::neighbor_mean(tape, h, adjacency);
  const auto combined = ad::concat_cols(tape, h, aggregated);
  const auto z = ad::linear(tape, combined, layer.weight, layer.bias);
  const auto activated = ad::relu(tape, normalize(tape, z, layer.norm, mode));
  return ad::dropout(tape, activated, dropout, mode, rng);
}

template <class Model>
ad::Tensor model_forward(ad::Tape& tape, Model& model, const GraphInput& input, ad::Mode mode, Rng& rng) {
  if (input.features.cols() != model.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "model input width " + std::to_string(model.input_dim) + ", features have " +
                                              std::to_string(input.features.cols()));
  }
  ad::Tensor h = input.features;
  for (auto& layer : model.layers) h = layer_forward(tape, layer, h, input.adjacency, mode, model.config.dropout, rng);
  if (input.task == Task::graph) h = ad::segment_mean(tape, h, input.segments);
  return ad::linear(tape, h, model.head_weight, model.head_bias);
}

}  // namespace

ad::Tensor sage_layer_forward(ad::Tape& tape, SageLayer& layer, const ad::Tensor& h, const Adjacency& adjacency,
                              ad::Mode mode, double dropout, Rng& rng) {
  return layer_forward(tape, layer, h, adjacency, mode, dropout, rng);
}

ad::Tensor forward(ad::Tape& tape, SageModel& model, const GraphInput& input, ad::Mode mode, Rng& rng) {
  return model_forward(tape, model, input, mode, rng);
}

ad::Tensor forward(ad::Tape& tape, const SageModel& model, const GraphInput& input) {
  Rng unused(0);
  return model_forward(tape, model, input, ad::Mode::eval, unused);
}

ad::Tensor forward_node_level(ad::Tape& tape, SageModel& model, const GraphInput& input, ad::Mode mode, Rng& rng) {
  if (input.task != Task::node) throw Error(ErrorCode::InvalidConfig, "graph-level input passed to the node-level forward");
  return forward(tape, model, input, mode, rng);
}

ad::Tensor forward_graph_level(ad::Tape& tape, SageModel& model, const GraphInput& input, ad::Mode mode, Rng& rng) {
  if (input.task != Task::graph) throw Error(ErrorCode::InvalidConfig, "node-level input passed to the graph-level forward");
  return forward(tape, model, input, mode, rng);
}

std::vector<double> predict(const SageModel& model, const GraphInput& input) {
  ad::Tape tape(false);
  const auto out = forward(tape, model, input);
  return {out.values().begin(), out.values().end()};
}

}  // namespace tabsage
