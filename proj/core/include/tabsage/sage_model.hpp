#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tabsage/autodiff.hpp"
#include "tabsage/dataset.hpp"
#include "tabsage/knn_graph.hpp"

namespace tabsage {

enum class Task { node, graph };

std::string_view to_string(Task task) noexcept;
Task parse_task(std::string_view text);

struct SageConfig {
  std::size_t hidden = 128;
  std::size_t depth = 3;
  double dropout = 0.25;

  bool operator==(const SageConfig&) const = default;
};

// One GraphSAGE convolution with concat combine:
//   z_i = W [h_i ‖ mean_{j∈N(i)} h_j] + b,  out = dropout(relu(batch_norm(z)))
struct SageLayer {
  ad::Tensor weight;  // out x 2·in
  ad::Tensor bias;    // 1 x out
  ad::BatchNorm norm;

  std::size_t in_dim() const noexcept { return weight.cols() / 2; }
  std::size_t out_dim() const noexcept { return weight.rows(); }
};

struct SageModel {
  SageConfig config;
  std::size_t input_dim = 0;
  std::vector<SageLayer> layers;
  ad::Tensor head_weight;  // 1 x hidden
  ad::Tensor head_bias;    // 1 x 1

  // Every trainable tensor, in a fixed order: per layer weight, bias, gamma,
  // beta; then head weight and bias.
  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  std::vector<ad::Tensor> parameters() const;

  // Weights and biases of the convolutions and head (batch-norm excluded).
  std::size_t linear_parameter_count() const;
  std::size_t trainable_parameter_count() const;

  // Deep copy; the copy shares no storage with this model.
  SageModel clone() const;
};

// Closed form of linear_parameter_count() for an input width d.
std::size_t expected_linear_parameter_count(std::size_t input_dim, const SageConfig& config);

// Convolution weights Glorot-uniform in ±sqrt(6 / (fan_in + fan_out)); head
// weights uniform in ±1/sqrt(fan_in); zero biases;
// batch-norm gamma = 1, beta = 0, running statistics (0, 1).
SageModel init_model(std::size_t input_dim, const SageConfig& config, std::uint64_t seed);

// Message-passing input for one task.
//
// Node level: the k-NN graph itself; one output row per node.
// Graph level: the disjoint union of every node's ego subgraph, with features
// gathered from the parent rows; each ego subgraph is mean-pooled into the
// embedding for its center.
struct GraphInput {
  Task task = Task::node;
  Adjacency adjacency;
  ad::Tensor features;
  std::vector<std::size_t> segments;  // graph level: offsets of each ego block
  std::size_t sample_count = 0;

  static GraphInput node_level(const KnnGraph& graph, const RowMatrix& features);
  static GraphInput graph_level(const KnnGraph& graph, const RowMatrix& features);
  static GraphInput make(Task task, const KnnGraph& graph, const RowMatrix& features);
};

// One hidden layer. The adjacency must stay alive until backward has run.
ad::Tensor sage_layer_forward(ad::Tape& tape, SageLayer& layer, const ad::Tensor& h, const Adjacency& adjacency,
                              ad::Mode mode, double dropout, Rng& rng);

// Predictions in normalized units, one row per sample (n x 1). `input` must
// outlive backward on `tape`.
ad::Tensor forward(ad::Tape& tape, SageModel& model, const GraphInput& input, ad::Mode mode, Rng& rng);
// Eval-mode forward that leaves the model untouched.
ad::Tensor forward(ad::Tape& tape, const SageModel& model, const GraphInput& input);

ad::Tensor forward_node_level(ad::Tape& tape, SageModel& model, const GraphInput& input, ad::Mode mode, Rng& rng);
ad::Tensor forward_graph_level(ad::Tape& tape, SageModel& model, const GraphInput& input, ad::Mode mode, Rng& rng);

// Eval-mode predictions in normalized units.
std::vector<double> predict(const SageModel& model, const GraphInput& input);

// What produced a checkpoint, echoed so that a run can be reproduced.
struct RunRecord {
  char feature_group = 'A';
  std::size_t k = 3;
  Task task = Task::node;
  std::uint64_t seed = 42;

  bool operator==(const RunRecord&) const = default;
};

struct Checkpoint {
  SageModel model;
  Normalizer normalizer;
  RunRecord record;
};

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(std::string_view text);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tabsage
