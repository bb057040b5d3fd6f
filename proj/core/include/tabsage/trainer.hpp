#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "tabsage/autodiff.hpp"
#include "tabsage/dataset.hpp"
#include "tabsage/metrics.hpp"
#include "tabsage/sage_model.hpp"

namespace tabsage {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t max_epochs = 2000;
  std::size_t patience = 30;
  double min_delta = 1e-4;  // validation MSE, normalized units
  std::uint64_t seed = 42;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;

  static AdamState for_parameters(std::span<const ad::Tensor> params);
};

// One bias-corrected Adam update of every parameter from its gradient.
// Throws NonFiniteGradient before touching anything if a gradient is not finite.
void adam_step(std::span<ad::Tensor> params, AdamState& state, const AdamConfig& config);

// Improvement means val_loss < best - min_delta. The first observation always
// improves; training stops once `patience` epochs pass without improvement.
class EarlyStopping {
 public:
  enum class Decision { improved, wait, stop };

  EarlyStopping(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  Decision observe(std::size_t epoch, double val_loss);

  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_loss_; }

 private:
  std::size_t patience_;
  double min_delta_;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

enum class StopReason { early_stop, max_epochs };
std::string_view to_string(StopReason reason) noexcept;

struct EpochRecord {
  std::size_t epoch = 0;   // 1-based
  double train_loss = 0;   // train-mode masked MSE, normalized units
  double val_loss = 0;     // eval-mode validation MSE, normalized units
  double train_rmse = 0;   // eval mode, MPa
  double val_rmse = 0;
  double test_rmse = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  std::size_t stop_epoch = 0;
  StopReason stop_reason = StopReason::max_epochs;
};

// Everything a training run reads. All references must outlive the run.
struct TrainData {
  const GraphInput& input;
  std::span<const double> target;    // normalized
  std::span<const double> strength;  // MPa
  const SplitMasks& masks;
  const Normalizer& normalizer;
};

struct TrainHooks {
  // Replaces the measured validation loss; used to drive the stopping rule in tests.
  std::function<double(std::size_t epoch, double measured)> validation_override;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  SageModel model;  // best-validation checkpoint
  TrainHistory history;
};

// Full-batch training: per epoch one train-mode forward over the whole graph,
// masked MSE on training nodes, backward and an Adam step; then an eval-mode
// pass for the validation loss and the MPa curves.
TrainResult train(SageModel model, const TrainData& data, const TrainConfig& config, const TrainHooks& hooks = {});

// Validation MSE in normalized units (the quantity early stopping watches).
double validation_loss(const SageModel& model, const TrainData& data);

// Eval-mode metrics in MPa on the masked rows.
MetricsReport evaluate(const SageModel& model, const GraphInput& input, std::span<const double> strength,
                       std::span<const std::size_t> mask, const Normalizer& normalizer);

// Columns: epoch, train_rmse_mpa, val_rmse_mpa, test_rmse_mpa.
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace tabsage
