#include "tabsage/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "tabsage/error.hpp"

namespace tabsage {

void TrainConfig::validate() const {
  if (patience < 1) throw Error(ErrorCode::InvalidConfig, "patience must be >= 1");
  if (!(min_delta > 0.0)) throw Error(ErrorCode::InvalidConfig, "min_delta must be > 0");
  if (!(adam.learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be > 0");
  if (max_epochs < 1) throw Error(ErrorCode::InvalidConfig, "max_epochs must be >= 1");
}

AdamState AdamState::for_parameters(std::span<const ad::Tensor> params) {
  AdamState state;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

void adam_step(std::span<ad::Tensor> params, AdamState& state, const AdamConfig& config) {
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "optimizer state tracks " + std::to_string(state.first_moment.size()) +
                                              " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (state.first_moment[p].size() != params[p].size()) {
      throw Error(ErrorCode::ShapeMismatch, "optimizer moment shape differs for parameter " + std::to_string(p));
    }
    for (double g : params[p].grad()) {
      if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGradient, "gradient of parameter " + std::to_string(p));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto grad = params[p].grad();
    if (grad.empty()) continue;  // parameter never reached the loss
    auto values = params[p].mutable_values();
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

EarlyStopping::Decision EarlyStopping::observe(std::size_t epoch, double val_loss) {
  if (val_loss < best_loss_ - min_delta_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    return Decision::improved;
  }
  return epoch - best_epoch_ >= patience_ ? Decision::stop : Decision::wait;
}

std::string_view to_string(StopReason reason) noexcept {
  return reason == StopReason::early_stop ? "early_stop" : "max_epochs";
}

namespace {

double masked_mse(std::span<const double> pred, std::span<const double> target, std::span<const std::size_t> mask) {
  double total = 0.0;
  for (auto i : mask) total += (pred[i] - target[i]) * (pred[i] - target[i]);
  return total / static_cast<double>(mask.size());
}

double masked_rmse_mpa(std::span<const double> pred_mpa, std::span<const double> strength, std::span<const std::size_t> mask) {
  return std::sqrt(masked_mse(pred_mpa, strength, mask));
}

void check_data(const TrainData& data) {
  const std::size_t n = data.input.sample_count;
  if (data.target.size() != n || data.strength.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "targets do not match the " + std::to_string(n) + " samples");
  }
  for (const auto* mask : {&data.masks.train, &data.masks.validation, &data.masks.test}) {
    if (mask->empty()) throw Error(ErrorCode::EmptyMask, "training needs non-empty train, validation and test masks");
    for (auto i : *mask) {
      if (i >= n) throw Error(ErrorCode::IndexOutOfRange, "mask index " + std::to_string(i));
    }
  }
}

}  // namespace

double validation_loss(const SageModel& model, const TrainData& data) {
  return masked_mse(predict(model, data.input), data.target, data.masks.validation);
}

TrainResult train(SageModel model, const TrainData& data, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  check_data(data);

  auto params = model.parameters();
  auto adam = AdamState::for_parameters(params);
  Rng dropout_rng(derive_seed(config.seed, streams::dropout));
  const auto target = ad::Tensor::column(data.target);
  EarlyStopping stopping(config.patience, config.min_delta);

  TrainResult result{model.clone(), {}};
  auto& history = result.history;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    try {
      for (auto& p : params) p.zero_grad();
      ad::Tape tape;
      const auto pred = forward(tape, model, data.input, ad::Mode::train, dropout_rng);
      const auto loss = ad::mse_loss(tape, pred, target, data.masks.train);
      record.train_loss = loss.item();
      tape.backward(loss);
      adam_step(params, adam, config.adam);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NonFinite || e.code() == ErrorCode::NonFiniteGradient) {
        throw Error(ErrorCode::DivergedLoss, "epoch " + std::to_string(epoch) + ": " + e.what());
      }
      throw;
    }

    const auto pred = predict(model, data.input);
    const auto pred_mpa = data.normalizer.denormalize_target(pred);
    record.val_loss = masked_mse(pred, data.target, data.masks.validation);
    record.train_rmse = masked_rmse_mpa(pred_mpa, data.strength, data.masks.train);
    record.val_rmse = masked_rmse_mpa(pred_mpa, data.strength, data.masks.validation);
    record.test_rmse = masked_rmse_mpa(pred_mpa, data.strength, data.masks.test);
    if (!std::isfinite(record.val_loss)) throw Error(ErrorCode::DivergedLoss, "validation loss at epoch " + std::to_string(epoch));

    const double watched = hooks.validation_override ? hooks.validation_override(epoch, record.val_loss) : record.val_loss;
    history.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record);

    const auto decision = stopping.observe(epoch, watched);
    if (decision == EarlyStopping::Decision::improved) {
      result.model = model.clone();
    }
    history.stop_epoch = epoch;
    if (decision == EarlyStopping::Decision::stop) {
      history.stop_reason = StopReason::early_stop;
      break;
    }
  }
  history.best_epoch = stopping.best_epoch();
  history.best_val_loss = stopping.best_loss();
  return result;
}

MetricsReport evaluate(const SageModel& model, const GraphInput& input, std::span<const double> strength,
                       std::span<const std::size_t> mask, const Normalizer& normalizer) {
  if (mask.empty()) throw Error(ErrorCode::EmptyMask, "evaluate with an empty mask");
  const auto pred_mpa = normalizer.denormalize_target(predict(model, input));
  std::vector<double> p;
  std::vector<double> a;
  p.reserve(mask.size());
  a.reserve(mask.size());
  for (auto i : mask) {
    p.push_back(pred_mpa[i]);
    a.push_back(strength[i]);
  }
  return compute_metrics(p, a);
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "epoch,train_rmse_mpa,val_rmse_mpa,test_rmse_mpa\n";
  char line[128];
  for (const auto& e : history.epochs) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.train_rmse, e.val_rmse, e.test_rmse);
    out << line;
  }
}

}  // namespace tabsage
