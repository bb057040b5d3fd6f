#include "tabsage/metrics.hpp"

#include <cmath>
#include <string>

#include "tabsage/error.hpp"

namespace tabsage {

namespace {

void check_lengths(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size() || actual.empty()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(predicted.size()) + " predictions for " +
                                               std::to_string(actual.size()) + " actual values");
  }
}

}  // namespace

double r_squared(std::span<const double> predicted, std::span<const double> actual) {
  check_lengths(predicted, actual);
  double mean = 0.0;
  for (double a : actual) mean += a;
  mean /= static_cast<double>(actual.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
  }
  if (ss_tot == 0.0) throw Error(ErrorCode::ZeroVarianceActuals, "R² is undefined for constant actual values");
  return 1.0 - ss_res / ss_tot;
}

double mean_absolute_error(std::span<const double> predicted, std::span<const double> actual) {
  check_lengths(predicted, actual);
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) total += std::abs(actual[i] - predicted[i]);
  return total / static_cast<double>(actual.size());
}

double root_mean_squared_error(std::span<const double> predicted, std::span<const double> actual) {
  check_lengths(predicted, actual);
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) total += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
  return std::sqrt(total / static_cast<double>(actual.size()));
}

double mean_absolute_percentage_error(std::span<const double> predicted, std::span<const double> actual) {
  check_lengths(predicted, actual);
  double total = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] == 0.0) throw Error(ErrorCode::ZeroActual, "MAPE is undefined: actual value at index " + std::to_string(i) + " is 0");
    total += std::abs(actual[i] - predicted[i]) / std::abs(actual[i]);
  }
  return 100.0 * total / static_cast<double>(actual.size());
}

MetricsReport compute_metrics(std::span<const double> predicted, std::span<const double> actual) {
  return {r_squared(predicted, actual), mean_absolute_error(predicted, actual),
          root_mean_squared_error(predicted, actual), mean_absolute_percentage_error(predicted, actual), actual.size()};
}

}  // namespace tabsage
