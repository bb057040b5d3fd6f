#pragma once

#include <cstddef>
#include <span>

namespace tabsage {

// Regression statistics on strengths in MPa.
struct MetricsReport {
  double r2 = 0.0;    // unitless
  double mae = 0.0;   // MPa
  double rmse = 0.0;  // MPa
  double mape = 0.0;  // percent
  std::size_t n = 0;

  bool operator==(const MetricsReport&) const = default;
};

// All four statistics. Throws LengthMismatch for unequal or empty inputs,
// ZeroVarianceActuals when R² is undefined and ZeroActual (with the index)
// when MAPE is undefined.
MetricsReport compute_metrics(std::span<const double> predicted, std::span<const double> actual);

double r_squared(std::span<const double> predicted, std::span<const double> actual);
double mean_absolute_error(std::span<const double> predicted, std::span<const double> actual);
double root_mean_squared_error(std::span<const double> predicted, std::span<const double> actual);
double mean_absolute_percentage_error(std::span<const double> predicted, std::span<const double> actual);

}  // namespace tabsage
