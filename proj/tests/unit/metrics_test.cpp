#include <doctest.h>

#include <cmath>
#include <vector>

#include "tabsage/error.hpp"
#include "tabsage/metrics.hpp"
#include "tabsage/rng.hpp"

using namespace tabsage;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("perfect fit") {
  const std::vector<double> a = {10, 20, 35.5, 42};
  const auto m = compute_metrics(a, a);
  CHECK(m.r2 == 1.0);
  CHECK(m.mae == 0.0);
  CHECK(m.rmse == 0.0);
  CHECK(m.mape == 0.0);
  CHECK(m.n == 4);
}

TEST_CASE("mean predictor has R2 exactly 0") {
  const std::vector<double> a = {10, 20, 30, 40};
  const std::vector<double> p(4, 25.0);
  CHECK(r_squared(p, a) == 0.0);
}

TEST_CASE("hand-computed MAE, RMSE, MAPE and the zero-variance guard") {
  const std::vector<double> p = {3, 5};
  const std::vector<double> a = {4, 4};
  CHECK(mean_absolute_error(p, a) == 1.0);
  CHECK(root_mean_squared_error(p, a) == 1.0);
  CHECK(mean_absolute_percentage_error(p, a) == 25.0);
  CHECK(code_of([&] { r_squared(p, a); }) == ErrorCode::ZeroVarianceActuals);
  CHECK(code_of([&] { compute_metrics(p, a); }) == ErrorCode::ZeroVarianceActuals);
}

TEST_CASE("hand-computed mixed example") {
  const std::vector<double> p = {12, 18, 33};
  const std::vector<double> a = {10, 20, 30};
  const auto m = compute_metrics(p, a);
  CHECK(m.mae == doctest::Approx(7.0 / 3.0));
  CHECK(m.rmse == doctest::Approx(std::sqrt(17.0 / 3.0)));
  CHECK(m.mape == doctest::Approx(100.0 * (0.2 + 0.1 + 0.1) / 3.0));
  CHECK(m.r2 == doctest::Approx(1.0 - 17.0 / 200.0));
}

TEST_CASE("input errors") {
  const std::vector<double> two = {1, 2};
  const std::vector<double> three = {1, 2, 3};
  const std::vector<double> none;
  CHECK(code_of([&] { compute_metrics(two, three); }) == ErrorCode::LengthMismatch);
  CHECK(code_of([&] { compute_metrics(none, none); }) == ErrorCode::LengthMismatch);
  const std::vector<double> with_zero = {1, 0, 3};
  CHECK_THROWS_WITH_AS(mean_absolute_percentage_error(three, with_zero), doctest::Contains("index 1"), Error);
  CHECK(code_of([&] { compute_metrics(three, with_zero); }) == ErrorCode::ZeroActual);
}

TEST_CASE("RMSE >= MAE, shift invariance and report invariants on 1000 random vectors") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<double> p(n);
    std::vector<double> a(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = 5.0 + 80.0 * rng.uniform();
      p[i] = a[i] + 20.0 * (rng.uniform() - 0.5);
    }
    const double mae = mean_absolute_error(p, a);
    const double rmse = root_mean_squared_error(p, a);
    CHECK(rmse >= mae);
    CHECK(mae >= 0.0);
    CHECK(mean_absolute_percentage_error(p, a) >= 0.0);

    std::vector<double> ps = p;
    std::vector<double> as = a;
    for (std::size_t i = 0; i < n; ++i) {
      ps[i] += 1000.0;
      as[i] += 1000.0;
    }
    CHECK(mean_absolute_error(ps, as) == doctest::Approx(mae).epsilon(1e-9));
    CHECK(root_mean_squared_error(ps, as) == doctest::Approx(rmse).epsilon(1e-9));
    if (n >= 2) CHECK(r_squared(p, a) <= 1.0);
  }
}

TEST_CASE("better than the mean predictor gives positive R2") {
  const std::vector<double> a = {10, 20, 30, 40};
  const std::vector<double> p = {12, 19, 31, 37};
  CHECK(r_squared(p, a) > 0.0);
}
