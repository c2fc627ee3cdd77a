#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qualsynth/error.hpp"
#include "qualsynth/trend_filter.hpp"

using namespace qualsynth;

namespace {

YearSeries random_series(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<double> v(n);
  double walk = 0.0;
  for (auto& x : v) {
    walk += 0.1 * n01(rng);
    x = walk + 0.3 * n01(rng);
  }
  return YearSeries(1996, v);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("phi values") {
  CHECK(annual_phi() == 6.25);
  CHECK(ravn_uhlig_phi(1.0) == 1600.0);
  CHECK(ravn_uhlig_phi(3.0) == doctest::Approx(129600.0));
  CHECK(ravn_uhlig_phi(0.25) == doctest::Approx(6.25));
}

TEST_CASE("zero penalty returns the input") {
  const auto y = random_series(1, 25);
  const auto d = hp_filter(y, 0.0);
  CHECK(d.trend.values == y.values);
  for (double c : d.cycle.values) CHECK(c == 0.0);
}

TEST_CASE("linear input is its own trend") {
  std::vector<double> v;
  for (int t = 0; t < 25; ++t) v.push_back(0.7 - 0.03 * t);
  for (double phi : {0.5, 6.25, 1600.0, 1e6}) {
    const auto d = hp_filter(YearSeries(2000, v), phi);
    CHECK(max_abs_diff(d.trend.values, v) < 1e-9);
  }
}

TEST_CASE("matches a dense solve of the normal equations") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto y = random_series(seed, 25);
    const auto d = hp_filter(y, 6.25);
    CHECK(max_abs_diff(d.trend.values, oracle::dense_hp(y.values, 6.25)) < 1e-8);
    for (std::size_t t = 0; t < y.size(); ++t)
      CHECK(std::abs(d.trend.values[t] + d.cycle.values[t] - y.values[t]) < 1e-10);
    CHECK(d.trend.first_year == y.first_year);
    CHECK(d.phi == 6.25);
  }
  for (std::size_t n : {3u, 4u, 5u, 7u}) {
    const auto y = random_series(n, n);
    CHECK(max_abs_diff(hp_filter(y, 100.0).trend.values, oracle::dense_hp(y.values, 100.0)) < 1e-8);
  }
}

TEST_CASE("properties") {
  const auto x = random_series(3, 25), y = random_series(4, 25);

  SUBCASE("second pass moves the trend less than the first moved the data") {
    const auto tau = hp_filter(x, 6.25).trend;
    const auto again = hp_filter(tau, 6.25).trend;
    CHECK(max_abs_diff(again.values, tau.values) < max_abs_diff(tau.values, x.values));
    double moved_tau = 0.0, moved_x = 0.0;
    for (std::size_t t = 0; t < tau.size(); ++t) {
      moved_tau += std::pow(again.values[t] - tau.values[t], 2);
      moved_x += std::pow(tau.values[t] - x.values[t], 2);
    }
    CHECK(moved_tau < 0.5 * moved_x);
    CHECK(max_abs_diff(hp_filter(tau, 1e-9).trend.values, tau.values) < 1e-6);
  }
  SUBCASE("linear in the input") {
    std::vector<double> combo(25);
    for (std::size_t t = 0; t < 25; ++t) combo[t] = 2.5 * x.values[t] - 0.75 * y.values[t];
    const auto fx = hp_filter(x, 6.25).trend, fy = hp_filter(y, 6.25).trend;
    const auto fc = hp_filter(YearSeries(1996, combo), 6.25).trend;
    for (std::size_t t = 0; t < 25; ++t) CHECK(std::abs(fc.values[t] - (2.5 * fx.values[t] - 0.75 * fy.values[t])) < 1e-9);
  }
  SUBCASE("constant input") {
    const auto d = hp_filter(YearSeries(2000, std::vector<double>(10, -1.25)), 6.25);
    for (double v : d.trend.values) CHECK(v == doctest::Approx(-1.25).epsilon(1e-12));
  }
  SUBCASE("large penalty approaches the least-squares line") {
    const std::size_t n = x.size();
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t t = 0; t < n; ++t) {
      st += t;
      sy += x.values[t];
      stt += double(t) * t;
      sty += t * x.values[t];
    }
    const double b = (n * sty - st * sy) / (n * stt - st * st), a = (sy - b * st) / n;
    const auto d = hp_filter(x, 1e12);
    for (std::size_t t = 0; t < n; ++t) CHECK(std::abs(d.trend.values[t] - (a + b * t)) < 1e-4);
  }
}

TEST_CASE("errors") {
  auto code = [](auto f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoFailure;
  };
  CHECK(code([] { hp_filter(YearSeries(2000, {1.0, 2.0}), 6.25); }) == ErrorCode::TooShort);
  CHECK(code([] { hp_filter(YearSeries(2000, {1.0, 2.0, 3.0}), -1.0); }) == ErrorCode::NegativePhi);
  CHECK(code([] { hp_filter(YearSeries(2000, {1.0, NAN, 3.0}), 1.0); }) == ErrorCode::NonFinite);
}
