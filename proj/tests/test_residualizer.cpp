#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "qualsynth/error.hpp"
#include "qualsynth/residualizer.hpp"
#include "qualsynth/simgen.hpp"

using namespace qualsynth;

namespace {

// Panel with one outcome; covariate columns given per region.
PanelDataset make_panel(const std::vector<std::vector<double>>& covs, const std::vector<std::string>& names,
                        const std::vector<std::vector<double>>& y,  // [region][year]
                        int first_year = 2000, std::vector<std::string> zones = {}) {
  std::vector<RegionId> regions;
  std::vector<GeoCovariates> geo;
  std::vector<double> cells;
  for (std::size_t r = 0; r < y.size(); ++r) {
    regions.push_back({"R" + std::to_string(r), "", "X", r == 0});
    geo.push_back({covs[r], zones.empty() ? "" : zones[r]});
    cells.insert(cells.end(), y[r].begin(), y[r].end());
  }
  const int last = first_year + static_cast<int>(y.front().size()) - 1;
  return PanelDataset(regions, {first_year, last}, {OutcomeKind{"rule_of_law"}}, names, !zones.empty(), geo, cells,
                      first_year);
}

double coef(const ResidualModel& m, const std::string& name) {
  for (const auto& [n, b] : m.coefficients)
    if (n == name) return b;
  return NAN;
}

}  // namespace

TEST_CASE("constant outcome: intercept only, zero residuals") {
  std::vector<std::vector<double>> covs{{45}, {46}, {48}, {50}}, y(4, {0.7, 0.7});
  const auto ds = make_panel(covs, {"latitude"}, y);
  const auto m = fit_cross_section(ds, OutcomeKind{"rule_of_law"}, 2000);
  CHECK(m.intercept == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(std::abs(coef(m, "latitude")) < 1e-12);
  CHECK(m.r_squared == 0.0);
  for (const auto& s : residualize(ds, OutcomeKind{"rule_of_law"}).series)
    for (double e : s.values.values) CHECK(std::abs(e) < 1e-12);
}

TEST_CASE("exact linear outcome is recovered") {
  std::vector<std::vector<double>> covs{{44.5}, {46.25}, {48}, {51.75}, {52}};
  std::vector<std::vector<double>> y;
  for (const auto& c : covs) y.push_back({2 * c[0] + 1});
  const auto m = fit_cross_section(make_panel(covs, {"latitude"}, y), OutcomeKind{"rule_of_law"}, 2000);
  CHECK(std::abs(coef(m, "latitude") - 2.0) < 1e-9);
  CHECK(std::abs(m.intercept - 1.0) < 1e-9);
  CHECK(m.r_squared == doctest::Approx(1.0));
}

TEST_CASE("random 50-region fit matches the normal equations") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int rep = 0; rep < 5; ++rep) {
    const std::size_t n = 50, p = 4;
    std::vector<std::vector<double>> covs(n, std::vector<double>(p));
    std::vector<std::vector<double>> y(n, std::vector<double>(1));
    oracle::Matrix x(n, std::vector<double>(p + 1, 1.0));
    std::vector<double> yy(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < p; ++k) x[r][k + 1] = covs[r][k] = n01(rng) * (k + 1) + 10.0 * k;
      yy[r] = y[r][0] = n01(rng);
    }
    const auto m = fit_cross_section(make_panel(covs, {"a", "b", "c", "d"}, y), OutcomeKind{"rule_of_law"}, 2000);
    const auto beta = oracle::normal_equations(x, yy);
    CHECK(std::abs(m.intercept - beta[0]) < 1e-8);
    const char* names[] = {"a", "b", "c", "d"};
    for (std::size_t k = 0; k < p; ++k) CHECK(std::abs(coef(m, names[k]) - beta[k + 1]) < 1e-8);
    CHECK(m.r_squared >= -1e-12);
    CHECK(m.r_squared <= 1.0 + 1e-12);
  }
}

TEST_CASE("collinear and constant columns are dropped in input order") {
  std::vector<std::vector<double>> covs, y;
  for (int r = 0; r < 8; ++r) {
    const double a = r * 1.5 - 2.0;
    covs.push_back({a, 3.0 * a + 1.0, 5.0, std::sin(r)});
    y.push_back({a + std::cos(r)});
  }
  const auto m = fit_cross_section(make_panel(covs, {"a", "a3", "const", "s"}, y), OutcomeKind{"rule_of_law"}, 2000);
  CHECK(m.dropped == std::vector<std::string>{"a3", "const"});
  CHECK(m.coefficients.size() == 2);
}

TEST_CASE("climate zones become one-hot columns against the most frequent zone") {
  std::vector<std::vector<double>> covs, y;
  std::vector<std::string> zones{"Dfb", "Cfb", "Dfb", "Dfa", "Dfb", "Cfb", "Dfa", "Dfb"};
  for (int r = 0; r < 8; ++r) {
    covs.push_back({static_cast<double>(r)});
    y.push_back({0.3 * r + (zones[r] == "Cfb" ? 1.0 : 0.0)});
  }
  const auto ds = make_panel(covs, {"latitude"}, y, 2000, zones);
  const auto d = design_columns(ds);
  CHECK(d.names == std::vector<std::string>{"latitude", "climate_zone=Cfb", "climate_zone=Dfa"});
  const auto m = fit_cross_section(ds, OutcomeKind{"rule_of_law"}, 2000);
  CHECK(coef(m, "climate_zone=Cfb") == doctest::Approx(1.0));
  CHECK(std::abs(coef(m, "climate_zone=Dfa")) < 1e-10);
}

TEST_CASE("residual invariants on a generated panel") {
  DgpConfig cfg;
  cfg.n_treated = 5;
  cfg.n_donors = 25;
  cfg.n_years = 6;
  cfg.t0 = cfg.first_year + 2;
  cfg.seed = 5;
  const auto ds = generate(cfg).panel;
  const auto res = residualize(ds, ds.outcomes()[0]);
  const auto design = design_columns(ds);
  for (std::size_t t = 0; t < ds.n_years(); ++t) {
    const int year = ds.years().first + static_cast<int>(t);
    double sum = 0.0;
    for (const auto& s : res.series) {
      CHECK(std::abs(s.observed.at(year) - (s.predicted.at(year) + s.values.at(year))) <= 1e-10);
      sum += s.values.at(year);
    }
    CHECK(std::abs(sum) < 1e-8);
    // Orthogonal to every retained standardized column.
    const auto& m = res.models[t];
    for (const auto& [name, _] : m.coefficients) {
      const auto k = static_cast<std::size_t>(std::find(design.names.begin(), design.names.end(), name) - design.names.begin());
      const auto& col = design.columns[k];
      double mean = 0.0, sd = 0.0, dot = 0.0;
      for (double v : col) mean += v;
      mean /= col.size();
      for (double v : col) sd += (v - mean) * (v - mean);
      sd = std::sqrt(sd / col.size());
      for (std::size_t r = 0; r < col.size(); ++r) dot += (col[r] - mean) / sd * res.series[r].values.at(year);
      CHECK(std::abs(dot) < 1e-6);
    }
  }

  SUBCASE("refitting on the predictions reproduces the coefficients") {
    std::vector<YearSeries> predicted;
    for (const auto& s : res.series) predicted.push_back(s.predicted);
    const auto again = residualize(ds.with_outcome(0, predicted), ds.outcomes()[0]);
    for (std::size_t t = 0; t < res.models.size(); ++t) {
      CHECK(again.models[t].intercept == doctest::Approx(res.models[t].intercept).epsilon(1e-9));
      for (std::size_t k = 0; k < res.models[t].coefficients.size(); ++k)
        CHECK(again.models[t].coefficients[k].second ==
              doctest::Approx(res.models[t].coefficients[k].second).epsilon(1e-7));
    }
  }
  SUBCASE("a constant shift moves only the intercept") {
    std::vector<YearSeries> shifted;
    for (std::size_t r = 0; r < ds.n_regions(); ++r) {
      auto s = ds.series(r, 0);
      for (auto& v : s.values) v += 3.25;
      shifted.push_back(s);
    }
    const auto again = residualize(ds.with_outcome(0, shifted), ds.outcomes()[0]);
    for (std::size_t r = 0; r < ds.n_regions(); ++r)
      for (std::size_t t = 0; t < ds.n_years(); ++t)
        CHECK(std::abs(again.series[r].values.values[t] - res.series[r].values.values[t]) < 1e-10);
  }
}

TEST_CASE("on-plane region has zero residuals; twins differ by the shift") {
  std::vector<std::vector<double>> covs{{1, 0}, {2, 1}, {3, 5}, {4, 2}, {5, 5}, {5, 5}};
  std::vector<std::vector<double>> y;
  for (std::size_t r = 0; r < covs.size(); ++r) {
    const double base = 0.5 + 0.2 * covs[r][0] - 0.1 * covs[r][1];
    // Regions 4 and 5 share covariates and differ by 0.8.
    double u = 0.0;
    if (r == 1) u = 0.3;
    if (r == 2) u = -0.2;
    if (r == 3) u = -0.1;
    if (r == 4) u = 0.4;
    if (r == 5) u = -0.4;
    y.push_back({base + u, base + u});
  }
  const auto res = residualize(make_panel(covs, {"a", "b"}, y), OutcomeKind{"rule_of_law"});
  for (int year : {2000, 2001}) {
    const double e4 = res.series[4].values.at(year), e5 = res.series[5].values.at(year);
    CHECK(std::abs((e4 - e5) - 0.8) < 1e-10);
    CHECK(std::abs(res.series[4].predicted.at(year) - res.series[5].predicted.at(year)) < 1e-12);
  }

  std::vector<std::vector<double>> plane;
  for (const auto& c : covs) plane.push_back({1.0 + c[0] - 2.0 * c[1]});
  for (const auto& s : residualize(make_panel(covs, {"a", "b"}, plane), OutcomeKind{"rule_of_law"}).series)
    CHECK(std::abs(s.values.at(2000)) < 1e-12);
}

TEST_CASE("planted region effects: residuals equal their projection residual") {
  // Region effects are the loadings on the constant factor; with no factor
  // dynamics and no noise the outcome is exactly those effects each year.
  DgpConfig cfg;
  cfg.n_treated = 4;
  cfg.n_donors = 16;
  cfg.n_years = 5;
  cfg.t0 = cfg.first_year + 2;
  cfg.factor_scale = 0.0;
  cfg.noise_sd = 0.0;
  cfg.covariate_link = 0.0;
  cfg.seed = 9;
  const auto sim = generate(cfg);
  const auto& ds = sim.panel;
  const std::size_t n = ds.n_regions();
  std::vector<double> u(n);
  for (std::size_t r = 0; r < n; ++r) u[r] = sim.truth.loadings[0][r][0];

  const auto res = residualize(ds, ds.outcomes()[0]);
  const auto& m = res.models.front();
  const auto design = design_columns(ds);
  oracle::Matrix x(n, std::vector<double>{1.0});
  for (const auto& [name, _] : m.coefficients) {
    const auto k = static_cast<std::size_t>(std::find(design.names.begin(), design.names.end(), name) - design.names.begin());
    for (std::size_t r = 0; r < n; ++r) x[r].push_back(design.columns[k][r]);
  }
  const auto beta = oracle::normal_equations(x, u);
  double cu = 0, ce = 0, cue = 0, mu = 0, me = 0;
  for (std::size_t r = 0; r < n; ++r) {
    double fitted = 0.0;
    for (std::size_t k = 0; k < beta.size(); ++k) fitted += x[r][k] * beta[k];
    for (int year = ds.years().first; year <= ds.years().last; ++year)
      CHECK(std::abs(res.series[r].values.at(year) - (u[r] - fitted)) < 1e-8);
    mu += u[r];
    me += res.series[r].values.at(ds.years().first);
  }
  mu /= n;
  me /= n;
  for (std::size_t r = 0; r < n; ++r) {
    const double a = u[r] - mu, b = res.series[r].values.at(ds.years().first) - me;
    cu += a * a;
    ce += b * b;
    cue += a * b;
  }
  // corr(e, u) = sqrt(1 - R^2 of u on the covariates): positive and bounded.
  const double corr = cue / std::sqrt(cu * ce);
  CHECK(corr > 0.0);
  CHECK(corr <= 1.0 + 1e-12);
}

TEST_CASE("errors and recomposition") {
  CHECK_THROWS_AS(fit_least_squares({1.0}, DesignColumns{}), Error);

  ResidualSeries e;
  e.values = YearSeries(2000, {0.5, -0.5});
  const auto q = recompose(YearSeries(2000, {1.0, 2.0}), e);
  CHECK(q.values.values == std::vector<double>{1.5, 1.5});
  CHECK(recompose(YearSeries(2000, {0.0, 0.0}), e).values == e.values);
  ResidualSeries zero;
  zero.values = YearSeries(2000, {0.0, 0.0});
  CHECK(recompose(YearSeries(2000, {1.0, 2.0}), zero).values == YearSeries(2000, {1.0, 2.0}));
  try {
    recompose(YearSeries(2001, {1.0, 2.0}), e);
    FAIL("expected YearMismatch");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::YearMismatch);
  }
}
