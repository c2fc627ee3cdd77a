#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "qualsynth/error.hpp"
#include "qualsynth/simgen.hpp"
#include "qualsynth/synth.hpp"

using namespace qualsynth;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n01;
  MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n01(rng);
  return m;
}

oracle::Matrix columns_of(const MatrixXd& a) {
  oracle::Matrix cols(static_cast<std::size_t>(a.cols()), std::vector<double>(static_cast<std::size_t>(a.rows())));
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    for (Eigen::Index r = 0; r < a.rows(); ++r) cols[c][r] = a(r, c);
  return cols;
}

std::vector<double> to_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void check_simplex(const std::vector<double>& w) {
  double sum = 0.0;
  for (double x : w) {
    CHECK(x >= 0.0);
    sum += x;
  }
  CHECK(std::abs(sum - 1.0) < 1e-8);
}

DgpConfig small_dgp(std::uint64_t seed) {
  DgpConfig cfg;
  cfg.n_treated = 3;
  cfg.n_donors = 12;
  cfg.n_years = 14;
  cfg.t0 = cfg.first_year + 7;
  cfg.seed = seed;
  return cfg;
}

SynthOptions quick_options() {
  SynthOptions o;
  o.evaluation_budget = 400;
  o.random_starts = 2;
  return o;
}

}  // namespace

TEST_CASE("simplex QP: vertex solution") {
  std::mt19937_64 rng(1);
  const MatrixXd a = random_matrix(rng, 5, 6);
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    const auto r = solve_simplex_qp(a, a.col(j));
    CHECK(r.w(j) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(r.objective < 1e-12);
    check_simplex(to_vec(r.w));
  }
}

TEST_CASE("simplex QP: planted interior combination") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const MatrixXd a = random_matrix(rng, 8, 5);
    const VectorXd b = 0.5 * a.col(0) + 0.3 * a.col(1) + 0.2 * a.col(2);
    const auto r = solve_simplex_qp(a, b);
    CHECK(std::abs(r.w(0) - 0.5) < 1e-6);
    CHECK(std::abs(r.w(1) - 0.3) < 1e-6);
    CHECK(std::abs(r.w(2) - 0.2) < 1e-6);
    CHECK(std::abs(r.w(3)) < 1e-6);
    CHECK(std::abs(r.w(4)) < 1e-6);
    CHECK(r.objective < 1e-10);
  }
}

TEST_CASE("simplex QP against exact support enumeration and grids") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    const MatrixXd a = random_matrix(rng, 4, 6);
    const VectorXd b = random_matrix(rng, 4, 1).col(0) * 2.0;
    const auto r = solve_simplex_qp(a, b);
    check_simplex(to_vec(r.w));
    CHECK(r.kkt_residual < 1e-9);
    const auto cols = columns_of(a);
    const double exact = oracle::simplex_support_min(cols, to_vec(b));
    CHECK(std::abs(r.objective - exact) < 1e-6);
    // No point of a coarse simplex grid beats the solver.
    CHECK(r.objective <= oracle::simplex_grid_min(cols, to_vec(b), 20) + 1e-9);
    // The objective never increases along the iterates.
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1] + 1e-12);
  }
  for (Eigen::Index j : {3, 4}) {
    const MatrixXd a = random_matrix(rng, 4, j);
    const VectorXd b = random_matrix(rng, 4, 1).col(0);
    const auto r = solve_simplex_qp(a, b);
    const double grid = oracle::simplex_grid_min(columns_of(a), to_vec(b), 200);
    CHECK(r.objective <= grid + 1e-6);
    CHECK(grid - r.objective < 1e-3);
  }
}

TEST_CASE("simplex QP: permuting columns permutes the weights") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    MatrixXd a = random_matrix(rng, 6, 5);
    const VectorXd b = random_matrix(rng, 6, 1).col(0);
    const auto r = solve_simplex_qp(a, b);
    std::vector<Eigen::Index> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixXd ap(6, 5);
    for (Eigen::Index c = 0; c < 5; ++c) ap.col(c) = a.col(perm[c]);
    const auto rp = solve_simplex_qp(ap, b);
    for (Eigen::Index c = 0; c < 5; ++c) CHECK(std::abs(rp.w(c) - r.w(perm[c])) < 1e-10);
  }
}

TEST_CASE("simplex QP: duplicated donors share weight") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 10; ++rep) {
    MatrixXd a = random_matrix(rng, 3, 7);
    a.col(5) = a.col(2);
    const VectorXd b = random_matrix(rng, 3, 1).col(0);
    const auto r = solve_simplex_qp(a, b);
    check_simplex(to_vec(r.w));
    CHECK(std::abs(r.objective - oracle::simplex_support_min(columns_of(a), to_vec(b))) < 1e-8);
    CHECK(std::abs(r.w(2) - r.w(5)) < 1e-6);
  }
}

TEST_CASE("W given V on a built problem") {
  const auto sim = generate(small_dgp(5));
  const auto prob = build_problem(sim.panel, 0, 0, PredictorSpec{});
  CHECK(prob.n_donors() == 12);
  CHECK_NOTHROW(prob.validate());
  // Standardized over treated and donors.
  for (Eigen::Index k = 0; k < prob.n_predictors(); ++k) {
    VectorXd row(prob.n_donors() + 1);
    row << prob.x1(k), prob.x0.row(k).transpose();
    CHECK(std::abs(row.mean()) < 1e-12);
    CHECK(std::abs((row.array() - row.mean()).square().mean() - 1.0) < 1e-12);
  }
  std::vector<int> all(prob.training_years);
  all.insert(all.end(), prob.validation_years.begin(), prob.validation_years.end());
  CHECK(all == prob.pre_years);
  CHECK(!prob.training_years.empty());
  CHECK(!prob.validation_years.empty());

  const auto v = PredictorWeights::uniform(prob.predictors);
  const auto inner = solve_w_given_v(prob, v);
  check_simplex(inner.weights.weights);
  const VectorXd gap = prob.x1 - prob.x0 * inner.qp.w;
  CHECK(inner.objective == doctest::Approx(gap.squaredNorm() / static_cast<double>(prob.n_predictors())));
  // Matches exhaustive support search on the V-scaled system.
  MatrixXd a = prob.x0;
  VectorXd b = prob.x1;
  for (Eigen::Index k = 0; k < a.rows(); ++k) {
    a.row(k) *= std::sqrt(v.diag[k]);
    b(k) *= std::sqrt(v.diag[k]);
  }
  CHECK(std::abs(inner.objective - oracle::simplex_support_min(columns_of(a), to_vec(b))) < 1e-6);
}

TEST_CASE("V search") {
  const auto sim = generate(small_dgp(6));
  SUBCASE("single predictor forces V = 1") {
    PredictorSpec spec;
    spec.covariates = std::vector<std::string>{};
    spec.lag_years = std::vector<int>{sim.panel.years().first + 1};
    const auto prob = build_problem(sim.panel, 1, 0, spec);
    REQUIRE(prob.n_predictors() == 1);
    const auto out = solve_v(prob, quick_options());
    CHECK(out.v.diag == std::vector<double>{1.0});
    CHECK(out.inner.weights.weights == solve_w_given_v(prob, out.v).weights.weights);
  }
  SUBCASE("no worse than uniform V, trace one") {
    for (std::size_t t = 0; t < 3; ++t) {
      const auto prob = build_problem(sim.panel, t, 0, PredictorSpec{});
      const auto out = solve_v(prob, quick_options());
      CHECK(out.outer_objective <= out.uniform_objective + 1e-15);
      CHECK(out.uniform_objective ==
            doctest::Approx(outer_objective(prob, PredictorWeights::uniform(prob.predictors), quick_options())));
      check_simplex(out.v.diag);
      check_simplex(out.inner.weights.weights);
      CHECK(out.evaluations <= quick_options().evaluation_budget);
    }
  }
}

TEST_CASE("a pure-noise predictor receives little V weight") {
  // The treated unit's noise value lies outside the donors' range, so W
  // cannot match both predictors and V has to choose between them.
  double total = 0.0;
  const int n = 50;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n01;
  for (int i = 0; i < n; ++i) {
    DgpConfig cfg = small_dgp(100 + i);
    cfg.covariate_link = 0.0;
    const auto ds = generate(cfg).panel;
    const auto col = static_cast<std::size_t>(
        std::find(ds.covariate_names().begin(), ds.covariate_names().end(), "rainfall") - ds.covariate_names().begin());
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t r = cfg.n_treated; r < ds.n_regions(); ++r) {
      lo = std::min(lo, ds.covariates()[r].values[col]);
      hi = std::max(hi, ds.covariates()[r].values[col]);
    }
    auto covs = ds.covariates();
    const double spread = hi - lo;
    covs[0].values[col] = n01(rng) > 0 ? hi + 0.5 * spread * (1 + std::abs(n01(rng))) : lo - 0.5 * spread * (1 + std::abs(n01(rng)));
    const PanelDataset noisy(ds.regions(), ds.years(), ds.outcomes(), ds.covariate_names(), ds.has_climate_zone(), covs,
                             ds.cells(), ds.t0());
    PredictorSpec spec;
    spec.covariates = std::vector<std::string>{"rainfall"};
    spec.lag_years = std::vector<int>{ds.t0() - 4};
    const auto out = solve_v(build_problem(noisy, 0, 0, spec), quick_options());
    total += out.v.diag[0];
  }
  CHECK(total / n < 0.15);
}

TEST_CASE("fit_synth") {
  SUBCASE("perfect donor") {
    auto sim = generate(small_dgp(7));
    const auto& ds = sim.panel;
    // Replace treated unit 0 by a copy of donor 3 over every year and covariate.
    const std::size_t donor = 3 + ds.n_regions() - 12;
    std::vector<RegionId> regions = ds.regions();
    std::vector<GeoCovariates> covs;
    std::vector<double> cells;
    for (std::size_t r = 0; r < ds.n_regions(); ++r) covs.push_back(r == 0 ? ds.covariates()[donor] : ds.covariates()[r]);
    for (std::size_t r = 0; r < ds.n_regions(); ++r) {
      const auto s = ds.series(r == 0 ? donor : r, 0);
      cells.insert(cells.end(), s.values.begin(), s.values.end());
    }
    const PanelDataset copy(regions, ds.years(), ds.outcomes(), ds.covariate_names(), ds.has_climate_zone(), covs, cells,
                            ds.t0());
    const auto s = fit_synth(copy, 0, 0, PredictorSpec{}, quick_options());
    CHECK(s.rmse_pre < 1e-6);
    for (int y = copy.years().first; y <= copy.t0(); ++y) CHECK(std::abs(s.gaps.values.at(y)) < 1e-6);
    CHECK(s.weights.weight_of(copy.regions()[donor].code) > 0.999);
    CHECK(s.warnings.empty());
  }
  SUBCASE("planted effect is recovered") {
    DgpConfig cfg = small_dgp(8);
    cfg.n_donors = 30;
    cfg.noise_sd = 0.0;
    cfg.set_constant_effect(-0.4);
    const auto sim = generate(cfg);
    const auto& ds = sim.panel;
    std::vector<SynthSolution> sols;
    for (std::size_t t = 0; t < 3; ++t) {
      const auto s = fit_synth(ds, t, 0, PredictorSpec{}, quick_options());
      check_simplex(s.weights.weights);
      check_simplex(s.v.diag);
      for (int y = ds.years().first; y <= ds.years().last; ++y) {
        double synth = 0.0;
        for (std::size_t d = 0; d < s.weights.donors.size(); ++d)
          synth += s.weights.weights[d] * ds.value(ds.region_index(s.weights.donors[d]), 0, y);
        CHECK(std::abs(s.synthetic_path.at(y) - synth) < 1e-12);
        CHECK(s.gaps.values.at(y) == s.observed.at(y) - s.synthetic_path.at(y));
      }
      double post = 0.0;
      for (int y = ds.t0() + 1; y <= ds.years().last; ++y) post += s.gaps.values.at(y);
      post /= ds.years().last - ds.t0();
      CHECK(std::abs(post + 0.4) < 0.02);
      sols.push_back(s);
    }
    const auto avg = average_treatment_path(sols);
    CHECK(std::abs(avg.atet + 0.4) < 0.02);
  }
  SUBCASE("poor fit is flagged") {
    auto opts = quick_options();
    opts.hull_rmse_threshold = 0.0;
    const auto s = fit_synth(generate(small_dgp(9)).panel, 0, 0, PredictorSpec{}, opts);
    REQUIRE(s.warnings.size() == 1);
    CHECK(s.warnings[0].find("DonorHullWarning") == 0);
  }
}

TEST_CASE("shifting every outcome leaves weights and gaps unchanged") {
  const auto ds = generate(small_dgp(10)).panel;
  std::vector<YearSeries> shifted;
  for (std::size_t r = 0; r < ds.n_regions(); ++r) {
    auto s = ds.series(r, 0);
    for (auto& v : s.values) v += 2.5;
    shifted.push_back(s);
  }
  const auto moved = ds.with_outcome(0, shifted);
  const auto a = fit_synth(ds, 1, 0, PredictorSpec{}, quick_options());
  const auto b = fit_synth(moved, 1, 0, PredictorSpec{}, quick_options());
  for (std::size_t d = 0; d < a.weights.weights.size(); ++d)
    CHECK(std::abs(a.weights.weights[d] - b.weights.weights[d]) < 1e-8);
  for (std::size_t t = 0; t < a.gaps.values.size(); ++t)
    CHECK(std::abs(a.gaps.values.values[t] - b.gaps.values.values[t]) < 1e-8);
}

TEST_CASE("permuting the donor list only reorders the weights") {
  const auto ds = generate(small_dgp(11)).panel;
  std::vector<std::size_t> donors;
  for (std::size_t r = 3; r < ds.n_regions(); ++r) donors.push_back(r);
  const auto a = fit_synth(ds, 0, 0, PredictorSpec{}, quick_options(), &donors);
  std::reverse(donors.begin(), donors.end());
  std::swap(donors[1], donors[5]);
  const auto b = fit_synth(ds, 0, 0, PredictorSpec{}, quick_options(), &donors);
  for (const auto& code : a.weights.donors) CHECK(std::abs(a.weights.weight_of(code) - b.weights.weight_of(code)) < 1e-10);
  CHECK(a.weights.sorted() == b.weights.sorted());
}

TEST_CASE("average path and donor frequency") {
  SynthSolution s;
  s.t0 = 2001;
  s.outcome = OutcomeKind{"rule_of_law"};
  s.treated = RegionId{"T1", "", "UA", true};
  s.gaps = make_gap_series(s.treated, s.outcome, YearSeries(2000, {0.1, 0.2, -0.3, -0.5}), 2001);
  s.weights.donors = {"A", "B", "C"};
  s.weights.weights = {0.0, 1.0, 0.0};

  const std::vector<SynthSolution> one{s};
  CHECK(average_treatment_path(one).mean_gap == s.gaps.values);
  CHECK(average_treatment_path(one).atet == doctest::Approx(-0.4));

  SynthSolution neg = s;
  neg.treated.code = "T2";
  for (auto& v : neg.gaps.values.values) v = -v;
  const std::vector<SynthSolution> pair{s, neg};
  for (double v : average_treatment_path(pair).mean_gap.values) CHECK(v == 0.0);

  SynthSolution late = s;
  late.gaps = make_gap_series(s.treated, s.outcome, YearSeries(2001, {0.1, 0.2, -0.3, -0.5}), 2001);
  const std::vector<SynthSolution> mixed{s, late};
  CHECK_THROWS_AS(average_treatment_path(mixed), Error);
  CHECK_THROWS_AS(average_treatment_path(std::span<const SynthSolution>{}), Error);

  const auto freq = donor_frequency(pair);
  REQUIRE(freq.counts.size() == 1);
  CHECK(freq.counts[0] == std::pair<std::string, int>{"B", 2});
  CHECK(freq.tables.size() == 2);
  CHECK(donor_frequency(pair, 1.0).counts.empty());

  SynthSolution spread = s;
  spread.weights.donors = {"Bihor", "Riga", "Satu Mare", "Krapina-Zagorje", "Other"};
  spread.weights.weights = {0.30, 0.16, 0.15, 0.12, 0.27};
  const std::vector<SynthSolution> table{spread};
  const auto f = donor_frequency(table);
  REQUIRE(f.tables.size() == 1);
  double sum = 0.0;
  for (const auto& [code, w] : f.tables[0].second) sum += w;
  CHECK(sum == doctest::Approx(1.0));
  CHECK(spread.weights.sorted().front() == std::pair<std::string, double>{"Bihor", 0.30});
}
