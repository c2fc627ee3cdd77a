#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qualsynth/panel.hpp"

namespace qualsynth {

/// Which discrepancy the outer V search minimizes.
enum class OuterObjective {
  /// Mean squared outcome gap over the validation years (default).
  ValidationOutcomes,
  /// Unweighted predictor discrepancy (X1 - X0 W(V))'(X1 - X0 W(V)).
  Predictors,
};

/// Which predictors enter the synthetic-control fit. Unset fields take the
/// defaults: every numeric covariate, outcome lags at every other pre-period
/// year starting from the first year, and the first ceil(n_pre / 2)
/// pre-period years as the training window.
struct PredictorSpec {
  std::optional<std::vector<std::string>> covariates;
  std::optional<std::vector<int>> lag_years;
  std::optional<int> training_years;
};

struct SynthOptions {
  OuterObjective objective = OuterObjective::ValidationOutcomes;
  int evaluation_budget = 2000;
  int random_starts = 5;
  std::uint64_t seed = 0;
  /// Pre-period RMSE above which the fit is flagged as outside the donor hull.
  double hull_rmse_threshold = 0.1;
  int qp_max_iterations = 10000;
  double qp_kkt_tolerance = 1e-9;
};

struct SynthProblem {
  RegionId treated;
  std::vector<RegionId> donors;
  std::vector<std::string> predictors;
  /// Standardized with the pooled mean / sd over treated and donors.
  Eigen::VectorXd x1;
  Eigen::MatrixXd x0;  // K x J
  /// Unstandardized predictor values, for balance tables.
  Eigen::VectorXd x1_raw;
  Eigen::MatrixXd x0_raw;
  std::vector<int> pre_years;
  Eigen::VectorXd y1_pre;
  Eigen::MatrixXd y0_pre;  // pre-years x J
  std::vector<int> training_years;
  std::vector<int> validation_years;

  Eigen::Index n_predictors() const { return x1.size(); }
  Eigen::Index n_donors() const { return x0.cols(); }
  /// Throws InvalidConfig when dimensions or the year partition are wrong.
  void validate() const;
};

struct DonorWeights {
  std::vector<std::string> donors;
  std::vector<double> weights;

  /// (donor, weight) pairs by descending weight, ties by donor code.
  std::vector<std::pair<std::string, double>> sorted() const;
  double weight_of(const std::string& donor) const;
};

struct PredictorWeights {
  std::vector<std::string> predictors;
  std::vector<double> diag;

  static PredictorWeights uniform(const std::vector<std::string>& names);
};

struct SimplexQpResult {
  Eigen::VectorXd w;
  /// ||A w - b||^2 at the solution.
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  /// Objective of the (ridge-regularized) problem after every iterate.
  std::vector<double> trace;
  std::vector<Eigen::Index> support;
};

/// Minimizes ||A w - b||^2 over the unit simplex with a primal active-set
/// method. A ridge of 1e-10 times the mean squared column norm makes the
/// problem strictly convex, which selects a unique solution when the donor
/// hull is degenerate. `warm_support` seeds the
/// initial free set.
SimplexQpResult solve_simplex_qp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, int max_iterations = 10000,
                                 const std::vector<Eigen::Index>* warm_support = nullptr);

struct InnerSolution {
  DonorWeights weights;
  double objective = 0.0;  // (X1 - X0 W)' V (X1 - X0 W)
  SimplexQpResult qp;
};

/// W(V): V-weighted predictor fit over the unit simplex. Throws
/// NumericalFailure when the KKT residual exceeds the tolerance.
InnerSolution solve_w_given_v(const SynthProblem& prob, const PredictorWeights& v, const SynthOptions& opts = {},
                              const std::vector<Eigen::Index>* warm_support = nullptr);

struct OuterSolution {
  PredictorWeights v;
  InnerSolution inner;
  double outer_objective = 0.0;
  double uniform_objective = 0.0;
  int evaluations = 0;
};

/// Outer search over trace-one diagonal V (softmax-parameterized Nelder-Mead,
/// multistart from uniform V and `random_starts` seeded near-vertices,
/// after scoring uniform V and every exact vertex,
/// sharing `evaluation_budget`).
OuterSolution solve_v(const SynthProblem& prob, const SynthOptions& opts = {});

/// Outer objective at a given V.
double outer_objective(const SynthProblem& prob, const PredictorWeights& v, const SynthOptions& opts = {});

struct PredictorBalance {
  std::string name;
  double treated = 0.0;
  double synthetic = 0.0;
};

struct SynthSolution {
  RegionId treated;
  OutcomeKind outcome;
  int t0 = 0;
  DonorWeights weights;
  PredictorWeights v;
  YearSeries observed;
  YearSeries synthetic_path;
  GapSeries gaps;
  double rmse_pre = 0.0;
  double rmse_post = 0.0;
  double inner_objective = 0.0;
  double outer_objective = 0.0;
  std::vector<PredictorBalance> balance;
  std::vector<std::string> warnings;
};

/// Builds the synthetic-control problem for one treated unit. Without an
/// explicit donor list the donors are all untreated regions. Donors are held
/// in region-code order whatever order they are passed in.
SynthProblem build_problem(const PanelDataset& ds, std::size_t treated, std::size_t outcome, const PredictorSpec& spec,
                           const std::vector<std::size_t>* donors = nullptr);

/// Nested W/V fit followed by the full-period synthetic path and gaps.
SynthSolution fit_synth(const PanelDataset& ds, std::size_t treated, std::size_t outcome, const PredictorSpec& spec,
                        const SynthOptions& opts = {}, const std::vector<std::size_t>* donors = nullptr);

struct AveragePath {
  OutcomeKind outcome;
  int t0 = 0;
  std::size_t n_units = 0;
  YearSeries mean_gap;
  /// Mean of the average path over post-treatment years (ATET).
  double atet = 0.0;
};

AveragePath average_treatment_path(std::span<const SynthSolution> solutions);

struct DonorFrequency {
  double threshold = 0.01;
  /// donor -> number of treated units weighting it above the threshold;
  /// ordered by count (descending) then code.
  std::vector<std::pair<std::string, int>> counts;
  /// Per treated unit: code and its weight table above the threshold.
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>> tables;
};

DonorFrequency donor_frequency(std::span<const SynthSolution> solutions, double threshold = 0.01);

}  // namespace qualsynth
