#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qualsynth/panel.hpp"
#include "qualsynth/synth.hpp"

namespace qualsynth {

/// Pre/post fit of one gap series. `ratio` is the post-period mean squared
/// gap over the pre-period mean squared gap (squares, not roots).
struct FitDiagnostics {
  double rmse_pre = 0.0;
  double rmse_post = 0.0;
  double ratio = 0.0;
};

FitDiagnostics fit_diagnostics(const GapSeries& gaps, int t0);

/// Share of all J + 1 units (treated included) whose ratio is at least the
/// treated ratio. Always a multiple of 1 / (J + 1).
double exact_p(const FitDiagnostics& treated, std::span<const FitDiagnostics> placebos);

enum class PlaceboWeighting {
  /// pi_j proportional to 1 / max(|rmse_pre_j - rmse_pre_1|, 0.01 rmse_pre_1).
  InverseDistance,
  /// Uniform weights over placebos whose pre-period RMSE is at most
  /// `exclusion_factor` times the treated one.
  Exclusion,
};

struct WeightedP {
  double p = 0.0;
  std::vector<double> weights;  // one per placebo, summing to 1
  /// Set when the weights were undefined and the result fell back to the
  /// unweighted placebo share.
  bool fallback = false;
  std::string notice;
};

WeightedP weighted_p(const FitDiagnostics& treated, std::span<const FitDiagnostics> placebos,
                     PlaceboWeighting rule = PlaceboWeighting::InverseDistance, double exclusion_factor = 5.0);

/// For each post-treatment year, the share of the J placebos with
/// |gap| >= |treated gap|.
YearSeries per_period_p(const GapSeries& treated, std::span<const GapSeries> placebos, int t0);

struct Bounds {
  int year = 0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Per post-treatment year, the (level/2, 1 - level/2) empirical quantiles of
/// the placebo gaps. `level` is the significance level in (0, 1].
std::vector<Bounds> invert_bounds(std::span<const GapSeries> placebo_gaps, double level, int t0);

struct PlaceboBudget {
  /// Random donor subsets of size n_treated whose placebo gaps are averaged;
  /// 0 disables subset averaging.
  std::size_t subsets = 0;
  double level = 0.05;
  PlaceboWeighting weighting = PlaceboWeighting::InverseDistance;
  double exclusion_factor = 5.0;
  std::size_t min_donors = 5;
  /// Whether the real treated units join each placebo's donor pool. When
  /// false a placebo draws only on the other untreated regions.
  bool treated_in_donor_pool = true;
  unsigned threads = 0;
};

struct TreatedInference {
  RegionId region;
  FitDiagnostics stats;
  double p_rmse_J1 = 0.0;   // exact, over J + 1
  double p_weighted = 0.0;
  YearSeries p_periods_J;   // per post-year, over J
};

struct SubsetAverages {
  std::size_t subset_size = 0;
  std::size_t sampled = 0;
  /// sampled x post-treatment years.
  std::size_t placebo_averages = 0;
  /// log10 of C(J, subset_size).
  double log10_possible_subsets = 0.0;
  /// Per post-year share of subset averages with |avg| >= |treated avg|.
  YearSeries p_periods;
  std::vector<Bounds> bounds;
};

struct PlaceboInference {
  OutcomeKind outcome;
  int t0 = 0;
  std::vector<GapSeries> treated_gaps;
  std::vector<GapSeries> placebo_gaps;
  std::vector<FitDiagnostics> placebo_stats;
  std::vector<TreatedInference> treated;
  /// Average treated gap and its per-year p-value against individual
  /// placebos.
  YearSeries average_gap;
  YearSeries average_p_periods_J;
  std::vector<Bounds> bounds;
  SubsetAverages subsets;
  std::vector<std::string> failed_placebos;
  std::vector<std::string> warnings;
};

/// In-space placebos: every donor is treated in turn, with the real treated
/// units moved into its donor pool unless the budget says otherwise. Failed placebo fits are recorded in
/// `failed_placebos` and excluded.
PlaceboInference placebo_run(const PanelDataset& ds, std::size_t outcome, const PredictorSpec& spec,
                             const SynthOptions& opts, const PlaceboBudget& budget,
                             std::span<const SynthSolution> treated_solutions = {});

/// Inference from already-estimated gaps (no fitting).
PlaceboInference infer_from_gaps(const OutcomeKind& outcome, int t0, std::vector<GapSeries> treated_gaps,
                                 std::vector<GapSeries> placebo_gaps, const PlaceboBudget& budget,
                                 std::uint64_t seed = 0);

struct DidResult {
  double coefficient = 0.0;
  double se_cluster = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  std::size_t n_obs = 0;
  std::size_t n_treated = 0;
  std::size_t n_control = 0;
  double r2_within = 0.0;
  double region_fe_p = 0.0;
  double time_fe_p = 0.0;
  /// True when the residuals vanish and the standard error is zero.
  bool degenerate = false;
};

/// Two-way fixed-effects regression of stacked gaps on treated x post, with
/// region-clustered standard errors and a t(G-1) confidence interval.
DidResult placebo_did(std::span<const GapSeries> treated_gaps, std::span<const GapSeries> placebo_gaps, int t0);

struct EqualityTestResult {
  double delta = 0.0;
  double t_stat = 0.0;
  double t_pvalue = 1.0;
  double ks_stat = 0.0;
  double ks_pvalue = 1.0;
  std::size_t n_group_a = 0;
  std::size_t n_group_b = 0;
};

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::span<const double> a, std::span<const double> b);

/// Survival function of the Kolmogorov distribution, P(K > lambda).
double kolmogorov_survival(double lambda);

/// Mean difference with a Welch t-test, plus the two-sample KS test with the
/// asymptotic Kolmogorov p-value.
EqualityTestResult group_equality(std::span<const double> a, std::span<const double> b);

struct MechanismRow {
  std::string mechanism;
  double slope = 0.0;
  double intercept = 0.0;
  double correlation = 0.0;
  double t_stat = 0.0;
};

struct MechanismScreen {
  std::vector<double> pc1;        // per region
  std::vector<double> loadings;   // per outcome
  double explained_share = 0.0;
  std::vector<MechanismRow> rows;
};

/// First principal component of the standardized per-outcome gaps, regressed
/// on each mechanism variable separately.
MechanismScreen mechanism_screen(const std::vector<std::pair<std::string, std::vector<double>>>& gaps_by_outcome,
                                 const std::vector<std::pair<std::string, std::vector<double>>>& mechanisms);

}  // namespace qualsynth
