#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "qualsynth/panel.hpp"
#include "qualsynth/rng.hpp"

namespace qualsynth {

struct SamplerConfig {
  int iterations = 12500;
  int burn_in = 2500;
  double target_acceptance = 0.25;
  double band_lower = 0.20;
  double band_upper = 0.40;
  double proposal_df = 5.0;
  std::uint64_t seed = 0;
  int adaptation_window = 100;
  double initial_step = 1.0;
  /// Coverage of the reported credible interval.
  double interval_level = 0.95;

  /// Throws InvalidConfig when an invariant is violated.
  void validate() const;
};

/// Unnormalized log target. Values outside [lower, upper] have zero density.
struct TargetDensity {
  std::function<double(double)> log_density;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  double operator()(double theta) const;
};

/// Gaussian location likelihood under the flat (Jeffreys) location prior:
/// log pi(theta) = -(theta - residual_obs)^2 / (2 obs_scale^2).
TargetDensity jeffreys_target(double residual_obs, double obs_scale);

struct ChainResult {
  std::vector<double> draws;  // every iteration, burn-in included
  int burn_in = 0;
  double acceptance_rate = 0.0;         // after burn-in
  double burn_in_acceptance_rate = 0.0;
  double final_step = 0.0;

  std::span<const double> kept() const {
    return std::span<const double>(draws).subspan(static_cast<std::size_t>(burn_in));
  }
};

struct PosteriorSummary {
  double mean = 0.0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double acceptance_rate = 0.0;
  double ess = 0.0;
};

/// Single-coordinate random-walk Metropolis kernel with a Student-t proposal.
/// The step size is adapted by Robbins-Monro on log scale while `adapt` is
/// set and is frozen otherwise.
class RandomWalkKernel {
 public:
  RandomWalkKernel(const TargetDensity* target, double init, const SamplerConfig& cfg);

  /// One Metropolis step; returns whether the proposal was accepted.
  bool step(Rng& rng, bool adapt);

  double state() const { return state_; }
  double log_density() const { return log_density_; }
  double step_size() const { return std::exp(log_step_); }
  /// True once any proposal with finite log-density has been seen.
  bool saw_finite_proposal() const { return saw_finite_; }

 private:
  const TargetDensity* target_;
  double state_;
  double log_density_;
  double log_step_;
  double target_acceptance_;
  double window_;
  std::student_t_distribution<double> proposal_;
  bool saw_finite_ = false;
};

/// Adaptive random-walk Metropolis-Hastings chain of cfg.iterations draws.
/// Deterministic given cfg.seed.
ChainResult mh_chain(const TargetDensity& target, double init, const SamplerConfig& cfg);

/// Initial-positive-sequence (Geyer) effective sample size, capped at n.
double effective_sample_size(std::span<const double> draws);

/// Mean, median and equal-tailed interval of the kept draws.
PosteriorSummary summarize(std::span<const double> kept, double acceptance_rate, double level);

/// Type-7 (linear interpolation) empirical quantile of unsorted data.
double quantile(std::vector<double> data, double p);

struct SmoothingOptions {
  /// obs_scale = scale_factor * cross-regional sd of the year's residuals.
  double scale_factor = 0.5;
  /// Lower bound on obs_scale, so a perfectly fitted cross-section still
  /// yields a proper target.
  double min_scale = 1e-8;
  /// Overrides the data-driven scale when positive.
  double fixed_scale = 0.0;
  unsigned threads = 0;
};

struct PosteriorCell {
  std::size_t region = 0;
  int year = 0;
  double observation = 0.0;
  double obs_scale = 0.0;
  double final_step = 0.0;
  PosteriorSummary summary;
};

struct SmoothedOutcome {
  OutcomeKind outcome;
  std::vector<RegionId> regions;
  YearRange years;
  /// Cells in [region][year] order.
  std::vector<PosteriorCell> cells;

  const PosteriorCell& cell(std::size_t region, int year) const;
  YearSeries mean_series(std::size_t region) const;
  YearSeries median_series(std::size_t region) const;
};

/// One chain per (outcome, year): every region is an independent coordinate
/// updated once per iteration. Each year draws from its own substream keyed
/// by (seed, outcome, year).
///
/// `observations` holds one series per region over a common year range.
SmoothedOutcome smooth_panel(const OutcomeKind& outcome, const std::vector<RegionId>& regions,
                             const std::vector<YearSeries>& observations, const SamplerConfig& cfg,
                             const SmoothingOptions& opts = {});

/// Total Metropolis iterations spent on one region block.
long long total_iterations(const SamplerConfig& cfg, int n_outcomes, int n_years);

}  // namespace qualsynth
