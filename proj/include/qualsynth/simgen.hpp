#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qualsynth/panel.hpp"

namespace qualsynth {

/// Latent factor data-generating process:
///   q_jt = delta_t + lambda_t' mu_j + eps_jt + alpha_t D_jt
/// Factor 0 is fixed at 1, so mu_j0 acts as a region effect. Treated loadings
/// and continuous covariates are convex combinations of a few donors.
struct DgpConfig {
  int n_treated = 26;
  int n_donors = 60;
  int first_year = 1996;
  int n_years = 25;
  int t0 = 2007;
  int n_outcomes = 1;
  int n_factors = 3;
  double factor_scale = 0.1;
  double loading_scale = 1.0;
  double noise_sd = 0.05;
  /// post-year -> alpha_t; missing years have no effect.
  std::map<int, double> planted_effect;
  /// 0 makes covariates independent of the loadings; 1 makes them exact
  /// linear functions of the loadings.
  double covariate_link = 0.5;
  /// Upper bound on the donors mixed into each treated unit; only donors
  /// sharing its capital and landlocked flags are eligible.
  int donors_per_treated = 3;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig.
  void validate() const;
  int last_year() const { return first_year + n_years - 1; }
  /// Sets alpha_t = value for every post-treatment year.
  void set_constant_effect(double value);
};

struct TreatedTruth {
  std::string region;
  std::vector<std::pair<std::string, double>> donor_weights;
};

struct GroundTruth {
  DgpConfig config;
  std::vector<TreatedTruth> treated;
  /// [outcome][region][factor]
  std::vector<std::vector<std::vector<double>>> loadings;
  /// [outcome][factor][year]
  std::vector<std::vector<std::vector<double>>> factors;
  /// [outcome][year]
  std::vector<std::vector<double>> delta;
};

struct SimulatedPanel {
  PanelDataset panel;
  GroundTruth truth;
};

SimulatedPanel generate(const DgpConfig& cfg);

std::string truth_to_json(const GroundTruth& truth);
void write_truth(const GroundTruth& truth, const std::filesystem::path& path);

/// Parses the DgpConfig fields present in a JSON object; absent fields keep
/// their defaults. `planted_effect` may be a number (constant post-period
/// effect) or an object keyed by year.
DgpConfig dgp_from_json(std::string_view json);
std::string dgp_to_json(const DgpConfig& cfg);

}  // namespace qualsynth
