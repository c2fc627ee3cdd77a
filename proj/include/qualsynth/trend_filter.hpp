#pragma once

#include "qualsynth/panel.hpp"

namespace qualsynth {

struct TrendDecomposition {
  YearSeries trend;
  YearSeries cycle;
  double phi = 0.0;
};

/// Hodrick-Prescott decomposition: the trend minimizes
///   sum (y_t - tau_t)^2 + phi * sum_{t=2}^{T-1} (tau_{t+1} - 2 tau_t + tau_{t-1})^2,
/// i.e. solves (I + phi D'D) tau = y exactly. cycle = y - trend.
///
/// Requires at least 3 observations and phi >= 0.
TrendDecomposition hp_filter(const YearSeries& series, double phi);

/// Ravn-Uhlig rule: phi scales with the fourth power of the observation
/// frequency relative to quarterly data (1600 at ratio 1).
double ravn_uhlig_phi(double frequency_ratio);

/// 1600 / 4^4 = 6.25 for annual observations.
double annual_phi();

}  // namespace qualsynth
