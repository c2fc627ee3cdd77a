#pragma once

#include <string>
#include <utility>
#include <vector>

#include "qualsynth/panel.hpp"

namespace qualsynth {

struct ResidualModel {
  int year = 0;
  OutcomeKind outcome;
  double intercept = 0.0;
  /// Retained covariates with coefficients on the original (unstandardized)
  /// scale, in input order.
  std::vector<std::pair<std::string, double>> coefficients;
  /// Covariate columns dropped as collinear, in input order.
  std::vector<std::string> dropped;
  double r_squared = 0.0;
  int n_obs = 0;
};

struct ResidualSeries {
  RegionId region;
  OutcomeKind outcome;
  YearSeries observed;
  YearSeries predicted;
  YearSeries values;  // observed - predicted
};

struct QualitySeries {
  RegionId region;
  OutcomeKind outcome;
  YearSeries values;
};

/// Named regressor columns (numeric covariates plus one-hot climate zones
/// with the most frequent zone omitted) for every region of the panel.
struct DesignColumns {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;  // [column][region]
};

DesignColumns design_columns(const PanelDataset& ds);

/// Reciprocal-condition threshold below which a standardized column is
/// treated as collinear with those already retained.
inline constexpr double kCollinearityRcond = 1e-10;

struct CrossSectionFit {
  ResidualModel model;
  std::vector<double> predicted;  // per row
};

/// OLS of y on an intercept plus the given columns, with collinear columns
/// dropped greedily in input order.
CrossSectionFit fit_least_squares(const std::vector<double>& y, const DesignColumns& design);

/// Per-year cross-sectional regression of one outcome on the geographic
/// covariates, pooling treated and donor regions.
ResidualModel fit_cross_section(const PanelDataset& ds, const OutcomeKind& outcome, int year);

struct Residualization {
  OutcomeKind outcome;
  std::vector<ResidualModel> models;  // one per year
  std::vector<ResidualSeries> series;  // one per region, dataset order
};

/// Residual = observed - predicted for every region-year. Positive residuals
/// mark quality above the geographically expected level.
Residualization residualize(const PanelDataset& ds, const OutcomeKind& outcome);

/// Q = q + e pointwise.
QualitySeries recompose(const YearSeries& aggregate, const ResidualSeries& resid);

}  // namespace qualsynth
