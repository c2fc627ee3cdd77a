#include "qualsynth/residualizer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "qualsynth/error.hpp"

namespace qualsynth {

DesignColumns design_columns(const PanelDataset& ds) {
  DesignColumns d;
  const std::size_t n = ds.n_regions();
  for (std::size_t k = 0; k < ds.covariate_names().size(); ++k) {
    d.names.push_back(ds.covariate_names()[k]);
    std::vector<double> col(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = ds.covariates()[r].values[k];
    d.columns.push_back(std::move(col));
  }
  if (ds.has_climate_zone()) {
    std::map<std::string, int> counts;
    for (const auto& c : ds.covariates()) ++counts[c.climate_zone];
    // Most frequent zone is the omitted baseline; ties go to the first name.
    std::string baseline;
    int best = -1;
    for (const auto& [zone, count] : counts)
      if (count > best) {
        best = count;
        baseline = zone;
      }
    for (const auto& [zone, count] : counts) {
      if (zone == baseline) continue;
      d.names.push_back(std::string(covariate::kClimateZone) + "=" + zone);
      std::vector<double> col(n);
      for (std::size_t r = 0; r < n; ++r) col[r] = ds.covariates()[r].climate_zone == zone ? 1.0 : 0.0;
      d.columns.push_back(std::move(col));
    }
  }
  return d;
}

CrossSectionFit fit_least_squares(const std::vector<double>& y, const DesignColumns& design) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n < 2) throw Error(ErrorCode::RankDeficient, "regression needs at least 2 observations, got " + std::to_string(n));

  // Standardized candidate columns.
  std::vector<Eigen::VectorXd> std_cols;
  std::vector<double> means, sds;
  for (const auto& col : design.columns) {
    if (static_cast<Eigen::Index>(col.size()) != n)
      throw Error(ErrorCode::MissingCell, "design column length does not match the outcome");
    Eigen::Map<const Eigen::VectorXd> x(col.data(), n);
    const double mean = x.mean();
    const double sd = std::sqrt((x.array() - mean).square().sum() / static_cast<double>(n));
    means.push_back(mean);
    sds.push_back(sd);
    std_cols.push_back(sd > 0.0 ? Eigen::VectorXd((x.array() - mean) / sd) : Eigen::VectorXd::Zero(n));
  }

  CrossSectionFit fit;
  auto& model = fit.model;
  model.n_obs = static_cast<int>(n);
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < std_cols.size(); ++k) {
    bool keep = sds[k] > 1e-12 * (1.0 + std::abs(means[k])) && static_cast<Eigen::Index>(kept.size()) + 3 <= n;
    if (keep) {
      const auto p = static_cast<Eigen::Index>(kept.size()) + 2;
      Eigen::MatrixXd z(n, p);
      z.col(0).setOnes();
      for (std::size_t j = 0; j < kept.size(); ++j) z.col(static_cast<Eigen::Index>(j) + 1) = std_cols[kept[j]];
      z.col(p - 1) = std_cols[k];
      const Eigen::MatrixXd xtx = z.transpose() * z;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xtx, Eigen::EigenvaluesOnly);
      const double lmax = eig.eigenvalues().maxCoeff();
      const double lmin = eig.eigenvalues().minCoeff();
      keep = lmax > 0.0 && lmin / lmax >= kCollinearityRcond;
    }
    if (keep)
      kept.push_back(k);
    else
      model.dropped.push_back(design.names[k]);
  }

  const auto p = static_cast<Eigen::Index>(kept.size()) + 1;
  Eigen::MatrixXd z(n, p);
  z.col(0).setOnes();
  for (std::size_t j = 0; j < kept.size(); ++j) z.col(static_cast<Eigen::Index>(j) + 1) = std_cols[kept[j]];
  Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::VectorXd b = z.colPivHouseholderQr().solve(yv);
  const Eigen::VectorXd pred = z * b;

  model.intercept = b(0);
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const double beta = b(static_cast<Eigen::Index>(j) + 1) / sds[kept[j]];
    model.coefficients.emplace_back(design.names[kept[j]], beta);
    model.intercept -= beta * means[kept[j]];
  }
  const double ybar = yv.mean();
  const double sst = (yv.array() - ybar).square().sum();
  const double ssr = (yv - pred).squaredNorm();
  // A constant outcome has no variance to explain.
  model.r_squared = sst > 0.0 ? std::clamp(1.0 - ssr / sst, 0.0, 1.0) : 0.0;
  fit.predicted.assign(pred.data(), pred.data() + n);
  return fit;
}

ResidualModel fit_cross_section(const PanelDataset& ds, const OutcomeKind& outcome, int year) {
  if (!ds.years().contains(year))
    throw Error(ErrorCode::YearMismatch, "year " + std::to_string(year) + " outside panel range");
  const auto o = ds.outcome_index(outcome);
  auto fit = fit_least_squares(ds.cross_section(o, year), design_columns(ds));
  fit.model.year = year;
  fit.model.outcome = outcome;
  return fit.model;
}

Residualization residualize(const PanelDataset& ds, const OutcomeKind& outcome) {
  const auto o = ds.outcome_index(outcome);
  const auto design = design_columns(ds);
  const auto& years = ds.years();
  Residualization out;
  out.outcome = outcome;
  for (std::size_t r = 0; r < ds.n_regions(); ++r) {
    ResidualSeries s;
    s.region = ds.regions()[r];
    s.outcome = outcome;
    s.observed = ds.series(r, o);
    s.predicted = YearSeries(years.first, std::vector<double>(ds.n_years()));
    s.values = YearSeries(years.first, std::vector<double>(ds.n_years()));
    out.series.push_back(std::move(s));
  }
  for (int year = years.first; year <= years.last; ++year) {
    CrossSectionFit fit;
    try {
      fit = fit_least_squares(ds.cross_section(o, year), design);
    } catch (const Error& e) {
      throw Error(e.code(), "outcome '" + outcome.name + "', year " + std::to_string(year) + ": " + e.what());
    }
    fit.model.year = year;
    fit.model.outcome = outcome;
    const auto yi = static_cast<std::size_t>(year - years.first);
    for (std::size_t r = 0; r < ds.n_regions(); ++r) {
      auto& s = out.series[r];
      s.predicted.values[yi] = fit.predicted[r];
      s.values.values[yi] = s.observed.values[yi] - fit.predicted[r];
    }
    out.models.push_back(std::move(fit.model));
  }
  return out;
}

QualitySeries recompose(const YearSeries& aggregate, const ResidualSeries& resid) {
  if (aggregate.range() != resid.values.range())
    throw Error(ErrorCode::YearMismatch, "aggregate and residual series cover different years");
  QualitySeries q{resid.region, resid.outcome, aggregate};
  for (std::size_t i = 0; i < q.values.size(); ++i) q.values.values[i] += resid.values.values[i];
  return q;
}

}  // namespace qualsynth
